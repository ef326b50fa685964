#pragma once

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace fdnet::ag {

using Shape = std::vector<int>;

std::size_t numel(const Shape& s);
std::string shape_str(const Shape& s);

/// Tensor storage. SIMD-aligned so that vectorised products take the same
/// code path (and summation order) on every run.
using Buffer = std::vector<double, Eigen::aligned_allocator<double>>;

/// One value in the computation graph. Interior nodes own their inputs so
/// the graph stays alive until backward() releases it.
struct Node {
    Shape shape;
    Buffer value;
    Buffer grad;  // empty until first accumulation
    std::vector<std::shared_ptr<Node>> inputs;
    std::function<void(Node&)> backward_fn;
    bool requires_grad = false;
    bool leaf = true;

    double* grad_buffer();
};

class Tensor {
  public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

    static Tensor zeros(Shape shape);
    static Tensor constant(Shape shape, std::vector<double> values);
    /// Leaf that accumulates gradients across backward() calls.
    static Tensor parameter(Shape shape, std::vector<double> values);

    explicit operator bool() const { return static_cast<bool>(node_); }
    const Shape& shape() const { return node_->shape; }
    int dim(std::size_t i) const { return node_->shape.at(i); }
    std::size_t numel() const { return node_->value.size(); }
    std::span<const double> values() const { return node_->value; }
    std::span<double> mutable_values() { return node_->value; }
    /// Zero-length span when no gradient has reached this tensor.
    std::span<const double> grad() const { return node_->grad; }
    void zero_grad();
    bool requires_grad() const { return node_->requires_grad; }
    double item() const;
    Node* node() const { return node_.get(); }
    const std::shared_ptr<Node>& shared() const { return node_; }

  private:
    std::shared_ptr<Node> node_;
};

/// Reverse pass from a scalar. Interior gradients and graph edges are freed
/// as they are consumed; parameter gradients accumulate.
void backward(const Tensor& scalar);

bool grad_enabled();

/// Disables graph recording for its lifetime (inference).
class NoGradGuard {
  public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

  private:
    bool previous_;
};

// ---- elementwise -------------------------------------------------------
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor gelu(const Tensor& a);
Tensor sum(const Tensor& a);

// ---- shape -------------------------------------------------------------
Tensor reshape(const Tensor& a, Shape shape);
/// Concatenation along the leading axis (channels of C×H×W, rows of N×D).
Tensor concat(const std::vector<Tensor>& parts);
Tensor transpose(const Tensor& a);  // 2D
Tensor slice_cols(const Tensor& a, int start, int len);
Tensor concat_cols(const std::vector<Tensor>& parts);

// ---- dense -------------------------------------------------------------
Tensor matmul(const Tensor& a, const Tensor& b);  // [M,K]x[K,N]
/// x[N,in] · w[in,out] + b[out] (bias optional).
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b = {});
Tensor softmax_rows(const Tensor& x);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

// ---- spatial (C×H×W) ----------------------------------------------------
/// Same-padded stride-1 convolution; w is [O,C,k,k] with odd k, b optional [O].
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b = {});
Tensor max_pool2(const Tensor& x);
Tensor group_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, int groups, double eps = 1e-5);
/// Bilinear resampling with half-pixel centres (align_corners = false).
Tensor resize_bilinear(const Tensor& x, int out_h, int out_w);
/// Global average pool [C,H,W] -> [C].
Tensor channel_mean(const Tensor& x);
/// x[C,H,W] * g[C] broadcast over space.
Tensor scale_channels(const Tensor& x, const Tensor& g);
/// [1,H,W] -> [N, p*p] non-overlapping patches in raster order.
Tensor patchify(const Tensor& x, int patch);

// ---- loss --------------------------------------------------------------
/// w_dice * (1 - softDice(sigmoid(logits), target)) + w_bce * mean BCE, with
/// smoothing eps added to the Dice numerator and denominator. target must
/// have logits.numel() entries.
Tensor dice_bce_loss(const Tensor& logits, std::span<const double> target, double w_dice, double w_bce,
                     double eps = 1.0);

}  // namespace fdnet::ag
