#include "fdnet/autograd.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <unordered_set>

#include "fdnet/error.hpp"

namespace fdnet::ag {
namespace {

using MatR = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapR = Eigen::Map<MatR>;
using CMapR = Eigen::Map<const MatR>;

thread_local bool g_grad_enabled = true;

using BackwardFn = std::function<void(Node&)>;


// Builds a result node; the backward closure is attached only when some
// input requires a gradient and recording is on.
Tensor make_result(Shape shape, Buffer value, std::vector<Tensor> inputs, BackwardFn fn) {
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->value = std::move(value);
    node->leaf = false;
    bool track = g_grad_enabled;
    if (track) {
        track = false;
        for (const auto& t : inputs) track = track || (t && t.requires_grad());
    }
    if (track) {
        node->requires_grad = true;
        for (auto& t : inputs) node->inputs.push_back(t ? t.shared() : nullptr);
        node->backward_fn = std::move(fn);
    }
    return Tensor(std::move(node));
}

// Gradient buffer of input i, or nullptr when it needs none.
double* in_grad(Node& n, std::size_t i) {
    Node* in = n.inputs[i].get();
    if (!in || !in->requires_grad) return nullptr;
    return in->grad_buffer();
}

void require(bool ok, const std::string& what) {
    if (!ok) throw DimensionError(what);
}

void require_same(const Tensor& a, const Tensor& b, const char* op) {
    require(a.shape() == b.shape(),
            std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

void require_rank(const Tensor& a, std::size_t rank, const char* op) {
    require(a.shape().size() == rank, std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                                          shape_str(a.shape()));
}

template <class F, class D>
Tensor unary(const Tensor& a, F f, D dfdx) {
    Buffer out(a.numel());
    const auto x = a.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(x[i]);
    return make_result(a.shape(), std::move(out), {a}, [dfdx](Node& n) {
        double* ga = in_grad(n, 0);
        if (!ga) return;
        const auto& x = n.inputs[0]->value;
        for (std::size_t i = 0; i < n.grad.size(); ++i) ga[i] += n.grad[i] * dfdx(x[i], n.value[i]);
    });
}

}  // namespace

std::size_t numel(const Shape& s) {
    std::size_t n = 1;
    for (int d : s) n *= static_cast<std::size_t>(d);
    return n;
}

std::string shape_str(const Shape& s) {
    std::string out;
    for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "x" : "") + std::to_string(s[i]);
    return out.empty() ? "scalar" : out;
}

double* Node::grad_buffer() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
    return grad.data();
}

Tensor Tensor::zeros(Shape shape) { return constant(shape, std::vector<double>(ag::numel(shape), 0.0)); }

Tensor Tensor::constant(Shape shape, std::vector<double> values) {
    if (values.size() != ag::numel(shape)) throw DimensionError("constant: value count does not match shape");
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->value.assign(values.begin(), values.end());
    return Tensor(std::move(node));
}

Tensor Tensor::parameter(Shape shape, std::vector<double> values) {
    Tensor t = constant(std::move(shape), std::move(values));
    t.node_->requires_grad = true;
    return t;
}

void Tensor::zero_grad() { node_->grad.clear(); }

double Tensor::item() const {
    if (numel() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape()));
    return node_->value[0];
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

void backward(const Tensor& scalar) {
    if (scalar.numel() != 1) throw DimensionError("backward() needs a scalar, got " + shape_str(scalar.shape()));
    Node* root = scalar.node();
    if (!root->requires_grad) return;

    // Iterative post-order DFS gives a topological order. Owning pointers
    // keep nodes alive while edges are released below.
    std::vector<std::shared_ptr<Node>> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<std::shared_ptr<Node>, std::size_t>> stack{{scalar.shared(), 0}};
    seen.insert(root);
    while (!stack.empty()) {
        auto& top = stack.back();
        if (top.second < top.first->inputs.size()) {
            std::shared_ptr<Node> child = top.first->inputs[top.second++];
            if (child && child->requires_grad && !child->leaf && seen.insert(child.get()).second) {
                stack.emplace_back(std::move(child), 0);
            }
        } else {
            order.push_back(std::move(top.first));
            stack.pop_back();
        }
    }

    root->grad_buffer()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = it->get();
        if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
        n->backward_fn = nullptr;
        n->inputs.clear();
        if (n != root) {
            n->grad.clear();
            n->grad.shrink_to_fit();
        }
    }
}

// ---- elementwise -------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
    require_same(a, b, "add");
    Buffer out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + b.values()[i];
    return make_result(a.shape(), std::move(out), {a, b}, [](Node& n) {
        for (std::size_t k = 0; k < 2; ++k) {
            if (double* g = in_grad(n, k)) {
                for (std::size_t i = 0; i < n.grad.size(); ++i) g[i] += n.grad[i];
            }
        }
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same(a, b, "sub");
    Buffer out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] - b.values()[i];
    return make_result(a.shape(), std::move(out), {a, b}, [](Node& n) {
        if (double* g = in_grad(n, 0)) {
            for (std::size_t i = 0; i < n.grad.size(); ++i) g[i] += n.grad[i];
        }
        if (double* g = in_grad(n, 1)) {
            for (std::size_t i = 0; i < n.grad.size(); ++i) g[i] -= n.grad[i];
        }
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same(a, b, "mul");
    Buffer out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * b.values()[i];
    return make_result(a.shape(), std::move(out), {a, b}, [](Node& n) {
        const auto& x = n.inputs[0]->value;
        const auto& y = n.inputs[1]->value;
        if (double* g = in_grad(n, 0)) {
            for (std::size_t i = 0; i < n.grad.size(); ++i) g[i] += n.grad[i] * y[i];
        }
        if (double* g = in_grad(n, 1)) {
            for (std::size_t i = 0; i < n.grad.size(); ++i) g[i] += n.grad[i] * x[i];
        }
    });
}

Tensor scale(const Tensor& a, double s) {
    return unary(a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Tensor add_scalar(const Tensor& a, double s) {
    return unary(a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Tensor relu(const Tensor& a) {
    return unary(a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& a) {
    return unary(
        a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); }, [](double, double y) { return y * (1.0 - y); });
}

Tensor gelu(const Tensor& a) {
    return unary(
        a, [](double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); },
        [](double x, double) {
            const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
            const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
            return cdf + x * pdf;
        });
}

Tensor sum(const Tensor& a) {
    double s = 0.0;
    for (double v : a.values()) s += v;
    return make_result({1}, {s}, {a}, [](Node& n) {
        if (double* g = in_grad(n, 0)) {
            const std::size_t count = n.inputs[0]->value.size();
            for (std::size_t i = 0; i < count; ++i) g[i] += n.grad[0];
        }
    });
}

// ---- shape -------------------------------------------------------------

Tensor reshape(const Tensor& a, Shape shape) {
    require(numel(shape) == a.numel(), "reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape));
    Buffer out(a.values().begin(), a.values().end());
    return make_result(std::move(shape), std::move(out), {a}, [](Node& n) {
        if (double* g = in_grad(n, 0)) {
            for (std::size_t i = 0; i < n.grad.size(); ++i) g[i] += n.grad[i];
        }
    });
}

Tensor concat(const std::vector<Tensor>& parts) {
    require(!parts.empty(), "concat: no inputs");
    Shape shape = parts[0].shape();
    require(!shape.empty(), "concat: scalar input");
    int lead = 0;
    for (const auto& p : parts) {
        require(p.shape().size() == shape.size() && std::equal(p.shape().begin() + 1, p.shape().end(), shape.begin() + 1),
                "concat: trailing shape mismatch " + shape_str(p.shape()) + " vs " + shape_str(shape));
        lead += p.dim(0);
    }
    shape[0] = lead;
    Buffer out;
    out.reserve(numel(shape));
    for (const auto& p : parts) out.insert(out.end(), p.values().begin(), p.values().end());
    return make_result(std::move(shape), std::move(out), parts, [](Node& n) {
        std::size_t offset = 0;
        for (std::size_t k = 0; k < n.inputs.size(); ++k) {
            const std::size_t len = n.inputs[k]->value.size();
            if (double* g = in_grad(n, k)) {
                for (std::size_t i = 0; i < len; ++i) g[i] += n.grad[offset + i];
            }
            offset += len;
        }
    });
}

Tensor transpose(const Tensor& a) {
    require_rank(a, 2, "transpose");
    const int r = a.dim(0), c = a.dim(1);
    Buffer out(a.numel());
    MapR(out.data(), c, r) = CMapR(a.values().data(), r, c).transpose();
    return make_result({c, r}, std::move(out), {a}, [r, c](Node& n) {
        if (double* g = in_grad(n, 0)) MapR(g, r, c) += CMapR(n.grad.data(), c, r).transpose();
    });
}

Tensor slice_cols(const Tensor& a, int start, int len) {
    require_rank(a, 2, "slice_cols");
    const int rows = a.dim(0), cols = a.dim(1);
    require(start >= 0 && len > 0 && start + len <= cols, "slice_cols: range out of bounds");
    Buffer out(static_cast<std::size_t>(rows) * len);
    MapR(out.data(), rows, len) = CMapR(a.values().data(), rows, cols).middleCols(start, len);
    return make_result({rows, len}, std::move(out), {a}, [rows, cols, start, len](Node& n) {
        if (double* g = in_grad(n, 0)) MapR(g, rows, cols).middleCols(start, len) += CMapR(n.grad.data(), rows, len);
    });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
    require(!parts.empty(), "concat_cols: no inputs");
    const int rows = parts[0].dim(0);
    int cols = 0;
    for (const auto& p : parts) {
        require_rank(p, 2, "concat_cols");
        require(p.dim(0) == rows, "concat_cols: row mismatch");
        cols += p.dim(1);
    }
    Buffer out(static_cast<std::size_t>(rows) * cols);
    MapR dst(out.data(), rows, cols);
    int at = 0;
    for (const auto& p : parts) {
        dst.middleCols(at, p.dim(1)) = CMapR(p.values().data(), rows, p.dim(1));
        at += p.dim(1);
    }
    return make_result({rows, cols}, std::move(out), parts, [rows, cols](Node& n) {
        CMapR g(n.grad.data(), rows, cols);
        int at = 0;
        for (std::size_t k = 0; k < n.inputs.size(); ++k) {
            const int w = n.inputs[k]->shape[1];
            if (double* gi = in_grad(n, k)) MapR(gi, rows, w) += g.middleCols(at, w);
            at += w;
        }
    });
}

// ---- dense -------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_rank(a, 2, "matmul");
    require_rank(b, 2, "matmul");
    const int m = a.dim(0), k = a.dim(1), nn = b.dim(1);
    require(b.dim(0) == k, "matmul: inner mismatch " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    Buffer out(static_cast<std::size_t>(m) * nn);
    MapR(out.data(), m, nn).noalias() = CMapR(a.values().data(), m, k) * CMapR(b.values().data(), k, nn);
    return make_result({m, nn}, std::move(out), {a, b}, [m, k, nn](Node& n) {
        CMapR g(n.grad.data(), m, nn);
        if (double* ga = in_grad(n, 0)) {
            MapR(ga, m, k).noalias() += g * CMapR(n.inputs[1]->value.data(), k, nn).transpose();
        }
        if (double* gb = in_grad(n, 1)) {
            MapR(gb, k, nn).noalias() += CMapR(n.inputs[0]->value.data(), m, k).transpose() * g;
        }
    });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    require_rank(x, 2, "linear");
    require_rank(w, 2, "linear");
    const int rows = x.dim(0), in = x.dim(1), out_dim = w.dim(1);
    require(w.dim(0) == in, "linear: input width " + std::to_string(in) + " vs weight " + shape_str(w.shape()));
    if (b) require(b.numel() == static_cast<std::size_t>(out_dim), "linear: bias size mismatch");
    Buffer out(static_cast<std::size_t>(rows) * out_dim);
    MapR y(out.data(), rows, out_dim);
    y.noalias() = CMapR(x.values().data(), rows, in) * CMapR(w.values().data(), in, out_dim);
    if (b) y.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(b.values().data(), out_dim);
    const bool has_bias = static_cast<bool>(b);
    std::vector<Tensor> ins{x, w};
    if (has_bias) ins.push_back(b);
    return make_result({rows, out_dim}, std::move(out), ins, [rows, in, out_dim, has_bias](Node& n) {
        CMapR g(n.grad.data(), rows, out_dim);
        if (double* gx = in_grad(n, 0)) {
            MapR(gx, rows, in).noalias() += g * CMapR(n.inputs[1]->value.data(), in, out_dim).transpose();
        }
        if (double* gw = in_grad(n, 1)) {
            MapR(gw, in, out_dim).noalias() += CMapR(n.inputs[0]->value.data(), rows, in).transpose() * g;
        }
        if (has_bias) {
            if (double* gb = in_grad(n, 2)) Eigen::Map<Eigen::RowVectorXd>(gb, out_dim) += g.colwise().sum();
        }
    });
}

Tensor softmax_rows(const Tensor& x) {
    require_rank(x, 2, "softmax_rows");
    const int rows = x.dim(0), cols = x.dim(1);
    Buffer out(x.numel());
    for (int r = 0; r < rows; ++r) {
        const double* in = x.values().data() + static_cast<std::size_t>(r) * cols;
        double* o = out.data() + static_cast<std::size_t>(r) * cols;
        const double mx = *std::max_element(in, in + cols);
        double s = 0.0;
        for (int c = 0; c < cols; ++c) s += (o[c] = std::exp(in[c] - mx));
        for (int c = 0; c < cols; ++c) o[c] /= s;
    }
    return make_result(x.shape(), std::move(out), {x}, [rows, cols](Node& n) {
        double* gx = in_grad(n, 0);
        if (!gx) return;
        for (int r = 0; r < rows; ++r) {
            const std::size_t base = static_cast<std::size_t>(r) * cols;
            double dot = 0.0;
            for (int c = 0; c < cols; ++c) dot += n.grad[base + c] * n.value[base + c];
            for (int c = 0; c < cols; ++c) gx[base + c] += n.value[base + c] * (n.grad[base + c] - dot);
        }
    });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    require_rank(x, 2, "layer_norm");
    const int rows = x.dim(0), d = x.dim(1);
    require(gamma.numel() == static_cast<std::size_t>(d) && beta.numel() == static_cast<std::size_t>(d),
            "layer_norm: affine size mismatch");
    auto xhat = std::make_shared<Buffer>(x.numel());
    auto inv_std = std::make_shared<Buffer>(rows);
    Buffer out(x.numel());
    for (int r = 0; r < rows; ++r) {
        const std::size_t base = static_cast<std::size_t>(r) * d;
        double mean = 0.0;
        for (int c = 0; c < d; ++c) mean += x.values()[base + c];
        mean /= d;
        double var = 0.0;
        for (int c = 0; c < d; ++c) var += (x.values()[base + c] - mean) * (x.values()[base + c] - mean);
        var /= d;
        const double is = 1.0 / std::sqrt(var + eps);
        (*inv_std)[r] = is;
        for (int c = 0; c < d; ++c) {
            const double h = (x.values()[base + c] - mean) * is;
            (*xhat)[base + c] = h;
            out[base + c] = gamma.values()[c] * h + beta.values()[c];
        }
    }
    return make_result(x.shape(), std::move(out), {x, gamma, beta}, [rows, d, xhat, inv_std](Node& n) {
        const auto& gam = n.inputs[1]->value;
        double* gx = in_grad(n, 0);
        double* gg = in_grad(n, 1);
        double* gb = in_grad(n, 2);
        for (int r = 0; r < rows; ++r) {
            const std::size_t base = static_cast<std::size_t>(r) * d;
            double sum_dh = 0.0, sum_dh_h = 0.0;
            for (int c = 0; c < d; ++c) {
                const double dy = n.grad[base + c];
                const double h = (*xhat)[base + c];
                if (gg) gg[c] += dy * h;
                if (gb) gb[c] += dy;
                const double dh = dy * gam[c];
                sum_dh += dh;
                sum_dh_h += dh * h;
            }
            if (!gx) continue;
            const double is = (*inv_std)[r];
            for (int c = 0; c < d; ++c) {
                const double dh = n.grad[base + c] * gam[c];
                gx[base + c] += is * (dh - sum_dh / d - (*xhat)[base + c] * sum_dh_h / d);
            }
        }
    });
}

// ---- spatial -----------------------------------------------------------

namespace {

// cols[(c*k + i)*k + j][y*W + x] = x[c][y+i-pad][x+j-pad] (zero outside).
void im2col(const double* x, int channels, int h, int w, int k, double* cols) {
    const int pad = k / 2;
    const std::size_t hw = static_cast<std::size_t>(h) * w;
    for (int c = 0; c < channels; ++c) {
        for (int i = 0; i < k; ++i) {
            for (int j = 0; j < k; ++j) {
                double* row = cols + (static_cast<std::size_t>(c) * k * k + i * k + j) * hw;
                const double* plane = x + static_cast<std::size_t>(c) * hw;
                for (int y = 0; y < h; ++y) {
                    const int sy = y + i - pad;
                    double* dst = row + static_cast<std::size_t>(y) * w;
                    if (sy < 0 || sy >= h) {
                        std::fill(dst, dst + w, 0.0);
                        continue;
                    }
                    const double* src = plane + static_cast<std::size_t>(sy) * w;
                    const int off = j - pad;
                    for (int xx = 0; xx < w; ++xx) {
                        const int sx = xx + off;
                        dst[xx] = (sx >= 0 && sx < w) ? src[sx] : 0.0;
                    }
                }
            }
        }
    }
}

void col2im_add(const double* cols, int channels, int h, int w, int k, double* gx) {
    const int pad = k / 2;
    const std::size_t hw = static_cast<std::size_t>(h) * w;
    for (int c = 0; c < channels; ++c) {
        for (int i = 0; i < k; ++i) {
            for (int j = 0; j < k; ++j) {
                const double* row = cols + (static_cast<std::size_t>(c) * k * k + i * k + j) * hw;
                double* plane = gx + static_cast<std::size_t>(c) * hw;
                for (int y = 0; y < h; ++y) {
                    const int sy = y + i - pad;
                    if (sy < 0 || sy >= h) continue;
                    const double* src = row + static_cast<std::size_t>(y) * w;
                    double* dst = plane + static_cast<std::size_t>(sy) * w;
                    const int off = j - pad;
                    for (int xx = 0; xx < w; ++xx) {
                        const int sx = xx + off;
                        if (sx >= 0 && sx < w) dst[sx] += src[xx];
                    }
                }
            }
        }
    }
}

// Separable bilinear weights for one axis.
struct Axis {
    std::vector<int> i0, i1;
    Buffer w1;
};

Axis bilinear_axis(int in, int out) {
    Axis a;
    a.i0.resize(out);
    a.i1.resize(out);
    a.w1.resize(out);
    const double ratio = static_cast<double>(in) / out;
    for (int o = 0; o < out; ++o) {
        double src = (o + 0.5) * ratio - 0.5;
        if (src < 0.0) src = 0.0;
        int i0 = static_cast<int>(std::floor(src));
        if (i0 > in - 1) i0 = in - 1;
        a.i0[o] = i0;
        a.i1[o] = std::min(i0 + 1, in - 1);
        a.w1[o] = src - i0;
    }
    return a;
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b) {
    require_rank(x, 3, "conv2d");
    require_rank(w, 4, "conv2d");
    const int cin = x.dim(0), h = x.dim(1), wd = x.dim(2);
    const int cout = w.dim(0), k = w.dim(2);
    require(w.dim(1) == cin && w.dim(3) == k && k % 2 == 1,
            "conv2d: weight " + shape_str(w.shape()) + " incompatible with input " + shape_str(x.shape()));
    if (b) require(b.numel() == static_cast<std::size_t>(cout), "conv2d: bias size mismatch");
    const int patch = cin * k * k;
    const std::size_t hw = static_cast<std::size_t>(h) * wd;

    Buffer out(static_cast<std::size_t>(cout) * hw);
    MapR y(out.data(), cout, static_cast<Eigen::Index>(hw));
    CMapR wm(w.values().data(), cout, patch);
    if (k == 1) {
        y.noalias() = wm * CMapR(x.values().data(), cin, static_cast<Eigen::Index>(hw));
    } else {
        Buffer cols(static_cast<std::size_t>(patch) * hw);
        im2col(x.values().data(), cin, h, wd, k, cols.data());
        y.noalias() = wm * CMapR(cols.data(), patch, static_cast<Eigen::Index>(hw));
    }
    if (b) y.colwise() += Eigen::Map<const Eigen::VectorXd>(b.values().data(), cout);

    const bool has_bias = static_cast<bool>(b);
    std::vector<Tensor> ins{x, w};
    if (has_bias) ins.push_back(b);
    return make_result({cout, h, wd}, std::move(out), ins, [=](Node& n) {
        const auto hwi = static_cast<Eigen::Index>(hw);
        CMapR g(n.grad.data(), cout, hwi);
        const auto& xv = n.inputs[0]->value;
        CMapR wm(n.inputs[1]->value.data(), cout, patch);
        double* gx = in_grad(n, 0);
        double* gw = in_grad(n, 1);
        if (k == 1) {
            CMapR xm(xv.data(), cin, hwi);
            if (gw) MapR(gw, cout, patch).noalias() += g * xm.transpose();
            if (gx) MapR(gx, cin, hwi).noalias() += wm.transpose() * g;
        } else {
            Buffer cols(static_cast<std::size_t>(patch) * hw);
            if (gw) {
                im2col(xv.data(), cin, h, wd, k, cols.data());
                MapR(gw, cout, patch).noalias() += g * CMapR(cols.data(), patch, hwi).transpose();
            }
            if (gx) {
                MapR(cols.data(), patch, hwi).noalias() = wm.transpose() * g;
                col2im_add(cols.data(), cin, h, wd, k, gx);
            }
        }
        if (has_bias) {
            if (double* gb = in_grad(n, 2)) Eigen::Map<Eigen::VectorXd>(gb, cout) += g.rowwise().sum();
        }
    });
}

Tensor max_pool2(const Tensor& x) {
    require_rank(x, 3, "max_pool2");
    const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    require(h % 2 == 0 && w % 2 == 0, "max_pool2: odd extent " + shape_str(x.shape()));
    const int oh = h / 2, ow = w / 2;
    Buffer out(static_cast<std::size_t>(c) * oh * ow);
    auto argmax = std::make_shared<std::vector<std::size_t>>(out.size());
    const auto xv = x.values();
    for (int ch = 0; ch < c; ++ch) {
        for (int y = 0; y < oh; ++y) {
            for (int xx = 0; xx < ow; ++xx) {
                const std::size_t base = (static_cast<std::size_t>(ch) * h + 2 * y) * w + 2 * xx;
                std::size_t best = base;
                for (std::size_t cand : {base + 1, base + w, base + w + 1}) {
                    if (xv[cand] > xv[best]) best = cand;
                }
                const std::size_t o = (static_cast<std::size_t>(ch) * oh + y) * ow + xx;
                out[o] = xv[best];
                (*argmax)[o] = best;
            }
        }
    }
    return make_result({c, oh, ow}, std::move(out), {x}, [argmax](Node& n) {
        if (double* g = in_grad(n, 0)) {
            for (std::size_t o = 0; o < n.grad.size(); ++o) g[(*argmax)[o]] += n.grad[o];
        }
    });
}

Tensor group_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, int groups, double eps) {
    require_rank(x, 3, "group_norm");
    const int c = x.dim(0);
    require(groups > 0 && c % groups == 0, "group_norm: channels not divisible by groups");
    require(gamma.numel() == static_cast<std::size_t>(c) && beta.numel() == static_cast<std::size_t>(c),
            "group_norm: affine size mismatch");
    const std::size_t hw = static_cast<std::size_t>(x.dim(1)) * x.dim(2);
    const int per = c / groups;
    const std::size_t gsize = per * hw;

    auto xhat = std::make_shared<Buffer>(x.numel());
    auto inv_std = std::make_shared<Buffer>(groups);
    Buffer out(x.numel());
    const auto xv = x.values();
    for (int g = 0; g < groups; ++g) {
        const std::size_t base = g * gsize;
        double mean = 0.0;
        for (std::size_t i = 0; i < gsize; ++i) mean += xv[base + i];
        mean /= static_cast<double>(gsize);
        double var = 0.0;
        for (std::size_t i = 0; i < gsize; ++i) var += (xv[base + i] - mean) * (xv[base + i] - mean);
        var /= static_cast<double>(gsize);
        const double is = 1.0 / std::sqrt(var + eps);
        (*inv_std)[g] = is;
        for (std::size_t i = 0; i < gsize; ++i) {
            const double h = (xv[base + i] - mean) * is;
            const int ch = g * per + static_cast<int>(i / hw);
            (*xhat)[base + i] = h;
            out[base + i] = gamma.values()[ch] * h + beta.values()[ch];
        }
    }
    return make_result(x.shape(), std::move(out), {x, gamma, beta}, [=](Node& n) {
        const auto& gam = n.inputs[1]->value;
        double* gx = in_grad(n, 0);
        double* gg = in_grad(n, 1);
        double* gb = in_grad(n, 2);
        for (int g = 0; g < groups; ++g) {
            const std::size_t base = g * gsize;
            double sum_dh = 0.0, sum_dh_h = 0.0;
            for (std::size_t i = 0; i < gsize; ++i) {
                const int ch = g * per + static_cast<int>(i / hw);
                const double dy = n.grad[base + i];
                const double h = (*xhat)[base + i];
                if (gg) gg[ch] += dy * h;
                if (gb) gb[ch] += dy;
                const double dh = dy * gam[ch];
                sum_dh += dh;
                sum_dh_h += dh * h;
            }
            if (!gx) continue;
            const double is = (*inv_std)[g];
            const double inv_n = 1.0 / static_cast<double>(gsize);
            for (std::size_t i = 0; i < gsize; ++i) {
                const int ch = g * per + static_cast<int>(i / hw);
                const double dh = n.grad[base + i] * gam[ch];
                gx[base + i] += is * (dh - sum_dh * inv_n - (*xhat)[base + i] * sum_dh_h * inv_n);
            }
        }
    });
}

Tensor resize_bilinear(const Tensor& x, int out_h, int out_w) {
    require_rank(x, 3, "resize_bilinear");
    require(out_h > 0 && out_w > 0, "resize_bilinear: non-positive target extent");
    const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    auto ay = std::make_shared<Axis>(bilinear_axis(h, out_h));
    auto ax = std::make_shared<Axis>(bilinear_axis(w, out_w));
    Buffer out(static_cast<std::size_t>(c) * out_h * out_w);
    const auto xv = x.values();
    for (int ch = 0; ch < c; ++ch) {
        const double* p = xv.data() + static_cast<std::size_t>(ch) * h * w;
        double* o = out.data() + static_cast<std::size_t>(ch) * out_h * out_w;
        for (int y = 0; y < out_h; ++y) {
            const double wy = ay->w1[y];
            const double* r0 = p + static_cast<std::size_t>(ay->i0[y]) * w;
            const double* r1 = p + static_cast<std::size_t>(ay->i1[y]) * w;
            for (int xx = 0; xx < out_w; ++xx) {
                const double wx = ax->w1[xx];
                const int x0 = ax->i0[xx], x1 = ax->i1[xx];
                const double top = (1.0 - wx) * r0[x0] + wx * r0[x1];
                const double bot = (1.0 - wx) * r1[x0] + wx * r1[x1];
                o[static_cast<std::size_t>(y) * out_w + xx] = (1.0 - wy) * top + wy * bot;
            }
        }
    }
    return make_result({c, out_h, out_w}, std::move(out), {x}, [=](Node& n) {
        double* g = in_grad(n, 0);
        if (!g) return;
        for (int ch = 0; ch < c; ++ch) {
            double* p = g + static_cast<std::size_t>(ch) * h * w;
            const double* go = n.grad.data() + static_cast<std::size_t>(ch) * out_h * out_w;
            for (int y = 0; y < out_h; ++y) {
                const double wy = ay->w1[y];
                double* r0 = p + static_cast<std::size_t>(ay->i0[y]) * w;
                double* r1 = p + static_cast<std::size_t>(ay->i1[y]) * w;
                for (int xx = 0; xx < out_w; ++xx) {
                    const double d = go[static_cast<std::size_t>(y) * out_w + xx];
                    const double wx = ax->w1[xx];
                    const int x0 = ax->i0[xx], x1 = ax->i1[xx];
                    r0[x0] += (1.0 - wy) * (1.0 - wx) * d;
                    r0[x1] += (1.0 - wy) * wx * d;
                    r1[x0] += wy * (1.0 - wx) * d;
                    r1[x1] += wy * wx * d;
                }
            }
        }
    });
}

Tensor channel_mean(const Tensor& x) {
    require_rank(x, 3, "channel_mean");
    const int c = x.dim(0);
    const std::size_t hw = static_cast<std::size_t>(x.dim(1)) * x.dim(2);
    Buffer out(c, 0.0);
    for (int ch = 0; ch < c; ++ch) {
        double s = 0.0;
        for (std::size_t i = 0; i < hw; ++i) s += x.values()[ch * hw + i];
        out[ch] = s / static_cast<double>(hw);
    }
    return make_result({c}, std::move(out), {x}, [c, hw](Node& n) {
        if (double* g = in_grad(n, 0)) {
            for (int ch = 0; ch < c; ++ch) {
                const double d = n.grad[ch] / static_cast<double>(hw);
                for (std::size_t i = 0; i < hw; ++i) g[ch * hw + i] += d;
            }
        }
    });
}

Tensor scale_channels(const Tensor& x, const Tensor& gate) {
    require_rank(x, 3, "scale_channels");
    const int c = x.dim(0);
    require(gate.numel() == static_cast<std::size_t>(c), "scale_channels: gate size mismatch");
    const std::size_t hw = static_cast<std::size_t>(x.dim(1)) * x.dim(2);
    Buffer out(x.numel());
    for (int ch = 0; ch < c; ++ch) {
        for (std::size_t i = 0; i < hw; ++i) out[ch * hw + i] = x.values()[ch * hw + i] * gate.values()[ch];
    }
    return make_result(x.shape(), std::move(out), {x, gate}, [c, hw](Node& n) {
        const auto& xv = n.inputs[0]->value;
        const auto& gv = n.inputs[1]->value;
        double* gx = in_grad(n, 0);
        double* gg = in_grad(n, 1);
        for (int ch = 0; ch < c; ++ch) {
            double acc = 0.0;
            for (std::size_t i = 0; i < hw; ++i) {
                const double d = n.grad[ch * hw + i];
                if (gx) gx[ch * hw + i] += d * gv[ch];
                acc += d * xv[ch * hw + i];
            }
            if (gg) gg[ch] += acc;
        }
    });
}

Tensor patchify(const Tensor& x, int patch) {
    require_rank(x, 3, "patchify");
    require(x.dim(0) == 1, "patchify: single-channel input expected");
    const int h = x.dim(1), w = x.dim(2);
    require(patch > 0 && h % patch == 0 && w % patch == 0, "patchify: extent not divisible by patch");
    const int gh = h / patch, gw = w / patch, pp = patch * patch;
    auto index = std::make_shared<std::vector<std::size_t>>(x.numel());
    Buffer out(x.numel());
    for (int py = 0; py < gh; ++py) {
        for (int px = 0; px < gw; ++px) {
            const std::size_t token = static_cast<std::size_t>(py) * gw + px;
            for (int i = 0; i < patch; ++i) {
                for (int j = 0; j < patch; ++j) {
                    const std::size_t o = token * pp + i * patch + j;
                    const std::size_t src = static_cast<std::size_t>(py * patch + i) * w + px * patch + j;
                    (*index)[o] = src;
                    out[o] = x.values()[src];
                }
            }
        }
    }
    return make_result({gh * gw, pp}, std::move(out), {x}, [index](Node& n) {
        if (double* g = in_grad(n, 0)) {
            for (std::size_t o = 0; o < n.grad.size(); ++o) g[(*index)[o]] += n.grad[o];
        }
    });
}

// ---- loss --------------------------------------------------------------

Tensor dice_bce_loss(const Tensor& logits, std::span<const double> target, double w_dice, double w_bce, double eps) {
    require(target.size() == logits.numel(), "dice_bce_loss: target size mismatch");
    const std::size_t count = logits.numel();
    auto prob = std::make_shared<Buffer>(count);
    auto tgt = std::make_shared<Buffer>(target.begin(), target.end());
    double bce = 0.0, inter = 0.0, psum = 0.0, tsum = 0.0;
    for (std::size_t i = 0; i < count; ++i) {
        const double x = logits.values()[i];
        const double y = target[i];
        const double p = 1.0 / (1.0 + std::exp(-x));
        (*prob)[i] = p;
        bce += std::max(x, 0.0) - x * y + std::log1p(std::exp(-std::abs(x)));
        inter += p * y;
        psum += p;
        tsum += y;
    }
    bce /= static_cast<double>(count);
    const double num = 2.0 * inter + eps;
    const double den = psum + tsum + eps;
    const double loss = w_dice * (1.0 - num / den) + w_bce * bce;
    return make_result({1}, {loss}, {logits}, [=](Node& n) {
        double* g = in_grad(n, 0);
        if (!g) return;
        const double up = n.grad[0];
        for (std::size_t i = 0; i < count; ++i) {
            const double p = (*prob)[i], y = (*tgt)[i];
            const double d_dice_dp = -(2.0 * y * den - num) / (den * den);
            const double d = w_dice * d_dice_dp * p * (1.0 - p) + w_bce * (p - y) / static_cast<double>(count);
            g[i] += up * d;
        }
    });
}

}  // namespace fdnet::ag
