#pragma once

#include <string>
#include <vector>

#include "fdnet/autograd.hpp"
#include "fdnet/rng.hpp"

namespace fdnet::nn {

using ag::Tensor;

struct NamedParam {
    std::string name;
    Tensor tensor;
};

/// Ordered registry of trainable tensors. Registration order is the
/// checkpoint and optimizer order.
class ParamStore {
  public:
    explicit ParamStore(std::uint64_t seed) : rng_(seed) {}

    /// Uniform in ±sqrt(3 / fan_in) (unit-variance-preserving fan-in scaling).
    Tensor fan_in_uniform(const std::string& name, ag::Shape shape, int fan_in);
    Tensor constant(const std::string& name, ag::Shape shape, double value);

    const std::vector<NamedParam>& params() const { return params_; }
    const NamedParam* find(const std::string& name) const;
    std::size_t scalar_count() const;
    /// Scalar count of parameters whose name starts with `prefix`.
    std::size_t scalar_count(const std::string& prefix) const;
    void zero_grad();

  private:
    Tensor add(const std::string& name, ag::Shape shape, std::vector<double> values);

    Rng rng_;
    std::vector<NamedParam> params_;
};

/// Same-padded stride-1 convolution.
struct Conv2d {
    Tensor weight, bias;
    Conv2d() = default;
    Conv2d(ParamStore& ps, const std::string& name, int in, int out, int kernel, bool with_bias);
    Tensor operator()(const Tensor& x) const { return ag::conv2d(x, weight, bias); }
};

struct GroupNorm {
    Tensor gamma, beta;
    int groups = 1;
    GroupNorm() = default;
    GroupNorm(ParamStore& ps, const std::string& name, int channels);
    Tensor operator()(const Tensor& x) const { return ag::group_norm(x, gamma, beta, groups); }
};

/// Group count used for a channel width: gcd(channels, 8).
int group_count(int channels);

struct Linear {
    Tensor weight, bias;
    Linear() = default;
    Linear(ParamStore& ps, const std::string& name, int in, int out, bool with_bias = true);
    Tensor operator()(const Tensor& x) const { return ag::linear(x, weight, bias); }
};

struct LayerNorm {
    Tensor gamma, beta;
    LayerNorm() = default;
    LayerNorm(ParamStore& ps, const std::string& name, int dim);
    Tensor operator()(const Tensor& x) const { return ag::layer_norm(x, gamma, beta); }
};

}  // namespace fdnet::nn
