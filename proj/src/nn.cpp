#include "fdnet/nn.hpp"

#include <cmath>
#include <numeric>

#include "fdnet/error.hpp"

namespace fdnet::nn {

Tensor ParamStore::add(const std::string& name, ag::Shape shape, std::vector<double> values) {
    if (find(name)) throw InternalError("duplicate parameter name " + name);
    Tensor t = Tensor::parameter(std::move(shape), std::move(values));
    params_.push_back({name, t});
    return t;
}

Tensor ParamStore::fan_in_uniform(const std::string& name, ag::Shape shape, int fan_in) {
    const double bound = std::sqrt(3.0 / fan_in);
    std::vector<double> values(ag::numel(shape));
    for (double& v : values) v = rng_.uniform(-bound, bound);
    return add(name, std::move(shape), std::move(values));
}

Tensor ParamStore::constant(const std::string& name, ag::Shape shape, double value) {
    std::vector<double> values(ag::numel(shape), value);
    return add(name, std::move(shape), std::move(values));
}

const NamedParam* ParamStore::find(const std::string& name) const {
    for (const auto& p : params_) {
        if (p.name == name) return &p;
    }
    return nullptr;
}

std::size_t ParamStore::scalar_count() const { return scalar_count(""); }

std::size_t ParamStore::scalar_count(const std::string& prefix) const {
    std::size_t n = 0;
    for (const auto& p : params_) {
        if (p.name.starts_with(prefix)) n += p.tensor.numel();
    }
    return n;
}

void ParamStore::zero_grad() {
    for (auto& p : params_) p.tensor.zero_grad();
}

Conv2d::Conv2d(ParamStore& ps, const std::string& name, int in, int out, int kernel, bool with_bias) {
    weight = ps.fan_in_uniform(name + ".weight", {out, in, kernel, kernel}, in * kernel * kernel);
    if (with_bias) bias = ps.constant(name + ".bias", {out}, 0.0);
}

int group_count(int channels) { return std::gcd(channels, 8); }

GroupNorm::GroupNorm(ParamStore& ps, const std::string& name, int channels) : groups(group_count(channels)) {
    gamma = ps.constant(name + ".gamma", {channels}, 1.0);
    beta = ps.constant(name + ".beta", {channels}, 0.0);
}

Linear::Linear(ParamStore& ps, const std::string& name, int in, int out, bool with_bias) {
    weight = ps.fan_in_uniform(name + ".weight", {in, out}, in);
    if (with_bias) bias = ps.constant(name + ".bias", {out}, 0.0);
}

LayerNorm::LayerNorm(ParamStore& ps, const std::string& name, int dim) {
    gamma = ps.constant(name + ".gamma", {dim}, 1.0);
    beta = ps.constant(name + ".beta", {dim}, 0.0);
}

}  // namespace fdnet::nn
