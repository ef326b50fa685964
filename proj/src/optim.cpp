#include "fdnet/optim.hpp"

#include <cmath>

#include "fdnet/error.hpp"

namespace fdnet::train {

Adam::Adam(nn::ParamStore& params, double learning_rate, double beta1, double beta2, double eps)
    : params_(params), lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(eps) {
    if (!(learning_rate >= 0.0)) throw ConfigError("learning_rate must be non-negative");
    for (const auto& p : params_.params()) {
        state_.m.emplace_back(p.tensor.numel(), 0.0);
        state_.v.emplace_back(p.tensor.numel(), 0.0);
    }
}

void Adam::step() {
    ++state_.step;
    const double t = static_cast<double>(state_.step);
    const double c1 = 1.0 - std::pow(beta1_, t);
    const double c2 = 1.0 - std::pow(beta2_, t);
    auto& ps = params_.params();
    for (std::size_t k = 0; k < ps.size(); ++k) {
        auto tensor = ps[k].tensor;
        auto values = tensor.mutable_values();
        const auto grad = tensor.grad();
        auto& m = state_.m[k];
        auto& v = state_.v[k];
        for (std::size_t i = 0; i < values.size(); ++i) {
            const double g = grad.empty() ? 0.0 : grad[i];
            m[i] = beta1_ * m[i] + (1.0 - beta1_) * g;
            v[i] = beta2_ * v[i] + (1.0 - beta2_) * g * g;
            values[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
        }
    }
}

void Adam::load_state(State state) {
    const auto& ps = params_.params();
    if (state.m.size() != ps.size() || state.v.size() != ps.size()) {
        throw DimensionError("optimizer state does not match parameter count");
    }
    for (std::size_t k = 0; k < ps.size(); ++k) {
        if (state.m[k].size() != ps[k].tensor.numel() || state.v[k].size() != ps[k].tensor.numel()) {
            throw DimensionError("optimizer state shape mismatch for " + ps[k].name);
        }
    }
    state_ = std::move(state);
}

}  // namespace fdnet::train
