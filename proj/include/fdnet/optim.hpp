#pragma once

#include <cstdint>
#include <vector>

#include "fdnet/nn.hpp"

namespace fdnet::train {

/// Adaptive-moment optimizer without weight decay.
class Adam {
  public:
    struct State {
        std::uint64_t step = 0;
        std::vector<std::vector<double>> m, v;  // per parameter, registration order
    };

    Adam(nn::ParamStore& params, double learning_rate, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

    /// Applies one update from the accumulated gradients. Parameters that
    /// received no gradient are treated as having a zero gradient.
    void step();

    const State& state() const { return state_; }
    /// Throws DimensionError if the state does not match the parameter set.
    void load_state(State state);
    double learning_rate() const { return lr_; }

  private:
    nn::ParamStore& params_;
    double lr_, beta1_, beta2_, eps_;
    State state_;
};

}  // namespace fdnet::train
