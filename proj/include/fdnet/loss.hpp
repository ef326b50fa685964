#pragma once

#include "fdnet/autograd.hpp"
#include "fdnet/image.hpp"

namespace fdnet::train {

struct LossWeights {
    double dice = 0.5;
    double bce = 0.5;
};

/// Soft-Dice smoothing added to numerator and denominator.
inline constexpr double kDiceSmoothing = 1.0;

/// w_dice * (1 - softDice(sigmoid(logits), mask)) + w_bce * BCE(logits, mask).
/// Throws ValidationError for a non-binary mask or a shape mismatch.
ag::Tensor segmentation_loss(const ag::Tensor& logits, const BinaryMask& mask, LossWeights weights);

}  // namespace fdnet::train
