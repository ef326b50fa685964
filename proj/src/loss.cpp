#include "fdnet/loss.hpp"

#include "fdnet/error.hpp"

namespace fdnet::train {

ag::Tensor segmentation_loss(const ag::Tensor& logits, const BinaryMask& mask, LossWeights weights) {
    if (logits.shape() != ag::Shape{1, mask.rows, mask.cols}) {
        throw ValidationError("loss: logits " + ag::shape_str(logits.shape()) + " do not match mask " +
                              std::to_string(mask.rows) + "x" + std::to_string(mask.cols));
    }
    if (weights.dice < 0.0 || weights.bce < 0.0 || weights.dice + weights.bce <= 0.0) {
        throw ConfigError("loss weights must be non-negative with a positive sum");
    }
    std::vector<double> target(mask.size());
    for (std::size_t i = 0; i < mask.size(); ++i) {
        if (mask.data[i] > 1) throw ValidationError("loss: mask is not binary");
        target[i] = mask.data[i];
    }
    return ag::dice_bce_loss(logits, target, weights.dice, weights.bce, kDiceSmoothing);
}

}  // namespace fdnet::train
