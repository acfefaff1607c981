#pragma once

#include "damageseg/nn/tensor.hpp"
#include "damageseg/raster.hpp"

#include <array>
#include <vector>

namespace damageseg {

/// Per-class loss weights for classes 0..4.
struct ClassWeights {
    std::array<double, 5> w{1.0, 1.0, 3.0, 3.0, 3.0};

    static ClassWeights uniform() { return {{1.0, 1.0, 1.0, 1.0, 1.0}}; }
};

/// Throws ArgumentError for negative entries or an all-zero vector.
void validate_class_weights(const ClassWeights& weights);

template <class T>
struct LossResult {
    double value = 0.0;
    nn::Tensor<T> grad;  ///< d(loss)/d(logits), same shape as the logits
};

/// Class-weighted cross-entropy over an (N, 5, H, W) logit batch and N target
/// masks, reduced as sum(w[t] * ce) / sum(w[t]). Gradient is filled when
/// `with_grad` is set.
template <class T>
LossResult<T> weighted_cross_entropy(const nn::Tensor<T>& logits, const std::vector<const Mask*>& targets,
                                     const ClassWeights& weights, bool with_grad = true);

template <class T>
LossResult<T> weighted_cross_entropy(const nn::Tensor<T>& logits, const Mask& target,
                                     const ClassWeights& weights, bool with_grad = true) {
    return weighted_cross_entropy(logits, std::vector<const Mask*>{&target}, weights, with_grad);
}

}  // namespace damageseg
