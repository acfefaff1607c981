#include "damageseg/objective.hpp"

#include "damageseg/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace damageseg {

void validate_class_weights(const ClassWeights& weights) {
    bool any_positive = false;
    for (double v : weights.w) {
        if (!(v >= 0.0) || !std::isfinite(v)) throw ArgumentError("class weights must be finite and >= 0");
        any_positive = any_positive || v > 0.0;
    }
    if (!any_positive) throw ArgumentError("class weights are all zero");
}

template <class T>
LossResult<T> weighted_cross_entropy(const nn::Tensor<T>& logits, const std::vector<const Mask*>& targets,
                                     const ClassWeights& weights, bool with_grad) {
    validate_class_weights(weights);
    const nn::Shape s = logits.shape;
    if (s.c != 5) throw ShapeError("weighted_cross_entropy: expected 5 logit channels, got " + std::to_string(s.c));
    if (static_cast<int>(targets.size()) != s.n) {
        throw ShapeError("weighted_cross_entropy: " + std::to_string(targets.size()) +
                         " targets for a batch of " + std::to_string(s.n));
    }
    for (const Mask* t : targets) {
        if (t->width != s.w || t->height != s.h) {
            throw ShapeError("weighted_cross_entropy: target size differs from logits " + s.str());
        }
        for (auto v : t->labels) {
            if (v > 4) throw ValidationError("target label " + std::to_string(v) + " outside 0..4");
        }
    }

    const std::size_t plane = s.plane();
    double weighted_sum = 0.0;
    double weight_total = 0.0;
    for (int n = 0; n < s.n; ++n) {
        for (std::size_t i = 0; i < plane; ++i) weight_total += weights.w[targets[n]->labels[i]];
    }
    LossResult<T> out;
    if (weight_total <= 0.0) {
        // Every pixel belongs to a zero-weight class: nothing to learn from.
        if (with_grad) out.grad = nn::Tensor<T>(s);
        return out;
    }
    if (with_grad) out.grad = nn::Tensor<T>(s);

    double logp[5];
    for (int n = 0; n < s.n; ++n) {
        const auto& labels = targets[n]->labels;
        for (std::size_t i = 0; i < plane; ++i) {
            double mx = -std::numeric_limits<double>::infinity();
            for (int c = 0; c < 5; ++c) mx = std::max(mx, static_cast<double>(logits.channel(n, c)[i]));
            double sum = 0.0;
            for (int c = 0; c < 5; ++c) sum += std::exp(logits.channel(n, c)[i] - mx);
            const double lse = mx + std::log(sum);
            for (int c = 0; c < 5; ++c) logp[c] = logits.channel(n, c)[i] - lse;
            const int t = labels[i];
            const double w = weights.w[t];
            weighted_sum += -w * logp[t];
            if (with_grad && w > 0.0) {
                const double scale = w / weight_total;
                for (int c = 0; c < 5; ++c) {
                    out.grad.channel(n, c)[i] = static_cast<T>(scale * (std::exp(logp[c]) - (c == t ? 1.0 : 0.0)));
                }
            }
        }
    }
    out.value = weighted_sum / weight_total;
    return out;
}

template LossResult<float> weighted_cross_entropy<float>(const nn::Tensor<float>&, const std::vector<const Mask*>&,
                                                         const ClassWeights&, bool);
template LossResult<double> weighted_cross_entropy<double>(const nn::Tensor<double>&,
                                                           const std::vector<const Mask*>&,
                                                           const ClassWeights&, bool);

}  // namespace damageseg
