#pragma once

#include "damageseg/nn/autograd.hpp"

namespace damageseg::nn {

/// 2-D convolution; `weight` is (Cout, Cin, k, k), `bias` may be null.
template <class T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, int stride, int pad);

/// Running statistics of a batch-normalisation layer.
template <class T>
struct BatchNormStats {
    Tensor<T> mean;
    Tensor<T> var;
};

template <class T>
Var<T> batch_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, BatchNormStats<T>& stats,
                  bool training, T momentum = T(0.1), T eps = T(1e-5));

template <class T>
Var<T> relu(const Var<T>& x);

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b);

template <class T>
Var<T> sub(const Var<T>& a, const Var<T>& b);

/// Channel concatenation; a's channels come first.
template <class T>
Var<T> concat_channels(const Var<T>& a, const Var<T>& b);

template <class T>
Var<T> upsample_nearest(const Var<T>& x, int out_h, int out_w);

/// Bilinear resize with half-pixel centres (no corner alignment).
template <class T>
Var<T> resize_bilinear(const Var<T>& x, int out_h, int out_w);

}  // namespace damageseg::nn
