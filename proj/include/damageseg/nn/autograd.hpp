#pragma once

#include "damageseg/nn/tensor.hpp"

#include <functional>
#include <memory>
#include <vector>

namespace damageseg::nn {

/// One value in the computation graph. `backward_fn` reads this node's grad
/// and accumulates into the grads of `inputs`.
template <class T>
struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node<T>>> inputs;
    std::function<void(Node<T>&)> backward_fn;

    /// Zero-initialised gradient buffer, allocated on first use.
    Tensor<T>& grad_buffer() {
        if (grad.empty()) grad = Tensor<T>(value.shape);
        return grad;
    }
};

template <class T>
using Var = std::shared_ptr<Node<T>>;

/// Whether ops record graph edges on this thread.
bool grad_enabled();

class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

template <class T>
Var<T> constant(Tensor<T> value) {
    auto v = std::make_shared<Node<T>>();
    v->value = std::move(value);
    return v;
}

template <class T>
Var<T> parameter(Tensor<T> value) {
    auto v = constant(std::move(value));
    v->requires_grad = true;
    return v;
}

/// Creates an op result; the graph edge is kept only when some input needs a gradient.
template <class T>
Var<T> make_result(Tensor<T> value, std::vector<Var<T>> inputs, std::function<void(Node<T>&)> fn) {
    auto out = std::make_shared<Node<T>>();
    out->value = std::move(value);
    if (!grad_enabled()) return out;
    for (const auto& in : inputs) {
        if (in && in->requires_grad) {
            out->requires_grad = true;
            break;
        }
    }
    if (out->requires_grad) {
        out->inputs = std::move(inputs);
        out->backward_fn = std::move(fn);
    }
    return out;
}

/// Reverse-mode sweep from `root`, seeded with d(loss)/d(root).
template <class T>
void backward(const Var<T>& root, Tensor<T> seed);

}  // namespace damageseg::nn
