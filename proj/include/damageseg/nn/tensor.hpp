#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace damageseg::nn {

/// NCHW tensor shape.
struct Shape {
    int n = 0;
    int c = 0;
    int h = 0;
    int w = 0;

    std::size_t size() const { return static_cast<std::size_t>(n) * c * h * w; }
    std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
    bool operator==(const Shape&) const = default;
    std::string str() const {
        return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
               std::to_string(w) + ")";
    }
};

/// Dense NCHW tensor with contiguous storage.
template <class T>
struct Tensor {
    Shape shape;
    std::vector<T> data;

    Tensor() = default;
    explicit Tensor(Shape s, T fill = T(0)) : shape(s), data(s.size(), fill) {}

    bool empty() const { return data.empty(); }
    std::size_t size() const { return data.size(); }

    T* channel(int n, int c) { return data.data() + (static_cast<std::size_t>(n) * shape.c + c) * shape.plane(); }
    const T* channel(int n, int c) const {
        return data.data() + (static_cast<std::size_t>(n) * shape.c + c) * shape.plane();
    }
    T& at(int n, int c, int y, int x) { return channel(n, c)[static_cast<std::size_t>(y) * shape.w + x]; }
    T at(int n, int c, int y, int x) const { return channel(n, c)[static_cast<std::size_t>(y) * shape.w + x]; }
};

template <class U, class T>
Tensor<U> tensor_cast(const Tensor<T>& t) {
    Tensor<U> out;
    out.shape = t.shape;
    out.data.assign(t.data.begin(), t.data.end());
    return out;
}

}  // namespace damageseg::nn
