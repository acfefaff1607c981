#include "damageseg/nn/ops.hpp"

#include "damageseg/error.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace damageseg::nn {

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

template <class T>
void backward(const Var<T>& root, Tensor<T> seed) {
    if (!root->requires_grad) return;
    if (!(seed.shape == root->value.shape)) {
        throw ShapeError("backward: seed shape " + seed.shape.str() + " != output " +
                         root->value.shape.str());
    }
    // Iterative post-order DFS gives a topological order.
    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> visited;
    std::vector<std::pair<Node<T>*, std::size_t>> stack{{root.get(), 0}};
    visited.insert(root.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->inputs.size()) {
            Node<T>* child = node->inputs[next++].get();
            if (child && child->requires_grad && visited.insert(child).second) {
                stack.push_back({child, 0});
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    auto& g = root->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g.data[i] += seed.data[i];
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<T>* node = *it;
        if (node->backward_fn && !node->grad.empty()) node->backward_fn(*node);
    }
}

namespace {

template <class T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class T>
void im2col(const T* x, int C, int H, int W, int k, int stride, int pad, int Ho, int Wo, T* col) {
    for (int c = 0; c < C; ++c) {
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                T* row = col + (static_cast<std::size_t>(c * k + ky) * k + kx) * Ho * Wo;
                const T* plane = x + static_cast<std::size_t>(c) * H * W;
                for (int oy = 0; oy < Ho; ++oy) {
                    const int iy = oy * stride - pad + ky;
                    T* dst = row + static_cast<std::size_t>(oy) * Wo;
                    if (iy < 0 || iy >= H) {
                        std::fill(dst, dst + Wo, T(0));
                        continue;
                    }
                    const T* src = plane + static_cast<std::size_t>(iy) * W;
                    for (int ox = 0; ox < Wo; ++ox) {
                        const int ix = ox * stride - pad + kx;
                        dst[ox] = (ix >= 0 && ix < W) ? src[ix] : T(0);
                    }
                }
            }
        }
    }
}

template <class T>
void col2im(const T* col, int C, int H, int W, int k, int stride, int pad, int Ho, int Wo, T* x) {
    for (int c = 0; c < C; ++c) {
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                const T* row = col + (static_cast<std::size_t>(c * k + ky) * k + kx) * Ho * Wo;
                T* plane = x + static_cast<std::size_t>(c) * H * W;
                for (int oy = 0; oy < Ho; ++oy) {
                    const int iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= H) continue;
                    const T* src = row + static_cast<std::size_t>(oy) * Wo;
                    T* dst = plane + static_cast<std::size_t>(iy) * W;
                    for (int ox = 0; ox < Wo; ++ox) {
                        const int ix = ox * stride - pad + kx;
                        if (ix >= 0 && ix < W) dst[ix] += src[ox];
                    }
                }
            }
        }
    }
}

void require_same(const Shape& a, const Shape& b, const char* op) {
    if (!(a == b)) throw ShapeError(std::string(op) + ": shape mismatch " + a.str() + " vs " + b.str());
}

}  // namespace

template <class T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, int stride, int pad) {
    const Shape xs = x->value.shape;
    const Shape ws = weight->value.shape;
    if (ws.c != xs.c || ws.h != ws.w) {
        throw ShapeError("conv2d: weight " + ws.str() + " incompatible with input " + xs.str());
    }
    const int k = ws.h;
    const int Cout = ws.n;
    const int Ho = (xs.h + 2 * pad - k) / stride + 1;
    const int Wo = (xs.w + 2 * pad - k) / stride + 1;
    if (Ho <= 0 || Wo <= 0) throw ShapeError("conv2d: input " + xs.str() + " too small for kernel");
    const int K = xs.c * k * k;
    const int HWo = Ho * Wo;
    const bool direct = (k == 1 && stride == 1 && pad == 0);

    Tensor<T> out(Shape{xs.n, Cout, Ho, Wo});
    Eigen::Map<const MatRM<T>> Wm(weight->value.data.data(), Cout, K);
    std::vector<T> col(direct ? 0 : static_cast<std::size_t>(K) * HWo);
    for (int n = 0; n < xs.n; ++n) {
        const T* src = x->value.channel(n, 0);
        if (!direct) im2col(src, xs.c, xs.h, xs.w, k, stride, pad, Ho, Wo, col.data());
        Eigen::Map<const MatRM<T>> Cm(direct ? src : col.data(), K, HWo);
        Eigen::Map<MatRM<T>> Om(out.channel(n, 0), Cout, HWo);
        Om.noalias() = Wm * Cm;
        if (bias) {
            for (int o = 0; o < Cout; ++o) Om.row(o).array() += bias->value.data[o];
        }
    }

    return make_result<T>(std::move(out), {x, weight, bias}, [=](Node<T>& self) {
        const Tensor<T>& gy = self.grad;
        Eigen::Map<const MatRM<T>> Wm(weight->value.data.data(), Cout, K);
        std::vector<T> col(direct ? 0 : static_cast<std::size_t>(K) * HWo);
        std::vector<T> dcol(static_cast<std::size_t>(K) * HWo);
        for (int n = 0; n < xs.n; ++n) {
            Eigen::Map<const MatRM<T>> Gm(gy.channel(n, 0), Cout, HWo);
            if (weight->requires_grad) {
                const T* src = x->value.channel(n, 0);
                if (!direct) im2col(src, xs.c, xs.h, xs.w, k, stride, pad, Ho, Wo, col.data());
                Eigen::Map<const MatRM<T>> Cm(direct ? src : col.data(), K, HWo);
                Eigen::Map<MatRM<T>> dW(weight->grad_buffer().data.data(), Cout, K);
                dW.noalias() += Gm * Cm.transpose();
            }
            if (bias && bias->requires_grad) {
                auto& db = bias->grad_buffer().data;
                for (int o = 0; o < Cout; ++o) db[o] += Gm.row(o).sum();
            }
            if (x->requires_grad) {
                T* dx = x->grad_buffer().channel(n, 0);
                if (direct) {
                    Eigen::Map<MatRM<T>> dX(dx, K, HWo);
                    dX.noalias() += Wm.transpose() * Gm;
                } else {
                    Eigen::Map<MatRM<T>> Dm(dcol.data(), K, HWo);
                    Dm.noalias() = Wm.transpose() * Gm;
                    col2im(dcol.data(), xs.c, xs.h, xs.w, k, stride, pad, Ho, Wo, dx);
                }
            }
        }
    });
}

template <class T>
Var<T> batch_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, BatchNormStats<T>& stats,
                  bool training, T momentum, T eps) {
    const Shape s = x->value.shape;
    const int C = s.c;
    const std::size_t plane = s.plane();
    const double count = static_cast<double>(s.n) * plane;
    if (gamma->value.size() != static_cast<std::size_t>(C) || beta->value.size() != static_cast<std::size_t>(C)) {
        throw ShapeError("batch_norm: affine parameters do not match " + std::to_string(C) + " channels");
    }

    std::vector<T> mean(C), inv_std(C);
    if (training) {
        for (int c = 0; c < C; ++c) {
            double sum = 0.0;
            for (int n = 0; n < s.n; ++n) {
                const T* p = x->value.channel(n, c);
                for (std::size_t i = 0; i < plane; ++i) sum += p[i];
            }
            const double mu = sum / count;
            double sq = 0.0;
            for (int n = 0; n < s.n; ++n) {
                const T* p = x->value.channel(n, c);
                for (std::size_t i = 0; i < plane; ++i) {
                    const double d = p[i] - mu;
                    sq += d * d;
                }
            }
            const double var = sq / count;
            mean[c] = static_cast<T>(mu);
            inv_std[c] = static_cast<T>(1.0 / std::sqrt(var + eps));
            const double unbiased = count > 1 ? sq / (count - 1) : var;
            stats.mean.data[c] = static_cast<T>((1 - momentum) * stats.mean.data[c] + momentum * mu);
            stats.var.data[c] = static_cast<T>((1 - momentum) * stats.var.data[c] + momentum * unbiased);
        }
    } else {
        for (int c = 0; c < C; ++c) {
            mean[c] = stats.mean.data[c];
            inv_std[c] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(stats.var.data[c]) + eps));
        }
    }

    Tensor<T> out(s);
    Tensor<T> xhat(training && grad_enabled() ? s : Shape{});
    for (int n = 0; n < s.n; ++n) {
        for (int c = 0; c < C; ++c) {
            const T* p = x->value.channel(n, c);
            T* o = out.channel(n, c);
            const T g = gamma->value.data[c];
            const T b = beta->value.data[c];
            for (std::size_t i = 0; i < plane; ++i) {
                const T h = (p[i] - mean[c]) * inv_std[c];
                if (!xhat.empty()) xhat.channel(n, c)[i] = h;
                o[i] = g * h + b;
            }
        }
    }

    auto cached = std::make_shared<Tensor<T>>(std::move(xhat));
    return make_result<T>(std::move(out), {x, gamma, beta}, [=](Node<T>& self) {
        const Tensor<T>& gy = self.grad;
        for (int c = 0; c < C; ++c) {
            double sum_dy = 0.0;
            double sum_dy_xhat = 0.0;
            for (int n = 0; n < s.n; ++n) {
                const T* dy = gy.channel(n, c);
                const T* xv = x->value.channel(n, c);
                for (std::size_t i = 0; i < plane; ++i) {
                    const T h = training ? cached->channel(n, c)[i] : (xv[i] - mean[c]) * inv_std[c];
                    sum_dy += dy[i];
                    sum_dy_xhat += dy[i] * h;
                }
            }
            if (gamma->requires_grad) gamma->grad_buffer().data[c] += static_cast<T>(sum_dy_xhat);
            if (beta->requires_grad) beta->grad_buffer().data[c] += static_cast<T>(sum_dy);
            if (!x->requires_grad) continue;
            const T scale = gamma->value.data[c] * inv_std[c];
            for (int n = 0; n < s.n; ++n) {
                const T* dy = gy.channel(n, c);
                T* dx = x->grad_buffer().channel(n, c);
                if (training) {
                    const T* h = cached->channel(n, c);
                    const T mdy = static_cast<T>(sum_dy / count);
                    const T mdyh = static_cast<T>(sum_dy_xhat / count);
                    for (std::size_t i = 0; i < plane; ++i) dx[i] += scale * (dy[i] - mdy - h[i] * mdyh);
                } else {
                    for (std::size_t i = 0; i < plane; ++i) dx[i] += scale * dy[i];
                }
            }
        }
    });
}

template <class T>
Var<T> relu(const Var<T>& x) {
    Tensor<T> out = x->value;
    for (auto& v : out.data) v = v > T(0) ? v : T(0);
    return make_result<T>(std::move(out), {x}, [x](Node<T>& self) {
        auto& dx = x->grad_buffer().data;
        const auto& xv = x->value.data;
        for (std::size_t i = 0; i < dx.size(); ++i) {
            if (xv[i] > T(0)) dx[i] += self.grad.data[i];
        }
    });
}

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
    require_same(a->value.shape, b->value.shape, "add");
    Tensor<T> out = a->value;
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += b->value.data[i];
    return make_result<T>(std::move(out), {a, b}, [a, b](Node<T>& self) {
        for (const auto& in : {a, b}) {
            if (!in->requires_grad) continue;
            auto& g = in->grad_buffer().data;
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad.data[i];
        }
    });
}

template <class T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
    require_same(a->value.shape, b->value.shape, "sub");
    Tensor<T> out = a->value;
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] -= b->value.data[i];
    return make_result<T>(std::move(out), {a, b}, [a, b](Node<T>& self) {
        if (a->requires_grad) {
            auto& g = a->grad_buffer().data;
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad.data[i];
        }
        if (b->requires_grad) {
            auto& g = b->grad_buffer().data;
            for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad.data[i];
        }
    });
}

template <class T>
Var<T> concat_channels(const Var<T>& a, const Var<T>& b) {
    const Shape sa = a->value.shape;
    const Shape sb = b->value.shape;
    if (sa.n != sb.n || sa.h != sb.h || sa.w != sb.w) {
        throw ShapeError("concat_channels: shape mismatch " + sa.str() + " vs " + sb.str());
    }
    Tensor<T> out(Shape{sa.n, sa.c + sb.c, sa.h, sa.w});
    const std::size_t plane = sa.plane();
    for (int n = 0; n < sa.n; ++n) {
        std::copy_n(a->value.channel(n, 0), sa.c * plane, out.channel(n, 0));
        std::copy_n(b->value.channel(n, 0), sb.c * plane, out.channel(n, sa.c));
    }
    return make_result<T>(std::move(out), {a, b}, [a, b, sa, sb, plane](Node<T>& self) {
        for (int n = 0; n < sa.n; ++n) {
            if (a->requires_grad) {
                T* g = a->grad_buffer().channel(n, 0);
                const T* src = self.grad.channel(n, 0);
                for (std::size_t i = 0; i < sa.c * plane; ++i) g[i] += src[i];
            }
            if (b->requires_grad) {
                T* g = b->grad_buffer().channel(n, 0);
                const T* src = self.grad.channel(n, sa.c);
                for (std::size_t i = 0; i < sb.c * plane; ++i) g[i] += src[i];
            }
        }
    });
}

template <class T>
Var<T> upsample_nearest(const Var<T>& x, int out_h, int out_w) {
    const Shape s = x->value.shape;
    std::vector<int> ys(out_h), xs(out_w);
    for (int y = 0; y < out_h; ++y) ys[y] = std::min(s.h - 1, static_cast<int>(static_cast<long long>(y) * s.h / out_h));
    for (int x0 = 0; x0 < out_w; ++x0) xs[x0] = std::min(s.w - 1, static_cast<int>(static_cast<long long>(x0) * s.w / out_w));
    Tensor<T> out(Shape{s.n, s.c, out_h, out_w});
    for (int n = 0; n < s.n; ++n) {
        for (int c = 0; c < s.c; ++c) {
            const T* src = x->value.channel(n, c);
            T* dst = out.channel(n, c);
            for (int y = 0; y < out_h; ++y) {
                for (int xx = 0; xx < out_w; ++xx) dst[y * out_w + xx] = src[ys[y] * s.w + xs[xx]];
            }
        }
    }
    return make_result<T>(std::move(out), {x}, [x, s, ys, xs, out_h, out_w](Node<T>& self) {
        for (int n = 0; n < s.n; ++n) {
            for (int c = 0; c < s.c; ++c) {
                T* g = x->grad_buffer().channel(n, c);
                const T* src = self.grad.channel(n, c);
                for (int y = 0; y < out_h; ++y) {
                    for (int xx = 0; xx < out_w; ++xx) g[ys[y] * s.w + xs[xx]] += src[y * out_w + xx];
                }
            }
        }
    });
}

namespace {

struct LinearTap {
    int i0, i1;
    double w0, w1;
};

std::vector<LinearTap> bilinear_taps(int in, int out) {
    std::vector<LinearTap> taps(out);
    const double scale = static_cast<double>(in) / out;
    for (int o = 0; o < out; ++o) {
        double src = (o + 0.5) * scale - 0.5;
        if (src < 0.0) src = 0.0;
        int i0 = static_cast<int>(src);
        if (i0 > in - 1) i0 = in - 1;
        const int i1 = std::min(i0 + 1, in - 1);
        const double l1 = src - i0;
        taps[o] = {i0, i1, 1.0 - l1, l1};
    }
    return taps;
}

}  // namespace

template <class T>
Var<T> resize_bilinear(const Var<T>& x, int out_h, int out_w) {
    const Shape s = x->value.shape;
    const auto ty = bilinear_taps(s.h, out_h);
    const auto tx = bilinear_taps(s.w, out_w);
    Tensor<T> out(Shape{s.n, s.c, out_h, out_w});
    for (int n = 0; n < s.n; ++n) {
        for (int c = 0; c < s.c; ++c) {
            const T* src = x->value.channel(n, c);
            T* dst = out.channel(n, c);
            for (int y = 0; y < out_h; ++y) {
                const auto& a = ty[y];
                const T* r0 = src + static_cast<std::size_t>(a.i0) * s.w;
                const T* r1 = src + static_cast<std::size_t>(a.i1) * s.w;
                for (int xx = 0; xx < out_w; ++xx) {
                    const auto& b = tx[xx];
                    const double top = b.w0 * r0[b.i0] + b.w1 * r0[b.i1];
                    const double bot = b.w0 * r1[b.i0] + b.w1 * r1[b.i1];
                    dst[static_cast<std::size_t>(y) * out_w + xx] = static_cast<T>(a.w0 * top + a.w1 * bot);
                }
            }
        }
    }
    return make_result<T>(std::move(out), {x}, [x, s, ty, tx, out_h, out_w](Node<T>& self) {
        for (int n = 0; n < s.n; ++n) {
            for (int c = 0; c < s.c; ++c) {
                T* g = x->grad_buffer().channel(n, c);
                const T* src = self.grad.channel(n, c);
                for (int y = 0; y < out_h; ++y) {
                    const auto& a = ty[y];
                    T* r0 = g + static_cast<std::size_t>(a.i0) * s.w;
                    T* r1 = g + static_cast<std::size_t>(a.i1) * s.w;
                    for (int xx = 0; xx < out_w; ++xx) {
                        const auto& b = tx[xx];
                        const double v = src[static_cast<std::size_t>(y) * out_w + xx];
                        r0[b.i0] += static_cast<T>(a.w0 * b.w0 * v);
                        r0[b.i1] += static_cast<T>(a.w0 * b.w1 * v);
                        r1[b.i0] += static_cast<T>(a.w1 * b.w0 * v);
                        r1[b.i1] += static_cast<T>(a.w1 * b.w1 * v);
                    }
                }
            }
        }
    });
}

#define DAMAGESEG_INSTANTIATE(T)                                                                     \
    template void backward<T>(const Var<T>&, Tensor<T>);                                             \
    template Var<T> conv2d<T>(const Var<T>&, const Var<T>&, const Var<T>&, int, int);                \
    template Var<T> batch_norm<T>(const Var<T>&, const Var<T>&, const Var<T>&, BatchNormStats<T>&,   \
                                  bool, T, T);                                                       \
    template Var<T> relu<T>(const Var<T>&);                                                          \
    template Var<T> add<T>(const Var<T>&, const Var<T>&);                                            \
    template Var<T> sub<T>(const Var<T>&, const Var<T>&);                                            \
    template Var<T> concat_channels<T>(const Var<T>&, const Var<T>&);                                \
    template Var<T> upsample_nearest<T>(const Var<T>&, int, int);                                    \
    template Var<T> resize_bilinear<T>(const Var<T>&, int, int);

DAMAGESEG_INSTANTIATE(float)
DAMAGESEG_INSTANTIATE(double)

#undef DAMAGESEG_INSTANTIATE

}  // namespace damageseg::nn
