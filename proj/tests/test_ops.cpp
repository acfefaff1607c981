#include "doctest.h"

#include "damageseg/nn/ops.hpp"

#include <cmath>
#include <functional>
#include <random>

using namespace damageseg::nn;

namespace {

Tensor<double> random_tensor(Shape s, std::mt19937_64& rng) {
    std::normal_distribution<double> d(0.0, 1.0);
    Tensor<double> t(s);
    for (auto& v : t.data) v = d(rng);
    return t;
}

/// Checks d(sum(out * probe))/d(input) for every input entry by central differences.
double worst_relative_error(const std::vector<Var<double>>& inputs,
                            const std::function<Var<double>(const std::vector<Var<double>>&)>& op,
                            std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const Var<double> out = op(inputs);
    const Tensor<double> probe = random_tensor(out->value.shape, rng);
    for (const auto& in : inputs) in->grad = Tensor<double>();
    backward(out, probe);

    auto objective = [&]() {
        NoGradGuard guard;
        const auto v = op(inputs)->value;
        double s = 0.0;
        for (std::size_t i = 0; i < v.size(); ++i) s += v.data[i] * probe.data[i];
        return s;
    };
    double worst = 0.0;
    for (const auto& in : inputs) {
        if (!in->requires_grad) continue;
        for (std::size_t i = 0; i < in->value.size(); ++i) {
            const double saved = in->value.data[i];
            const double h = 1e-6;
            in->value.data[i] = saved + h;
            const double up = objective();
            in->value.data[i] = saved - h;
            const double down = objective();
            in->value.data[i] = saved;
            const double numeric = (up - down) / (2 * h);
            const double analytic = in->grad.empty() ? 0.0 : in->grad.data[i];
            worst = std::max(worst, std::fabs(analytic - numeric) /
                                        std::max({std::fabs(analytic), std::fabs(numeric), 1e-6}));
        }
    }
    return worst;
}

}  // namespace

TEST_SUITE("ops") {

TEST_CASE("convolution gradients") {
    std::mt19937_64 rng(1);
    for (int stride : {1, 2}) {
        for (int k : {1, 3}) {
            auto x = parameter(random_tensor({2, 3, 6, 6}, rng));
            auto w = parameter(random_tensor({4, 3, k, k}, rng));
            auto b = parameter(random_tensor({1, 4, 1, 1}, rng));
            const double err = worst_relative_error(
                {x, w, b}, [&](const auto& v) { return conv2d(v[0], v[1], v[2], stride, k / 2); }, 2);
            CHECK(err < 1e-5);
        }
    }
}

TEST_CASE("convolution matches a direct sum") {
    std::mt19937_64 rng(2);
    auto x = constant(random_tensor({1, 2, 5, 5}, rng));
    auto w = constant(random_tensor({3, 2, 3, 3}, rng));
    const auto y = conv2d<double>(x, w, nullptr, 2, 1)->value;
    REQUIRE(y.shape == Shape{1, 3, 3, 3});
    for (int o = 0; o < 3; ++o) {
        for (int oy = 0; oy < 3; ++oy) {
            for (int ox = 0; ox < 3; ++ox) {
                double s = 0.0;
                for (int c = 0; c < 2; ++c) {
                    for (int ky = 0; ky < 3; ++ky) {
                        for (int kx = 0; kx < 3; ++kx) {
                            const int iy = oy * 2 - 1 + ky;
                            const int ix = ox * 2 - 1 + kx;
                            if (iy < 0 || ix < 0 || iy >= 5 || ix >= 5) continue;
                            s += x->value.at(0, c, iy, ix) * w->value.at(o, c, ky, kx);
                        }
                    }
                }
                CHECK(y.at(0, o, oy, ox) == doctest::Approx(s).epsilon(1e-12));
            }
        }
    }
}

TEST_CASE("batch norm gradients in training mode") {
    std::mt19937_64 rng(3);
    auto x = parameter(random_tensor({3, 4, 3, 3}, rng));
    auto g = parameter(random_tensor({1, 4, 1, 1}, rng));
    auto b = parameter(random_tensor({1, 4, 1, 1}, rng));
    BatchNormStats<double> stats{Tensor<double>({1, 4, 1, 1}), Tensor<double>({1, 4, 1, 1}, 1.0)};
    const double err = worst_relative_error(
        {x, g, b}, [&](const auto& v) { return batch_norm(v[0], v[1], v[2], stats, true); }, 4);
    CHECK(err < 1e-5);
}

TEST_CASE("batch norm running statistics") {
    std::mt19937_64 rng(4);
    auto x = constant(random_tensor({2, 1, 4, 4}, rng));
    auto g = constant(Tensor<double>({1, 1, 1, 1}, 1.0));
    auto b = constant(Tensor<double>({1, 1, 1, 1}, 0.0));
    BatchNormStats<double> stats{Tensor<double>({1, 1, 1, 1}), Tensor<double>({1, 1, 1, 1}, 1.0)};
    batch_norm(x, g, b, stats, true);
    double mean = 0.0, var = 0.0;
    for (double v : x->value.data) mean += v / 32.0;
    for (double v : x->value.data) var += (v - mean) * (v - mean) / 31.0;
    CHECK(stats.mean.data[0] == doctest::Approx(0.1 * mean).epsilon(1e-12));
    CHECK(stats.var.data[0] == doctest::Approx(0.9 + 0.1 * var).epsilon(1e-12));
    const auto y = batch_norm(x, g, b, stats, false)->value;
    CHECK(y.data[0] == doctest::Approx((x->value.data[0] - stats.mean.data[0]) / std::sqrt(stats.var.data[0] + 1e-5)));
}

TEST_CASE("elementwise, concat and resize gradients") {
    std::mt19937_64 rng(5);
    auto a = parameter(random_tensor({2, 3, 4, 4}, rng));
    auto b = parameter(random_tensor({2, 3, 4, 4}, rng));
    auto c = parameter(random_tensor({2, 2, 4, 4}, rng));
    CHECK(worst_relative_error({a}, [](const auto& v) { return relu(v[0]); }, 1) < 1e-5);
    CHECK(worst_relative_error({a, b}, [](const auto& v) { return add(v[0], v[1]); }, 1) < 1e-5);
    CHECK(worst_relative_error({a, b}, [](const auto& v) { return sub(v[0], v[1]); }, 1) < 1e-5);
    CHECK(worst_relative_error({a, c}, [](const auto& v) { return concat_channels(v[0], v[1]); }, 1) < 1e-5);
    CHECK(worst_relative_error({a}, [](const auto& v) { return upsample_nearest(v[0], 8, 8); }, 1) < 1e-5);
    CHECK(worst_relative_error({a}, [](const auto& v) { return resize_bilinear(v[0], 8, 8); }, 1) < 1e-5);
    CHECK(worst_relative_error({a}, [](const auto& v) { return resize_bilinear(v[0], 3, 5); }, 1) < 1e-5);
}

TEST_CASE("bilinear resize matches half-pixel interpolation") {
    Tensor<double> t({1, 1, 1, 2});
    t.data = {0.0, 1.0};
    const auto y = resize_bilinear(constant(t), 1, 4)->value;
    // Output centres map to -0.25, 0.25, 0.75, 1.25 in input pixels (clamped at the border).
    CHECK(y.data == std::vector<double>{0.0, 0.25, 0.75, 1.0});
}

}  // TEST_SUITE
