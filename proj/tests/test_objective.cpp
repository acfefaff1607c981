#include "doctest.h"

#include "damageseg/error.hpp"
#include "damageseg/objective.hpp"
#include "oracles.hpp"

#include <cmath>

using namespace damageseg;
using nn::Tensor;

namespace {

Tensor<double> random_logits(std::mt19937_64& rng, int n, int h, int w, double scale = 3.0) {
    Tensor<double> t({n, 5, h, w});
    std::normal_distribution<double> d(0.0, scale);
    for (auto& v : t.data) v = d(rng);
    return t;
}

std::vector<double> plane_of(const Tensor<double>& t, int n) {
    const std::size_t len = 5 * t.shape.plane();
    return {t.data.begin() + n * len, t.data.begin() + (n + 1) * len};
}

}  // namespace

TEST_SUITE("objective") {

TEST_CASE("uniform logits give ln 5 for any target and weights") {
    std::mt19937_64 rng(1);
    for (int trial = 0; trial < 10; ++trial) {
        Tensor<double> logits({1, 5, 8, 8}, 0.37 * trial);
        const Mask t = oracle::random_mask(rng, 8, 8);
        ClassWeights w{{0.5 + trial, 1.0, 2.0, 3.0, 0.25}};
        CHECK(std::fabs(weighted_cross_entropy(logits, t, w).value - std::log(5.0)) <= 1e-9);
    }
}

TEST_CASE("confident correct logits drive the loss to zero") {
    Mask t(4, 4, 2);
    Tensor<double> logits({1, 5, 4, 4}, 0.0);
    for (int y = 0; y < 4; ++y) {
        for (int x = 0; x < 4; ++x) logits.at(0, 2, y, x) = 60.0;
    }
    CHECK(weighted_cross_entropy(logits, t, ClassWeights{}).value < 1e-20);
}

TEST_CASE("matches the scalar loop oracle") {
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 20; ++trial) {
        const auto logits = random_logits(rng, 1, 8, 8);
        const Mask t = oracle::random_mask(rng, 8, 8);
        const ClassWeights w;
        const double got = weighted_cross_entropy(logits, t, w).value;
        CHECK(std::fabs(got - oracle::weighted_ce(plane_of(logits, 0), 8, 8, t, w.w)) <= 1e-6);
    }
}

TEST_CASE("batch reduction pools pixels across samples") {
    std::mt19937_64 rng(3);
    const auto logits = random_logits(rng, 2, 6, 6);
    const Mask a = oracle::random_mask(rng, 6, 6);
    Mask b(6, 6, 0);  // heavy background in the second sample
    const ClassWeights w;
    double num = 0.0, den = 0.0;
    for (int n = 0; n < 2; ++n) {
        const Mask& t = n == 0 ? a : b;
        double sw = 0.0;
        for (auto v : t.labels) sw += w.w[v];
        num += oracle::weighted_ce(plane_of(logits, n), 6, 6, t, w.w) * sw;
        den += sw;
    }
    CHECK(weighted_cross_entropy(logits, {&a, &b}, w).value == doctest::Approx(num / den).epsilon(1e-12));
}

TEST_CASE("analytic gradient matches central differences") {
    std::mt19937_64 rng(4);
    auto logits = random_logits(rng, 1, 8, 8, 1.0);
    const Mask t = oracle::random_mask(rng, 8, 8);
    const ClassWeights w;
    const auto res = weighted_cross_entropy(logits, t, w, true);
    for (std::size_t i = 0; i < logits.size(); ++i) {
        const double saved = logits.data[i];
        const double h = 1e-5;
        logits.data[i] = saved + h;
        const double up = weighted_cross_entropy(logits, t, w, false).value;
        logits.data[i] = saved - h;
        const double down = weighted_cross_entropy(logits, t, w, false).value;
        logits.data[i] = saved;
        const double numeric = (up - down) / (2 * h);
        const double analytic = res.grad.data[i];
        CHECK(std::fabs(analytic - numeric) / std::max({std::fabs(analytic), std::fabs(numeric), 1e-6}) < 1e-4);
    }
}

TEST_CASE("input validation") {
    Tensor<double> logits({1, 5, 4, 4});
    Mask bad(4, 4, 7);
    CHECK_THROWS_AS(weighted_cross_entropy(logits, bad, ClassWeights{}), ValidationError);
    CHECK_THROWS_AS(weighted_cross_entropy(logits, Mask(3, 4), ClassWeights{}), ShapeError);
    CHECK_THROWS_AS(weighted_cross_entropy(Tensor<double>({1, 4, 4, 4}), Mask(4, 4), ClassWeights{}), ShapeError);
    CHECK_THROWS_AS(validate_class_weights(ClassWeights{{1, -1, 1, 1, 1}}), ArgumentError);
    CHECK_THROWS_AS(validate_class_weights(ClassWeights{{0, 0, 0, 0, 0}}), ArgumentError);
}

}  // TEST_SUITE
