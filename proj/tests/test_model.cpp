#include "doctest.h"

#include "damageseg/error.hpp"
#include "damageseg/model.hpp"
#include "damageseg/nn/ops.hpp"
#include "damageseg/objective.hpp"
#include "oracles.hpp"

#include <cmath>

using namespace damageseg;
using nn::Shape;
using nn::Tensor;

namespace {

template <class T>
Tensor<T> random_tensor(Shape s, std::uint64_t seed, double scale = 1.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> d(0.0, scale);
    Tensor<T> t(s);
    for (auto& v : t.data) v = static_cast<T>(d(rng));
    return t;
}

FeaturePyramid<double> random_pyramid(const std::array<int, 5>& channels, int size, std::uint64_t seed) {
    FeaturePyramid<double> p;
    for (int l = 0; l < 5; ++l) {
        const int side = size / kPyramidStrides[l];
        p.levels[l] = nn::constant(random_tensor<double>({1, channels[l], side, side}, seed + l));
    }
    return p;
}

}  // namespace

TEST_SUITE("model") {

TEST_CASE("registry and config parsing") {
    CHECK(lookup_encoder("tiny-a").channels == std::array<int, 5>{16, 32, 64, 128, 256});
    CHECK(lookup_encoder("tiny-b").channels == std::array<int, 5>{32, 64, 128, 256, 512});
    CHECK_THROWS_AS(lookup_encoder("resnet-9000"), ConfigError);
    CHECK_THROWS_AS(parse_fusion_mode("multiply"), ConfigError);
    CHECK(parse_fusion_mode(to_string(FusionMode::kSiameseSubtract)) == FusionMode::kSiameseSubtract);
    CHECK(parse_decoder_kind("fpn") == DecoderKind::kFpn);
    ModelConfig bad;
    bad.encoder = "unknown";
    CHECK_THROWS_AS(build_model(bad, 0), ConfigError);
}

TEST_CASE("initialisation is deterministic per seed") {
    ModelConfig c;
    auto a = build_model(c, 7);
    auto b = build_model(c, 7);
    auto d = build_model(c, 8);
    REQUIRE(a.parameters().size() == b.parameters().size());
    bool any_diff = false;
    for (std::size_t i = 0; i < a.parameters().size(); ++i) {
        CHECK(a.parameters()[i].name == b.parameters()[i].name);
        CHECK(a.parameters()[i].var->value.data == b.parameters()[i].var->value.data);
        any_diff = any_diff || a.parameters()[i].var->value.data != d.parameters()[i].var->value.data;
    }
    CHECK(any_diff);
    CHECK(a.parameter_count() > 0);
}

TEST_CASE("siamese modes share one encoder") {
    ModelConfig s;
    ModelConfig i;
    i.mode = FusionMode::kInputConcat;
    const auto siamese = build_model(s, 0);
    const auto input = build_model(i, 0);
    // Same number of encoder tensors: the siamese model does not duplicate them.
    CHECK(siamese.encoder_parameter_tensors() == input.encoder_parameter_tensors());
}

TEST_CASE("decoder input widths by fusion mode") {
    ModelConfig concat;
    ModelConfig subtract;
    subtract.mode = FusionMode::kSiameseSubtract;
    const auto a = build_model(concat, 0).decoder_input_channels();
    const auto b = build_model(subtract, 0).decoder_input_channels();
    for (int l = 0; l < 5; ++l) CHECK(b[l] * 2 == a[l]);
}

TEST_CASE("encoder pyramid shapes") {
    auto m = build_model(ModelConfig{}, 1);
    const auto pyr = encode(m, random_tensor<float>({1, 3, 64, 64}, 2));
    for (int l = 0; l < 5; ++l) {
        CHECK(pyr.levels[l]->value.shape.h == 64 / kPyramidStrides[l]);
        CHECK(pyr.levels[l]->value.shape.w == 64 / kPyramidStrides[l]);
        CHECK(pyr.levels[l]->value.shape.c == lookup_encoder("tiny-a").channels[l]);
    }
    CHECK_THROWS_AS(encode(m, random_tensor<float>({1, 3, 500, 500}, 2)), ShapeError);
    CHECK_THROWS_AS(encode(m, random_tensor<float>({1, 6, 64, 64}, 2)), ShapeError);

    ModelConfig ic;
    ic.mode = FusionMode::kInputConcat;
    auto im = build_model(ic, 1);
    CHECK_NOTHROW(encode(im, random_tensor<float>({1, 6, 64, 64}, 2)));
    CHECK_THROWS_AS(encode(im, random_tensor<float>({1, 3, 64, 64}, 2)), ShapeError);
}

TEST_CASE("fusion algebra on random pyramids") {
    const std::array<int, 5> ch{16, 32, 64, 128, 256};
    const auto a = random_pyramid(ch, 64, 1);
    const auto b = random_pyramid(ch, 64, 100);
    const auto ab = fuse_pyramids(a, b, FuseOp::kSubtract);
    const auto ba = fuse_pyramids(b, a, FuseOp::kSubtract);
    const auto aa = fuse_pyramids(a, a, FuseOp::kSubtract);
    const auto cat = fuse_pyramids(a, a, FuseOp::kConcat);
    for (int l = 0; l < 5; ++l) {
        for (std::size_t i = 0; i < ab.levels[l]->value.size(); ++i) {
            CHECK(ab.levels[l]->value.data[i] == -ba.levels[l]->value.data[i]);
            CHECK(aa.levels[l]->value.data[i] == 0.0);
        }
        CHECK(cat.channels()[l] == 2 * ch[l]);
        const auto& v = cat.levels[l]->value;
        const std::size_t half = a.levels[l]->value.size();
        CHECK(std::equal(v.data.begin(), v.data.begin() + half, a.levels[l]->value.data.begin()));
    }
    auto wrong = random_pyramid(ch, 32, 5);
    CHECK_THROWS_AS(fuse_pyramids(a, wrong, FuseOp::kSubtract), FusionError);
}

TEST_CASE("decoder output resolution and finiteness") {
    for (DecoderKind kind : {DecoderKind::kUnet, DecoderKind::kFpn}) {
        ModelConfig c;
        c.decoder = kind;
        c.mode = FusionMode::kSiameseSubtract;
        auto m = build_model<double>(c, 3);
        const auto ch = m.decoder_input_channels();
        FeaturePyramid<double> zero;
        for (int l = 0; l < 5; ++l) {
            const int side = 64 / kPyramidStrides[l];
            zero.levels[l] = nn::constant(Tensor<double>({1, ch[l], side, side}));
        }
        const auto logits = decode(m, zero);
        CHECK(logits.shape == Shape{1, 5, 64, 64});
        for (double v : logits.data) CHECK(std::isfinite(v));

        ModelConfig wrong = c;
        wrong.mode = FusionMode::kSiameseConcat;
        auto other = build_model<double>(wrong, 3);
        CHECK_THROWS_AS(decode(other, zero), ConfigError);
    }
}

TEST_CASE("prediction probabilities and identical-pair behaviour of subtraction") {
    ModelConfig c;
    c.mode = FusionMode::kSiameseSubtract;
    auto m = build_model(c, 4);
    std::mt19937_64 rng(3);
    const Image x = oracle::random_image(rng, 64, 64);
    const Image y = oracle::random_image(rng, 64, 64);
    const auto px = predict_pair(m, x, x);
    const auto py = predict_pair(m, y, y);
    CHECK(px.logits.data == py.logits.data);
    const auto pxy = predict_pair(m, x, y);
    for (std::size_t i = 0; i < pxy.probabilities.shape.plane(); ++i) {
        double s = 0.0;
        for (int k = 0; k < 5; ++k) s += pxy.probabilities.channel(0, k)[i];
        CHECK(s == doctest::Approx(1.0).epsilon(1e-5));
    }
    CHECK(argmax_mask(pxy.probabilities).width == 64);
}

TEST_CASE("argmax ties go to the lower class") {
    Tensor<float> t({1, 5, 1, 2}, 0.2f);
    t.at(0, 3, 0, 1) = 0.5f;
    const Mask m = argmax_mask(t);
    CHECK(m.at(0, 0) == 0);
    CHECK(m.at(1, 0) == 3);
}

TEST_CASE("float and double models agree") {
    auto f = build_model(ModelConfig{}, 9);
    auto d = f.cast<double>();
    std::mt19937_64 rng(1);
    const Image a = oracle::random_image(rng, 32, 32);
    const Image b = oracle::random_image(rng, 32, 32);
    const auto pf = predict_pair(f, a, b);
    const auto pd = predict_pair(d, a, b);
    for (std::size_t i = 0; i < pf.logits.size(); ++i) {
        CHECK(pf.logits.data[i] == doctest::Approx(pd.logits.data[i]).epsilon(1e-3).scale(1.0));
    }
}

TEST_CASE("model gradients match central differences") {
    for (FusionMode mode : {FusionMode::kSiameseConcat, FusionMode::kSiameseSubtract, FusionMode::kInputConcat}) {
        for (DecoderKind dec : {DecoderKind::kUnet, DecoderKind::kFpn}) {
            const std::string mode_name = to_string(mode);
            CAPTURE(mode_name);
            const std::string dec_name = to_string(dec);
            CAPTURE(dec_name);
            ModelConfig c;
            c.mode = mode;
            c.decoder = dec;
            c.decoder_width = 8;
            auto m = build_model<double>(c, 11);
            std::mt19937_64 rng(2);
            const auto pre = random_tensor<double>({2, 3, 64, 64}, 21);
            const auto post = random_tensor<double>({2, 3, 64, 64}, 22);
            const Mask m0 = oracle::random_mask(rng, 64, 64);
            const Mask m1 = oracle::random_mask(rng, 64, 64);
            const std::vector<const Mask*> targets{&m0, &m1};
            const ClassWeights w;

            auto loss_of = [&]() {
                nn::NoGradGuard guard;
                auto logits = m.forward(nn::constant(pre), nn::constant(post), true);
                return weighted_cross_entropy(logits->value, targets, w, false).value;
            };

            for (const auto& p : m.parameters()) p.var->grad = Tensor<double>();
            auto logits = m.forward(nn::constant(pre), nn::constant(post), true);
            auto loss = weighted_cross_entropy(logits->value, targets, w, true);
            nn::backward(logits, std::move(loss.grad));

            std::mt19937_64 pick(5);
            double worst = 0.0;
            for (const auto& p : m.parameters()) {
                auto& value = p.var->value.data;
                for (int k = 0; k < 2; ++k) {
                    const std::size_t i = pick() % value.size();
                    const double h = 1e-6;
                    const double saved = value[i];
                    value[i] = saved + h;
                    const double up = loss_of();
                    value[i] = saved - h;
                    const double down = loss_of();
                    value[i] = saved;
                    const double numeric = (up - down) / (2 * h);
                    const double analytic = p.var->grad.empty() ? 0.0 : p.var->grad.data[i];
                    // The 1e-4 floor absorbs round-off of the differenced loss (about 1e-9 here).
                    const double rel =
                        std::fabs(analytic - numeric) / std::max({std::fabs(analytic), std::fabs(numeric), 1e-4});
                    if (rel > 1e-4) MESSAGE(p.name << "[" << i << "] analytic " << analytic << " numeric " << numeric);
                    worst = std::max(worst, rel);
                }
            }
            CHECK(worst < 1e-4);
        }
    }
}

}  // TEST_SUITE
