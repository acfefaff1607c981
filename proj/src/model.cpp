#include "damageseg/model.hpp"

#include "damageseg/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <mutex>
#include <random>

namespace damageseg {

FusionMode parse_fusion_mode(const std::string& name) {
    if (name == "input-concat") return FusionMode::kInputConcat;
    if (name == "siamese-concat") return FusionMode::kSiameseConcat;
    if (name == "siamese-subtract") return FusionMode::kSiameseSubtract;
    throw ConfigError("unknown fusion mode '" + name +
                      "' (expected input-concat, siamese-concat or siamese-subtract)");
}

const char* to_string(FusionMode mode) {
    switch (mode) {
        case FusionMode::kInputConcat: return "input-concat";
        case FusionMode::kSiameseConcat: return "siamese-concat";
        case FusionMode::kSiameseSubtract: return "siamese-subtract";
    }
    return "?";
}

DecoderKind parse_decoder_kind(const std::string& name) {
    if (name == "unet") return DecoderKind::kUnet;
    if (name == "fpn") return DecoderKind::kFpn;
    throw ConfigError("unknown decoder '" + name + "' (expected unet or fpn)");
}

const char* to_string(DecoderKind kind) { return kind == DecoderKind::kUnet ? "unet" : "fpn"; }

// ---------------------------------------------------------------------------
// Encoder registry

namespace {

std::mutex& registry_mutex() {
    static std::mutex m;
    return m;
}

std::map<std::string, EncoderSpec>& registry() {
    static std::map<std::string, EncoderSpec> r = {
        {"tiny-a", {"tiny-a", {16, 32, 64, 128, 256}, 2}},
        {"tiny-b", {"tiny-b", {32, 64, 128, 256, 512}, 2}},
    };
    return r;
}

}  // namespace

const EncoderSpec& lookup_encoder(const std::string& name) {
    std::lock_guard lock(registry_mutex());
    const auto it = registry().find(name);
    if (it == registry().end()) throw ConfigError("unknown encoder '" + name + "'");
    return it->second;
}

void register_encoder(const EncoderSpec& spec) {
    if (spec.name.empty()) throw ConfigError("encoder name must not be empty");
    for (int c : spec.channels) {
        if (c <= 0) throw ConfigError("encoder '" + spec.name + "' has non-positive channels");
    }
    if (spec.convs_per_stage < 1) throw ConfigError("encoder '" + spec.name + "' needs >= 1 conv per stage");
    std::lock_guard lock(registry_mutex());
    registry()[spec.name] = spec;
}

std::vector<std::string> registered_encoders() {
    std::lock_guard lock(registry_mutex());
    std::vector<std::string> names;
    for (const auto& [name, _] : registry()) names.push_back(name);
    return names;
}

template <class T>
std::array<int, 5> FeaturePyramid<T>::channels() const {
    std::array<int, 5> c{};
    for (int i = 0; i < 5; ++i) c[i] = levels[i] ? levels[i]->value.shape.c : 0;
    return c;
}

// ---------------------------------------------------------------------------
// Layers

namespace {

template <class T>
struct ConvUnit {
    nn::Var<T> weight;
    nn::Var<T> bias;
    nn::Var<T> gamma;
    nn::Var<T> beta;
    nn::BatchNormStats<T> stats;
    int stride = 1;
    int pad = 0;
    bool activation = true;

    nn::Var<T> operator()(const nn::Var<T>& x, bool training) {
        auto y = nn::conv2d(x, weight, bias, stride, pad);
        if (gamma) y = nn::batch_norm(y, gamma, beta, stats, training);
        if (activation) y = nn::relu(y);
        return y;
    }
};

struct UnitSpec {
    int in = 0;
    int out = 0;
    int kernel = 3;
    int stride = 1;
    bool batch_norm = true;
    bool activation = true;
};

}  // namespace

template <class T>
struct BasicSegmentationModel<T>::Impl {
    std::vector<std::unique_ptr<ConvUnit<T>>> encoder;  // stage-major
    std::vector<int> stage_end;                         // index one past each stage's last unit
    std::vector<std::unique_ptr<ConvUnit<T>>> laterals;
    std::vector<std::unique_ptr<ConvUnit<T>>> blocks;   // unet merge blocks or fpn smoothing heads
    std::unique_ptr<ConvUnit<T>> head;
    std::array<int, 5> encoder_channels{};
    std::array<int, 5> decoder_inputs{};
};

template <class T>
BasicSegmentationModel<T>::BasicSegmentationModel(const ModelConfig& config, std::uint64_t seed)
    : config_(config), impl_(std::make_unique<Impl>()) {
    if (config.num_classes != 5) throw ConfigError("num_classes must be 5");
    if (config.decoder_width < 1) throw ConfigError("decoder_width must be positive");
    const EncoderSpec spec = lookup_encoder(config.encoder);

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);

    auto make_unit = [&](const std::string& name, const UnitSpec& u) {
        auto unit = std::make_unique<ConvUnit<T>>();
        nn::Tensor<T> w(nn::Shape{u.out, u.in, u.kernel, u.kernel});
        const double fan_in = static_cast<double>(u.in) * u.kernel * u.kernel;
        const double stddev = std::sqrt((u.activation ? 2.0 : 1.0) / fan_in);
        for (auto& v : w.data) v = static_cast<T>(normal(rng) * stddev);
        unit->weight = nn::parameter(std::move(w));
        params_.push_back({name + ".weight", unit->weight});
        if (u.batch_norm) {
            unit->gamma = nn::parameter(nn::Tensor<T>(nn::Shape{1, u.out, 1, 1}, T(1)));
            unit->beta = nn::parameter(nn::Tensor<T>(nn::Shape{1, u.out, 1, 1}, T(0)));
            unit->stats.mean = nn::Tensor<T>(nn::Shape{1, u.out, 1, 1}, T(0));
            unit->stats.var = nn::Tensor<T>(nn::Shape{1, u.out, 1, 1}, T(1));
            params_.push_back({name + ".bn.gamma", unit->gamma});
            params_.push_back({name + ".bn.beta", unit->beta});
        } else {
            unit->bias = nn::parameter(nn::Tensor<T>(nn::Shape{1, u.out, 1, 1}, T(0)));
            params_.push_back({name + ".bias", unit->bias});
        }
        unit->stride = u.stride;
        unit->pad = u.kernel / 2;
        unit->activation = u.activation;
        return unit;
    };
    auto register_buffers = [&](const std::string& name, ConvUnit<T>& unit) {
        if (!unit.gamma) return;
        buffers_.push_back({name + ".bn.running_mean", &unit.stats.mean});
        buffers_.push_back({name + ".bn.running_var", &unit.stats.var});
    };

    Impl& m = *impl_;
    m.encoder_channels = spec.channels;
    int in = config.input_channels();
    for (int s = 0; s < 5; ++s) {
        for (int j = 0; j < spec.convs_per_stage; ++j) {
            const std::string name = "encoder.stage" + std::to_string(s) + ".conv" + std::to_string(j);
            m.encoder.push_back(make_unit(name, {in, spec.channels[s], 3, j == 0 ? 2 : 1, true, true}));
            register_buffers(name, *m.encoder.back());
            in = spec.channels[s];
        }
        m.stage_end.push_back(static_cast<int>(m.encoder.size()));
    }

    const int D = config.decoder_width;
    for (int i = 0; i < 5; ++i) {
        m.decoder_inputs[i] =
            spec.channels[i] * (config.mode == FusionMode::kSiameseConcat ? 2 : 1);
    }
    const bool unet = config.decoder == DecoderKind::kUnet;
    for (int i = 0; i < 5; ++i) {
        const std::string name = "decoder.lateral" + std::to_string(i);
        // U-Net laterals normalise and activate; FPN laterals are plain projections.
        m.laterals.push_back(make_unit(name, {m.decoder_inputs[i], D, 1, 1, unet, unet}));
        register_buffers(name, *m.laterals.back());
    }
    const int nblocks = unet ? 4 : 5;
    for (int i = 0; i < nblocks; ++i) {
        const std::string name = (unet ? "decoder.block" : "decoder.smooth") + std::to_string(i);
        m.blocks.push_back(make_unit(name, {unet ? 2 * D : D, D, 3, 1, true, true}));
        register_buffers(name, *m.blocks.back());
    }
    m.head = make_unit("decoder.head", {D, config.num_classes, 3, 1, false, false});
}

template <class T>
BasicSegmentationModel<T>::~BasicSegmentationModel() = default;
template <class T>
BasicSegmentationModel<T>::BasicSegmentationModel(BasicSegmentationModel&&) noexcept = default;
template <class T>
BasicSegmentationModel<T>& BasicSegmentationModel<T>::operator=(BasicSegmentationModel&&) noexcept = default;

template <class T>
std::int64_t BasicSegmentationModel<T>::parameter_count() const {
    std::int64_t n = 0;
    for (const auto& p : params_) n += static_cast<std::int64_t>(p.var->value.size());
    return n;
}

template <class T>
std::size_t BasicSegmentationModel<T>::encoder_parameter_tensors() const {
    return static_cast<std::size_t>(std::count_if(params_.begin(), params_.end(), [](const auto& p) {
        return p.name.rfind("encoder.", 0) == 0;
    }));
}

template <class T>
std::array<int, 5> BasicSegmentationModel<T>::decoder_input_channels() const {
    return impl_->decoder_inputs;
}

template <class T>
std::array<int, 5> BasicSegmentationModel<T>::encoder_channels() const {
    return impl_->encoder_channels;
}

template <class T>
FeaturePyramid<T> BasicSegmentationModel<T>::encode(const nn::Var<T>& image, bool training) {
    const nn::Shape s = image->value.shape;
    if (s.c != config_.input_channels()) {
        throw ShapeError(std::string("encoder for mode ") + to_string(config_.mode) + " expects " +
                         std::to_string(config_.input_channels()) + " input channels, got " +
                         std::to_string(s.c));
    }
    if (s.h % 32 != 0 || s.w % 32 != 0 || s.h == 0 || s.w == 0) {
        throw ShapeError("input " + std::to_string(s.h) + "x" + std::to_string(s.w) +
                         " is not divisible by 32 (required by the stride-32 pyramid)");
    }
    FeaturePyramid<T> pyramid;
    nn::Var<T> x = image;
    std::size_t unit = 0;
    for (int level = 0; level < 5; ++level) {
        for (; unit < static_cast<std::size_t>(impl_->stage_end[level]); ++unit) {
            x = (*impl_->encoder[unit])(x, training);
        }
        pyramid.levels[level] = x;
    }
    return pyramid;
}

template <class T>
FeaturePyramid<T> fuse_pyramids(const FeaturePyramid<T>& a, const FeaturePyramid<T>& b, FuseOp op) {
    FeaturePyramid<T> out;
    for (int i = 0; i < 5; ++i) {
        const nn::Shape sa = a.levels[i]->value.shape;
        const nn::Shape sb = b.levels[i]->value.shape;
        if (!(sa == sb)) {
            throw FusionError("pyramid level " + std::to_string(i) + " (stride " +
                              std::to_string(kPyramidStrides[i]) + ") shape mismatch: " + sa.str() +
                              " vs " + sb.str());
        }
        out.levels[i] = op == FuseOp::kConcat ? nn::concat_channels(a.levels[i], b.levels[i])
                                              : nn::sub(a.levels[i], b.levels[i]);
    }
    return out;
}

template <class T>
FeaturePyramid<T> BasicSegmentationModel<T>::fuse(const FeaturePyramid<T>& a,
                                                  const FeaturePyramid<T>& b) const {
    switch (config_.mode) {
        case FusionMode::kSiameseConcat: return fuse_pyramids(a, b, FuseOp::kConcat);
        case FusionMode::kSiameseSubtract: return fuse_pyramids(a, b, FuseOp::kSubtract);
        case FusionMode::kInputConcat: return a;
    }
    return a;
}

template <class T>
nn::Var<T> BasicSegmentationModel<T>::decode(const FeaturePyramid<T>& pyramid, bool training) {
    Impl& m = *impl_;
    for (int i = 0; i < 5; ++i) {
        if (!pyramid.levels[i]) throw ConfigError("decode: pyramid level " + std::to_string(i) + " missing");
        const int c = pyramid.levels[i]->value.shape.c;
        if (c != m.decoder_inputs[i]) {
            throw ConfigError("decoder expects " + std::to_string(m.decoder_inputs[i]) +
                              " channels at stride " + std::to_string(kPyramidStrides[i]) + ", got " +
                              std::to_string(c));
        }
    }
    const nn::Shape s0 = pyramid.levels[0]->value.shape;
    nn::Var<T> x;
    if (config_.decoder == DecoderKind::kUnet) {
        x = (*m.laterals[4])(pyramid.levels[4], training);
        for (int i = 3; i >= 0; --i) {
            const nn::Shape si = pyramid.levels[i]->value.shape;
            x = nn::upsample_nearest(x, si.h, si.w);
            x = nn::concat_channels(x, (*m.laterals[i])(pyramid.levels[i], training));
            x = (*m.blocks[i])(x, training);
        }
    } else {
        std::array<nn::Var<T>, 5> top_down;
        top_down[4] = (*m.laterals[4])(pyramid.levels[4], training);
        for (int i = 3; i >= 0; --i) {
            const nn::Shape si = pyramid.levels[i]->value.shape;
            top_down[i] = nn::add((*m.laterals[i])(pyramid.levels[i], training),
                                  nn::upsample_nearest(top_down[i + 1], si.h, si.w));
        }
        x = (*m.blocks[0])(top_down[0], training);
        for (int i = 1; i < 5; ++i) {
            x = nn::add(x, nn::resize_bilinear((*m.blocks[i])(top_down[i], training), s0.h, s0.w));
        }
    }
    x = nn::resize_bilinear(x, 2 * s0.h, 2 * s0.w);
    return (*m.head)(x, training);
}

template <class T>
nn::Var<T> BasicSegmentationModel<T>::forward(const nn::Var<T>& pre, const nn::Var<T>& post,
                                              bool training) {
    const nn::Shape a = pre->value.shape;
    const nn::Shape b = post->value.shape;
    if (!(a == b)) throw ShapeError("pre " + a.str() + " and post " + b.str() + " differ in shape");
    if (config_.mode == FusionMode::kInputConcat) {
        return decode(encode(nn::concat_channels(pre, post), training), training);
    }
    const auto fa = encode(pre, training);
    const auto fb = encode(post, training);
    return decode(fuse(fa, fb), training);
}

template <class T>
template <class U>
BasicSegmentationModel<U> BasicSegmentationModel<T>::cast() const {
    BasicSegmentationModel<U> out(config_, 0);
    for (std::size_t i = 0; i < params_.size(); ++i) {
        out.params_[i].var->value = nn::tensor_cast<U>(params_[i].var->value);
    }
    for (std::size_t i = 0; i < buffers_.size(); ++i) {
        *out.buffers_[i].tensor = nn::tensor_cast<U>(*buffers_[i].tensor);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Free functions

template <class T>
FeaturePyramid<T> encode(BasicSegmentationModel<T>& model, const nn::Tensor<T>& image) {
    nn::NoGradGuard guard;
    return model.encode(nn::constant(image), false);
}

template <class T>
nn::Tensor<T> decode(BasicSegmentationModel<T>& model, const FeaturePyramid<T>& pyramid) {
    nn::NoGradGuard guard;
    return model.decode(pyramid, false)->value;
}

template <class T>
nn::Tensor<T> image_to_tensor(const Image& image) {
    return stack_images<T>({&image});
}

template <class T>
nn::Tensor<T> stack_images(const std::vector<const Image*>& images) {
    if (images.empty()) throw ArgumentError("stack_images: empty batch");
    const int w = images[0]->width;
    const int h = images[0]->height;
    nn::Tensor<T> t(nn::Shape{static_cast<int>(images.size()), 3, h, w});
    for (std::size_t n = 0; n < images.size(); ++n) {
        const Image& img = *images[n];
        if (img.width != w || img.height != h) throw ShapeError("stack_images: batch sizes differ");
        for (int c = 0; c < 3; ++c) {
            T* dst = t.channel(static_cast<int>(n), c);
            for (std::size_t i = 0; i < t.shape.plane(); ++i) {
                dst[i] = static_cast<T>((img.pixels[i * 3 + c] / 255.0 - 0.5) / 0.25);
            }
        }
    }
    return t;
}

template <class T>
nn::Tensor<T> softmax_channels(const nn::Tensor<T>& logits) {
    nn::Tensor<T> p(logits.shape);
    const int C = logits.shape.c;
    const std::size_t plane = logits.shape.plane();
    std::vector<double> e(C);
    for (int n = 0; n < logits.shape.n; ++n) {
        for (std::size_t i = 0; i < plane; ++i) {
            double mx = -std::numeric_limits<double>::infinity();
            for (int c = 0; c < C; ++c) mx = std::max(mx, static_cast<double>(logits.channel(n, c)[i]));
            double sum = 0.0;
            for (int c = 0; c < C; ++c) {
                e[c] = std::exp(logits.channel(n, c)[i] - mx);
                sum += e[c];
            }
            for (int c = 0; c < C; ++c) p.channel(n, c)[i] = static_cast<T>(e[c] / sum);
        }
    }
    return p;
}

template <class T>
Prediction<T> predict_pair(BasicSegmentationModel<T>& model, const Image& pre, const Image& post) {
    if (pre.width != post.width || pre.height != post.height) {
        throw ShapeError("predict_pair: pre and post images differ in size");
    }
    nn::NoGradGuard guard;
    auto logits = model.forward(nn::constant(image_to_tensor<T>(pre)),
                                nn::constant(image_to_tensor<T>(post)), false);
    Prediction<T> out;
    out.probabilities = softmax_channels(logits->value);
    out.logits = std::move(logits->value);
    return out;
}

template <class T>
Mask argmax_mask(const nn::Tensor<T>& scores) {
    const nn::Shape s = scores.shape;
    Mask m(s.w, s.h);
    for (std::size_t i = 0; i < s.plane(); ++i) {
        int best = 0;
        for (int c = 1; c < s.c; ++c) {
            if (scores.channel(0, c)[i] > scores.channel(0, best)[i]) best = c;
        }
        m.labels[i] = static_cast<std::uint8_t>(best);
    }
    return m;
}

#define DAMAGESEG_INSTANTIATE(T)                                                                  \
    template struct FeaturePyramid<T>;                                                            \
    template class BasicSegmentationModel<T>;                                                     \
    template FeaturePyramid<T> encode<T>(BasicSegmentationModel<T>&, const nn::Tensor<T>&);       \
    template FeaturePyramid<T> fuse_pyramids<T>(const FeaturePyramid<T>&, const FeaturePyramid<T>&, \
                                                FuseOp);                                          \
    template nn::Tensor<T> decode<T>(BasicSegmentationModel<T>&, const FeaturePyramid<T>&);       \
    template nn::Tensor<T> image_to_tensor<T>(const Image&);                                      \
    template nn::Tensor<T> stack_images<T>(const std::vector<const Image*>&);                     \
    template nn::Tensor<T> softmax_channels<T>(const nn::Tensor<T>&);                             \
    template Prediction<T> predict_pair<T>(BasicSegmentationModel<T>&, const Image&, const Image&); \
    template Mask argmax_mask<T>(const nn::Tensor<T>&);

DAMAGESEG_INSTANTIATE(float)
DAMAGESEG_INSTANTIATE(double)
#undef DAMAGESEG_INSTANTIATE

template BasicSegmentationModel<double> BasicSegmentationModel<float>::cast<double>() const;
template BasicSegmentationModel<float> BasicSegmentationModel<double>::cast<float>() const;
template BasicSegmentationModel<float> BasicSegmentationModel<float>::cast<float>() const;

}  // namespace damageseg
