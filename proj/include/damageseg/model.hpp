#pragma once

#include "damageseg/nn/ops.hpp"
#include "damageseg/raster.hpp"

#include <array>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

namespace damageseg {

enum class FusionMode { kInputConcat, kSiameseConcat, kSiameseSubtract };
enum class DecoderKind { kUnet, kFpn };

FusionMode parse_fusion_mode(const std::string& name);
const char* to_string(FusionMode mode);
DecoderKind parse_decoder_kind(const std::string& name);
const char* to_string(DecoderKind kind);

inline constexpr std::array<int, 5> kPyramidStrides{2, 4, 8, 16, 32};

struct ModelConfig {
    FusionMode mode = FusionMode::kSiameseConcat;
    std::string encoder = "tiny-a";
    DecoderKind decoder = DecoderKind::kUnet;
    int decoder_width = 32;
    int num_classes = 5;

    /// 6 for input concatenation, 3 otherwise.
    int input_channels() const { return mode == FusionMode::kInputConcat ? 6 : 3; }
    bool operator==(const ModelConfig&) const = default;
};

/// Registry entry: a five-stage strided-convolution encoder.
struct EncoderSpec {
    std::string name;
    std::array<int, 5> channels{};
    int convs_per_stage = 2;
};

/// Built-in entries are `tiny-a` (16..256 channels) and `tiny-b` (double width).
const EncoderSpec& lookup_encoder(const std::string& name);
void register_encoder(const EncoderSpec& spec);
std::vector<std::string> registered_encoders();

/// Feature maps at strides 2, 4, 8, 16, 32 of the input.
template <class T>
struct FeaturePyramid {
    std::array<nn::Var<T>, 5> levels;

    std::array<int, 5> channels() const;
};

template <class T>
struct NamedTensor {
    std::string name;
    nn::Var<T> var;
};

/// Non-trainable tensor owned by the model (batch-norm running statistics).
template <class T>
struct NamedBuffer {
    std::string name;
    nn::Tensor<T>* tensor;
};

/// Siamese or input-concatenation encoder-decoder producing class logits.
template <class T>
class BasicSegmentationModel {
public:
    BasicSegmentationModel(const ModelConfig& config, std::uint64_t seed);
    ~BasicSegmentationModel();
    BasicSegmentationModel(BasicSegmentationModel&&) noexcept;
    BasicSegmentationModel& operator=(BasicSegmentationModel&&) noexcept;

    const ModelConfig& config() const { return config_; }

    /// Trainable tensors in a stable order.
    const std::vector<NamedTensor<T>>& parameters() const { return params_; }
    /// Non-trainable state (batch-norm running statistics).
    const std::vector<NamedBuffer<T>>& buffers() const { return buffers_; }
    std::int64_t parameter_count() const;
    /// Number of distinct encoder parameter tensors.
    std::size_t encoder_parameter_tensors() const;

    /// Per-level channel count the decoder expects.
    std::array<int, 5> decoder_input_channels() const;
    std::array<int, 5> encoder_channels() const;

    FeaturePyramid<T> encode(const nn::Var<T>& image, bool training);
    /// Fuses per config.mode; input-concat passes `a` through.
    FeaturePyramid<T> fuse(const FeaturePyramid<T>& a, const FeaturePyramid<T>& b) const;
    nn::Var<T> decode(const FeaturePyramid<T>& pyramid, bool training);
    /// Full forward path on NCHW image batches (3 channels each).
    nn::Var<T> forward(const nn::Var<T>& pre, const nn::Var<T>& post, bool training);

    template <class U>
    BasicSegmentationModel<U> cast() const;

private:
    struct Impl;
    ModelConfig config_;
    std::unique_ptr<Impl> impl_;
    std::vector<NamedTensor<T>> params_;
    std::vector<NamedBuffer<T>> buffers_;

    template <class>
    friend class BasicSegmentationModel;
};

using SegmentationModel = BasicSegmentationModel<float>;

/// Throws ConfigError for unknown encoder names or invalid widths.
template <class T = float>
BasicSegmentationModel<T> build_model(const ModelConfig& config, std::uint64_t seed) {
    return BasicSegmentationModel<T>(config, seed);
}

/// Encodes an NCHW tensor; spatial size must be divisible by 32.
template <class T>
FeaturePyramid<T> encode(BasicSegmentationModel<T>& model, const nn::Tensor<T>& image);

enum class FuseOp { kConcat, kSubtract };

template <class T>
FeaturePyramid<T> fuse_pyramids(const FeaturePyramid<T>& a, const FeaturePyramid<T>& b, FuseOp op);

/// Decodes to (N, 5, H, W) logits in inference mode.
template <class T>
nn::Tensor<T> decode(BasicSegmentationModel<T>& model, const FeaturePyramid<T>& pyramid);

// Raster conversion: (v / 255 - 0.5) / 0.25 per channel.
template <class T>
nn::Tensor<T> image_to_tensor(const Image& image);
template <class T>
nn::Tensor<T> stack_images(const std::vector<const Image*>& images);

template <class T>
nn::Tensor<T> softmax_channels(const nn::Tensor<T>& logits);

template <class T>
struct Prediction {
    nn::Tensor<T> logits;         ///< (1, 5, H, W)
    nn::Tensor<T> probabilities;  ///< (1, 5, H, W), sums to 1 per pixel
};

/// Inference on one pre/post pair (no gradients, running BN statistics).
template <class T>
Prediction<T> predict_pair(BasicSegmentationModel<T>& model, const Image& pre, const Image& post);

/// Per-pixel argmax of a (1, C, H, W) tensor, ties to the lower class.
template <class T>
Mask argmax_mask(const nn::Tensor<T>& scores);

}  // namespace damageseg
