#pragma once

#include "damageseg/metrics.hpp"
#include "damageseg/model.hpp"

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

namespace damageseg {

/// Named copy of every parameter and buffer of a model.
struct ModelState {
    std::vector<std::pair<std::string, nn::Tensor<float>>> tensors;
};

ModelState capture_state(const SegmentationModel& model);
/// Throws ConfigError when names or shapes disagree with the model.
void restore_state(SegmentationModel& model, const ModelState& state);

struct Checkpoint {
    ModelConfig model_config;
    nlohmann::json train_config;  ///< resolved training settings, informational
    int epoch = 0;
    EvalResult validation;
    ModelState state;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Layout: 8-byte magic "DSEGCKPT", u32 version, u64 header length, JSON
/// header, then the float32 tensor payload in header order (little endian).
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Builds the model described by the checkpoint and loads its weights.
SegmentationModel instantiate(const Checkpoint& ckpt);

nlohmann::json model_config_to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);

}  // namespace damageseg
