#pragma once

#include "damageseg/dataset.hpp"
#include "damageseg/ensemble.hpp"
#include "damageseg/model.hpp"
#include "damageseg/training.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

namespace damageseg {

struct SyntheticDataConfig {
    int count = 16;
    SyntheticConfig generator;
};

struct RunConfig {
    std::string command;
    /// Manifest path; when empty the synthetic generator supplies the scenes.
    std::filesystem::path manifest;
    SyntheticDataConfig synthetic;
    int folds = 4;
    int fold = 0;
    ModelConfig model;
    TrainConfig train;
    EnsembleWeights ensemble;
    std::filesystem::path output = "runs/default";
    std::uint64_t seed = 0;
    nlohmann::json document;  ///< fully resolved document, written as the snapshot
};

/// The complete document with every key at its default value.
nlohmann::json default_config_document();

/// Recursively overlays `patch` onto `base`. Keys absent from `base` are
/// rejected with ConfigError naming the dotted path. Free-form maps
/// (augmentation overrides) accept any key.
void merge_config(nlohmann::json& base, const nlohmann::json& patch);

/// Applies "a.b.c=value". The value is parsed as JSON when possible and
/// taken as a string otherwise.
void apply_override(nlohmann::json& doc, const std::string& assignment);

/// Converts a merged document into typed settings and validates them.
RunConfig resolve_config(const nlohmann::json& doc, const std::string& command = {});

/// Defaults, then the optional file, then each override in order.
RunConfig load_run_config(const std::optional<std::filesystem::path>& file,
                          const std::vector<std::string>& overrides, const std::string& command = {});

/// Writes `<output>/resolved_config.json`; returns its path.
std::filesystem::path write_config_snapshot(const RunConfig& config);

/// Scenes from the manifest, or freshly generated synthetic scenes.
std::vector<SceneRecord> load_records(const RunConfig& config);

}  // namespace damageseg
