#pragma once

#include "damageseg/raster.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

namespace damageseg {

enum class AugmentPreset { kNone, kColor, kMedium, kHard };

AugmentPreset parse_augment_preset(const std::string& name);
const char* to_string(AugmentPreset preset);

/// Small misregistration applied to the post image only.
struct PostOnlySpatial {
    bool enabled = false;
    double max_rotation_deg = 3.0;
    double max_shift_px = 10.0;
    double scale_range = 0.02;
};

/// Geometry applied with identical parameters to pre, post and mask.
struct SharedSpatial {
    int crop = 512;
    bool random_crop = false;
    bool scale = false;
    double scale_min = 0.8;
    double scale_max = 1.2;
    double scale_p = 0.5;
    bool hflip = false;
    double hflip_p = 0.5;
    bool rot90 = false;
    double rot90_p = 0.5;
    bool transpose = false;
    double transpose_p = 0.5;
    bool grid_shuffle = false;
    int grid = 4;
    double grid_shuffle_p = 0.3;
    bool mask_dropout = false;
    double mask_dropout_p = 0.05;  ///< per building instance
};

/// Photometric changes drawn independently for pre and post.
struct ColorJitter {
    bool enabled = false;
    double brightness = 0.1;  ///< additive, fraction of 255
    double contrast = 0.1;    ///< multiplicative deviation from 1
    double brightness_contrast_p = 0.5;
    double gamma_min = 0.8;
    double gamma_max = 1.2;
    double gamma_p = 0.5;
    double hue_shift_deg = 10.0;
    double saturation_shift = 0.1;
    double value_shift = 0.1;
    double rgb_shift = 10.0;
    double colorspace_p = 0.5;  ///< one of HSV or RGB shift
};

struct AugmentationPolicy {
    AugmentPreset preset = AugmentPreset::kNone;
    PostOnlySpatial post_only;
    SharedSpatial shared;
    ColorJitter color;
};

/// Builds one of the four presets and merges `overrides` (dotted keys such as
/// "post_only.max_shift_px" or "shared.hflip_p"; booleans as 0/1).
AugmentationPolicy build_policy(const std::string& preset,
                                const std::map<std::string, double>& overrides = {});

/// Throws ValidationError when a magnitude or probability is out of range.
void validate_policy(const AugmentationPolicy& policy);

nlohmann::json policy_to_json(const AugmentationPolicy& policy);

struct AppliedOp {
    std::string name;
    std::string group;   ///< post_only | shared | color
    std::string target;  ///< post | all | mask | pre
    std::map<std::string, double> params;
};

struct AugmentedSample {
    Image pre;
    Image post;
    Mask mask;
    std::vector<AppliedOp> applied_ops;
};

/// Draws and applies the policy's transforms in the order post-only spatial,
/// shared spatial, colour. Deterministic per (policy, pair, seed).
AugmentedSample apply_paired(const AugmentationPolicy& policy, const RasterPair& pair,
                             std::uint64_t seed);

/// Re-executes a recorded op list. replay(apply_paired(...).applied_ops, pair)
/// reproduces the sample exactly.
AugmentedSample replay(const std::vector<AppliedOp>& ops, const RasterPair& pair);

/// Applies one shared spatial op to a mask on its own.
Mask apply_shared_to_mask(const AppliedOp& op, const Mask& mask);

nlohmann::json ops_to_json(const std::vector<AppliedOp>& ops);
std::vector<AppliedOp> ops_from_json(const nlohmann::json& j);

}  // namespace damageseg
