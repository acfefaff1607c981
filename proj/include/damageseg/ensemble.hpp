#pragma once

#include "damageseg/metrics.hpp"
#include "damageseg/nn/tensor.hpp"
#include "damageseg/raster.hpp"

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

namespace damageseg {

/// Per-pixel class probabilities, shape (1, 5, H, W).
using ProbabilityMap = nn::Tensor<float>;

struct EnsembleWeights {
    std::vector<double> model_weights;  ///< empty means uniform
    std::array<double, 5> class_weights{1.0, 1.0, 1.0, 1.0, 1.0};
};

/// Class multipliers reported for the competition ensemble.
inline constexpr std::array<double, 5> kReferenceClassWeights{0.5, 1.1, 1.1, 1.1, 1.1};

void validate_ensemble_weights(const EnsembleWeights& w, std::size_t num_models);

/// Per-pixel convex combination with weights normalised to sum 1.
ProbabilityMap average_probabilities(const std::vector<const ProbabilityMap*>& maps,
                                     const std::vector<double>& model_weights);

/// argmax_c(avg_prob[c] * class_weights[c]); ties go to the lower class.
Mask ensemble_predict(const std::vector<const ProbabilityMap*>& maps, const EnsembleWeights& weights);

/// Out-of-fold predictions for one scene plus its truth mask.
struct OofScene {
    std::string scene_id;
    Mask truth;
    std::vector<ProbabilityMap> maps;
};

struct OofPredictionSet {
    std::vector<OofScene> scenes;
};

/// Throws ValidationError on coverage gaps, shape mismatches or unnormalised maps.
void validate_oof(const OofPredictionSet& oof);

struct TuneSettings {
    double grid_min = 0.3;
    double grid_max = 2.0;
    double grid_step = 0.1;
    int passes = 2;
    std::vector<double> model_weights;  ///< fixed during tuning; empty = uniform
};

struct TuneResult {
    EnsembleWeights weights;
    EvalResult baseline;  ///< all-ones class weights
    EvalResult tuned;
};

EvalResult evaluate_oof(const OofPredictionSet& oof, const EnsembleWeights& weights);

/// Coordinate ascent over class weights (classes 0..4 in order) maximising the
/// weighted Score; a candidate replaces the current value only on strict improvement.
TuneResult tune_class_weights(const OofPredictionSet& oof, const TuneSettings& settings = {});

nlohmann::json ensemble_weights_to_json(const EnsembleWeights& w);
EnsembleWeights ensemble_weights_from_json(const nlohmann::json& j);

/// Binary map file: magic "DSEGPROB", i32 channels, height, width, float32 payload.
void write_probability_map(const std::filesystem::path& path, const ProbabilityMap& map);
ProbabilityMap read_probability_map(const std::filesystem::path& path);

}  // namespace damageseg
