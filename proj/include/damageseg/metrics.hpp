#pragma once

#include "damageseg/raster.hpp"

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

namespace damageseg {

/// m[t][p] = number of pixels with truth t predicted as p.
struct ConfusionCounts {
    std::array<std::array<std::int64_t, 5>, 5> m{};

    std::int64_t total() const;
    ConfusionCounts& operator+=(const ConfusionCounts& o);
    friend ConfusionCounts operator+(ConfusionCounts a, const ConfusionCounts& b) { return a += b; }
    bool operator==(const ConfusionCounts&) const = default;
};

struct EvalResult {
    double f1_loc = 0.0;
    std::array<double, 4> f1_per_class{};  ///< damage classes 1..4
    double f1_class = 0.0;
    double score = 0.0;
    ConfusionCounts counts;
};

/// Additive guard used inside the harmonic mean of damage F1s.
inline constexpr double kHarmonicEpsilon = 1e-6;

ConfusionCounts confusion_counts(const Mask& pred, const Mask& truth);

/// Building-vs-background F1; 1.0 when neither side has a building pixel.
double f1_localization(const ConfusionCounts& counts);

struct DamageF1 {
    std::array<double, 4> per_class{};
    double aggregate = 0.0;
};

/// One-vs-rest pixel F1 per damage class and their harmonic mean.
DamageF1 f1_damage(const ConfusionCounts& counts);

/// 0.3 * f1_loc + 0.7 * f1_class; both inputs must lie in [0, 1].
double weighted_score(double f1_loc, double f1_class);

EvalResult evaluate_counts(const ConfusionCounts& counts);

/// Micro-averaged evaluation over (prediction, truth) pairs.
EvalResult evaluate_dataset(const std::vector<std::pair<const Mask*, const Mask*>>& scenes);

nlohmann::json eval_to_json(const EvalResult& r);

/// Plain-text rows in the (variant, F1loc, F1class, Score) layout.
std::string format_results_table(const std::vector<std::pair<std::string, EvalResult>>& rows,
                                 const std::string& first_column = "Variant");

}  // namespace damageseg
