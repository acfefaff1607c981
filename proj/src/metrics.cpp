#include "damageseg/metrics.hpp"

#include "damageseg/error.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

namespace damageseg {

std::int64_t ConfusionCounts::total() const {
    std::int64_t t = 0;
    for (const auto& row : m) {
        for (auto v : row) t += v;
    }
    return t;
}

ConfusionCounts& ConfusionCounts::operator+=(const ConfusionCounts& o) {
    for (int t = 0; t < 5; ++t) {
        for (int p = 0; p < 5; ++p) m[t][p] += o.m[t][p];
    }
    return *this;
}

ConfusionCounts confusion_counts(const Mask& pred, const Mask& truth) {
    if (pred.width != truth.width || pred.height != truth.height) {
        throw ArgumentError("confusion_counts: prediction " + std::to_string(pred.width) + "x" +
                            std::to_string(pred.height) + " vs truth " + std::to_string(truth.width) +
                            "x" + std::to_string(truth.height));
    }
    ConfusionCounts c;
    for (std::size_t i = 0; i < truth.labels.size(); ++i) {
        const int t = truth.labels[i];
        const int p = pred.labels[i];
        if (t > 4 || p > 4) throw ValidationError("confusion_counts: label outside 0..4");
        ++c.m[t][p];
    }
    return c;
}

namespace {

double f1_from(std::int64_t tp, std::int64_t fp, std::int64_t fn) {
    if (tp == 0 && fp == 0 && fn == 0) return 1.0;
    return 2.0 * tp / static_cast<double>(2 * tp + fp + fn);
}

}  // namespace

double f1_localization(const ConfusionCounts& counts) {
    std::int64_t tp = 0, fp = 0, fn = 0;
    for (int t = 0; t < 5; ++t) {
        for (int p = 0; p < 5; ++p) {
            const bool tb = t > 0;
            const bool pb = p > 0;
            if (tb && pb) tp += counts.m[t][p];
            if (!tb && pb) fp += counts.m[t][p];
            if (tb && !pb) fn += counts.m[t][p];
        }
    }
    return f1_from(tp, fp, fn);
}

DamageF1 f1_damage(const ConfusionCounts& counts) {
    DamageF1 out;
    double inv_sum = 0.0;
    for (int c = 1; c <= 4; ++c) {
        const std::int64_t tp = counts.m[c][c];
        std::int64_t fp = 0, fn = 0;
        for (int k = 0; k < 5; ++k) {
            if (k == c) continue;
            fp += counts.m[k][c];
            fn += counts.m[c][k];
        }
        out.per_class[c - 1] = f1_from(tp, fp, fn);
        inv_sum += 1.0 / (out.per_class[c - 1] + kHarmonicEpsilon);
    }
    out.aggregate = std::min(1.0, 4.0 / inv_sum);
    return out;
}

double weighted_score(double f1_loc, double f1_class) {
    if (!(f1_loc >= 0.0 && f1_loc <= 1.0) || !(f1_class >= 0.0 && f1_class <= 1.0)) {
        throw ArgumentError("weighted_score: F1 inputs must lie in [0, 1]");
    }
    return 0.3 * f1_loc + 0.7 * f1_class;
}

EvalResult evaluate_counts(const ConfusionCounts& counts) {
    EvalResult r;
    r.counts = counts;
    r.f1_loc = f1_localization(counts);
    const DamageF1 d = f1_damage(counts);
    r.f1_per_class = d.per_class;
    r.f1_class = d.aggregate;
    r.score = weighted_score(r.f1_loc, r.f1_class);
    return r;
}

EvalResult evaluate_dataset(const std::vector<std::pair<const Mask*, const Mask*>>& scenes) {
    if (scenes.empty()) throw ArgumentError("evaluate_dataset: no scenes");
    ConfusionCounts pooled;
    for (const auto& [pred, truth] : scenes) pooled += confusion_counts(*pred, *truth);
    return evaluate_counts(pooled);
}

nlohmann::json eval_to_json(const EvalResult& r) {
    nlohmann::json counts = nlohmann::json::array();
    for (const auto& row : r.counts.m) counts.push_back(row);
    return {{"f1_loc", r.f1_loc},
            {"f1_per_class", r.f1_per_class},
            {"f1_class", r.f1_class},
            {"score", r.score},
            {"pixel_counts", counts}};
}

std::string format_results_table(const std::vector<std::pair<std::string, EvalResult>>& rows,
                                 const std::string& first_column) {
    std::size_t width = first_column.size();
    for (const auto& [name, _] : rows) width = std::max(width, name.size());
    std::ostringstream os;
    char buf[128];
    auto rule = [&] { os << std::string(width + 30, '-') << '\n'; };
    rule();
    std::snprintf(buf, sizeof buf, "%-*s  %8s  %8s  %8s\n", static_cast<int>(width), first_column.c_str(),
                  "F1loc", "F1class", "Score");
    os << buf;
    rule();
    for (const auto& [name, r] : rows) {
        std::snprintf(buf, sizeof buf, "%-*s  %8.4f  %8.4f  %8.4f\n", static_cast<int>(width), name.c_str(),
                      r.f1_loc, r.f1_class, r.score);
        os << buf;
    }
    rule();
    return os.str();
}

}  // namespace damageseg
