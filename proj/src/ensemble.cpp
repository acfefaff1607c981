#include "damageseg/ensemble.hpp"

#include "damageseg/error.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

namespace damageseg {

void validate_ensemble_weights(const EnsembleWeights& w, std::size_t num_models) {
    if (!w.model_weights.empty()) {
        if (w.model_weights.size() != num_models) {
            throw ArgumentError(std::to_string(w.model_weights.size()) + " model weights for " +
                                std::to_string(num_models) + " models");
        }
        bool positive = false;
        for (double v : w.model_weights) {
            if (!(v >= 0.0) || !std::isfinite(v)) throw ArgumentError("model weights must be finite and >= 0");
            positive = positive || v > 0.0;
        }
        if (!positive) throw ArgumentError("all model weights are zero");
    }
    for (double v : w.class_weights) {
        if (!(v > 0.0) || !std::isfinite(v)) throw ArgumentError("class weights must be finite and > 0");
    }
}

ProbabilityMap average_probabilities(const std::vector<const ProbabilityMap*>& maps,
                                     const std::vector<double>& model_weights) {
    if (maps.empty()) throw ArgumentError("average_probabilities: no maps");
    EnsembleWeights check;
    check.model_weights = model_weights;
    validate_ensemble_weights(check, maps.size());
    const nn::Shape shape = maps[0]->shape;
    for (const auto* m : maps) {
        if (!(m->shape == shape)) {
            throw ArgumentError("average_probabilities: shape " + m->shape.str() + " vs " + shape.str());
        }
    }
    std::vector<double> w(maps.size(), 1.0);
    if (!model_weights.empty()) w = model_weights;
    double total = 0.0;
    for (double v : w) total += v;

    if (maps.size() == 1) return *maps[0];
    ProbabilityMap out(shape);
    std::vector<double> acc(shape.size(), 0.0);
    for (std::size_t k = 0; k < maps.size(); ++k) {
        const double wk = w[k] / total;
        if (wk == 0.0) continue;
        const auto& d = maps[k]->data;
        for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += wk * d[i];
    }
    for (std::size_t i = 0; i < acc.size(); ++i) out.data[i] = static_cast<float>(acc[i]);
    return out;
}

namespace {

Mask weighted_argmax(const ProbabilityMap& probs, const std::array<double, 5>& class_weights) {
    const nn::Shape s = probs.shape;
    if (s.c != 5) throw ArgumentError("probability maps must have 5 channels");
    Mask m(s.w, s.h);
    for (std::size_t i = 0; i < s.plane(); ++i) {
        int best = 0;
        double best_v = probs.channel(0, 0)[i] * class_weights[0];
        for (int c = 1; c < 5; ++c) {
            const double v = probs.channel(0, c)[i] * class_weights[c];
            if (v > best_v) {
                best = c;
                best_v = v;
            }
        }
        m.labels[i] = static_cast<std::uint8_t>(best);
    }
    return m;
}

}  // namespace

Mask ensemble_predict(const std::vector<const ProbabilityMap*>& maps, const EnsembleWeights& weights) {
    validate_ensemble_weights(weights, maps.size());
    return weighted_argmax(average_probabilities(maps, weights.model_weights), weights.class_weights);
}

void validate_oof(const OofPredictionSet& oof) {
    if (oof.scenes.empty()) throw ValidationError("out-of-fold set is empty");
    for (const auto& s : oof.scenes) {
        if (s.maps.empty()) throw ValidationError("scene '" + s.scene_id + "' has no out-of-fold prediction");
        for (const auto& m : s.maps) {
            if (m.shape.c != 5 || m.shape.h != s.truth.height || m.shape.w != s.truth.width) {
                throw ValidationError("scene '" + s.scene_id + "': probability map " + m.shape.str() +
                                      " does not match truth mask");
            }
            for (std::size_t i = 0; i < m.shape.plane(); ++i) {
                double sum = 0.0;
                for (int c = 0; c < 5; ++c) sum += m.channel(0, c)[i];
                if (std::fabs(sum - 1.0) > 1e-4) {
                    throw ValidationError("scene '" + s.scene_id + "': probabilities sum to " +
                                          std::to_string(sum) + " at pixel " + std::to_string(i));
                }
            }
        }
    }
}

namespace {

// Averaged maps are independent of class weights, so they are computed once.
std::vector<ProbabilityMap> averaged(const OofPredictionSet& oof, const std::vector<double>& model_weights) {
    std::vector<ProbabilityMap> out;
    for (const auto& s : oof.scenes) {
        std::vector<const ProbabilityMap*> maps;
        for (const auto& m : s.maps) maps.push_back(&m);
        out.push_back(average_probabilities(maps, model_weights.size() == maps.size() ? model_weights
                                                                                      : std::vector<double>{}));
    }
    return out;
}

EvalResult score_with(const OofPredictionSet& oof, const std::vector<ProbabilityMap>& avg,
                      const std::array<double, 5>& class_weights) {
    ConfusionCounts pooled;
    for (std::size_t i = 0; i < avg.size(); ++i) {
        pooled += confusion_counts(weighted_argmax(avg[i], class_weights), oof.scenes[i].truth);
    }
    return evaluate_counts(pooled);
}

}  // namespace

EvalResult evaluate_oof(const OofPredictionSet& oof, const EnsembleWeights& weights) {
    validate_oof(oof);
    for (const auto& s : oof.scenes) validate_ensemble_weights(weights, s.maps.size());
    return score_with(oof, averaged(oof, weights.model_weights), weights.class_weights);
}

TuneResult tune_class_weights(const OofPredictionSet& oof, const TuneSettings& settings) {
    validate_oof(oof);
    if (!(settings.grid_step > 0.0) || !(settings.grid_min > 0.0) || settings.grid_max < settings.grid_min ||
        settings.passes < 1) {
        throw ArgumentError("tune_class_weights: invalid search settings");
    }
    std::vector<double> grid;
    const int steps = static_cast<int>(std::floor((settings.grid_max - settings.grid_min) / settings.grid_step + 1e-9));
    for (int i = 0; i <= steps; ++i) {
        // Round to suppress accumulation noise (0.3 + 7 * 0.1 -> 1.0 exactly).
        grid.push_back(std::round((settings.grid_min + i * settings.grid_step) * 1e9) / 1e9);
    }

    const auto avg = averaged(oof, settings.model_weights);
    TuneResult r;
    r.weights.model_weights = settings.model_weights;
    r.baseline = score_with(oof, avg, r.weights.class_weights);
    EvalResult best = r.baseline;
    for (int pass = 0; pass < settings.passes; ++pass) {
        for (int c = 0; c < 5; ++c) {
            for (double g : grid) {
                auto candidate = r.weights.class_weights;
                if (candidate[c] == g) continue;
                candidate[c] = g;
                const EvalResult e = score_with(oof, avg, candidate);
                if (e.score > best.score) {
                    best = e;
                    r.weights.class_weights = candidate;
                }
            }
        }
    }
    r.tuned = best;
    return r;
}

nlohmann::json ensemble_weights_to_json(const EnsembleWeights& w) {
    return {{"model_weights", w.model_weights}, {"class_weights", w.class_weights}};
}

EnsembleWeights ensemble_weights_from_json(const nlohmann::json& j) {
    EnsembleWeights w;
    try {
        if (j.contains("model_weights")) w.model_weights = j.at("model_weights").get<std::vector<double>>();
        if (j.contains("class_weights")) w.class_weights = j.at("class_weights").get<std::array<double, 5>>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("ensemble weights: ") + e.what());
    }
    return w;
}

namespace {
constexpr char kProbMagic[8] = {'D', 'S', 'E', 'G', 'P', 'R', 'O', 'B'};
}

void write_probability_map(const std::filesystem::path& path, const ProbabilityMap& map) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    const std::int32_t dims[3] = {map.shape.c, map.shape.h, map.shape.w};
    out.write(kProbMagic, sizeof kProbMagic);
    out.write(reinterpret_cast<const char*>(dims), sizeof dims);
    out.write(reinterpret_cast<const char*>(map.data.data()), static_cast<std::streamsize>(map.size() * sizeof(float)));
    if (!out) throw IoError("failed writing " + path.string());
}

ProbabilityMap read_probability_map(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    char magic[8];
    std::int32_t dims[3];
    in.read(magic, sizeof magic);
    in.read(reinterpret_cast<char*>(dims), sizeof dims);
    if (!in || std::memcmp(magic, kProbMagic, sizeof magic) != 0) {
        throw IoError(path.string() + " is not a probability map");
    }
    ProbabilityMap map(nn::Shape{1, dims[0], dims[1], dims[2]});
    in.read(reinterpret_cast<char*>(map.data.data()), static_cast<std::streamsize>(map.size() * sizeof(float)));
    if (!in) throw IoError(path.string() + ": truncated probability map");
    return map;
}

}  // namespace damageseg
