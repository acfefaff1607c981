#include "damageseg/training.hpp"

#include "damageseg/error.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <future>
#include <map>
#include <numbers>
#include <numeric>
#include <random>

namespace damageseg {

void validate_train_config(const TrainConfig& c) {
    if (c.epochs < 1) throw ConfigError("epochs must be >= 1");
    if (c.batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (!(c.min_lr > 0.0) || !(c.min_lr <= c.base_lr)) throw ConfigError("need 0 < min_lr <= base_lr");
    if (c.weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
    if (c.crop <= 0 || c.crop % 32 != 0) throw ConfigError("crop must be a positive multiple of 32");
    if (c.crop > c.val_size) throw ConfigError("crop must not exceed val_size");
    if (c.optimizer != "radam") throw ConfigError("unsupported optimizer '" + c.optimizer + "'");
    if (c.workers < 1) throw ConfigError("workers must be >= 1");
    try {
        validate_class_weights(c.class_weights);
        validate_policy(c.augmentation);
    } catch (const Error& e) {
        throw ConfigError(e.what());
    }
}

double lr_at(std::int64_t step, std::int64_t total_steps, double base_lr, double min_lr) {
    if (total_steps < 1) throw ArgumentError("lr_at: total_steps must be >= 1");
    if (step < 0 || step > total_steps) {
        throw ArgumentError("lr_at: step " + std::to_string(step) + " outside [0, " +
                            std::to_string(total_steps) + "]");
    }
    if (step == 0) return base_lr;
    if (step == total_steps) return min_lr;
    const double progress = static_cast<double>(step) / static_cast<double>(total_steps);
    return min_lr + 0.5 * (base_lr - min_lr) * (1.0 + std::cos(std::numbers::pi * progress));
}

// ---------------------------------------------------------------------------

RAdam::RAdam(std::vector<nn::Var<float>> params, double weight_decay, double beta1, double beta2, double eps)
    : params_(std::move(params)), weight_decay_(weight_decay), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const auto& p : params_) {
        m_.emplace_back(p->value.size(), 0.0f);
        v_.emplace_back(p->value.size(), 0.0f);
    }
}

void RAdam::step(double lr) {
    ++t_;
    const double b1t = std::pow(beta1_, static_cast<double>(t_));
    const double b2t = std::pow(beta2_, static_cast<double>(t_));
    const double rho_inf = 2.0 / (1.0 - beta2_) - 1.0;
    const double rho_t = rho_inf - 2.0 * static_cast<double>(t_) * b2t / (1.0 - b2t);
    const bool rectified = rho_t > 5.0;
    double rect = 0.0;
    if (rectified) {
        rect = std::sqrt((rho_t - 4.0) * (rho_t - 2.0) * rho_inf / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t));
    }
    const float b1 = static_cast<float>(beta1_);
    const float b2 = static_cast<float>(beta2_);
    for (std::size_t k = 0; k < params_.size(); ++k) {
        auto& p = *params_[k];
        if (p.grad.empty()) continue;
        auto& m = m_[k];
        auto& v = v_[k];
        for (std::size_t i = 0; i < p.value.size(); ++i) {
            const float g = p.grad.data[i] + static_cast<float>(weight_decay_) * p.value.data[i];
            m[i] = b1 * m[i] + (1.0f - b1) * g;
            v[i] = b2 * v[i] + (1.0f - b2) * g * g;
            const double m_hat = m[i] / (1.0 - b1t);
            double update;
            if (rectified) {
                const double v_hat = std::sqrt(v[i] / (1.0 - b2t));
                update = rect * m_hat / (v_hat + eps_);
            } else {
                update = m_hat;
            }
            p.value.data[i] -= static_cast<float>(lr * update);
        }
    }
}

void RAdam::zero_grad() {
    for (auto& p : params_) {
        std::fill(p->grad.data.begin(), p->grad.data.end(), 0.0f);
    }
}

// ---------------------------------------------------------------------------

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

std::uint64_t sample_seed(std::uint64_t base, std::uint64_t index) {
    return splitmix64(base ^ splitmix64(index));
}

}  // namespace

RasterPair validation_view(const RasterPair& pair, int limit) {
    const int w = std::min(pair.pre.width, limit) / 32 * 32;
    const int h = std::min(pair.pre.height, limit) / 32 * 32;
    if (w == 0 || h == 0) throw ShapeError("validation scene smaller than 32 pixels");
    if (w == pair.pre.width && h == pair.pre.height) return pair;
    const int x0 = (pair.pre.width - w) / 2;
    const int y0 = (pair.pre.height - h) / 2;
    RasterPair out{Image(w, h), Image(w, h), Mask(w, h)};
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            for (int c = 0; c < 3; ++c) {
                out.pre.at(x, y, c) = pair.pre.at(x0 + x, y0 + y, c);
                out.post.at(x, y, c) = pair.post.at(x0 + x, y0 + y, c);
            }
            out.mask.at(x, y) = pair.mask.at(x0 + x, y0 + y);
        }
    }
    return out;
}

EvalResult evaluate_model(SegmentationModel& model, const std::vector<LabeledScene>& scenes, int val_size) {
    if (scenes.empty()) throw ArgumentError("evaluate_model: no scenes");
    ConfusionCounts pooled;
    for (const auto& s : scenes) {
        const RasterPair view = validation_view(s.pair, val_size);
        const auto pred = predict_pair(model, view.pre, view.post);
        pooled += confusion_counts(argmax_mask(pred.logits), view.mask);
    }
    return evaluate_counts(pooled);
}

TrainResult train_model(const std::vector<LabeledScene>& train, const std::vector<LabeledScene>& validation,
                        const ModelConfig& model_config, const TrainConfig& cfg, const TrainHooks& hooks) {
    validate_train_config(cfg);
    if (train.empty()) throw ConfigError("training split is empty");
    if (validation.empty()) throw ConfigError("validation split is empty");
    const int n = static_cast<int>(train.size());
    const int batches = n / cfg.batch_size;
    if (batches == 0) {
        throw ConfigError("batch_size " + std::to_string(cfg.batch_size) + " exceeds the " +
                          std::to_string(n) + " training scenes");
    }

    SegmentationModel model = build_model(model_config, cfg.seed);
    std::vector<nn::Var<float>> params;
    for (const auto& p : model.parameters()) params.push_back(p.var);
    RAdam optimizer(params, cfg.weight_decay);

    AugmentationPolicy policy = cfg.augmentation;
    policy.shared.crop = cfg.crop;

    const std::int64_t total_steps = static_cast<std::int64_t>(cfg.epochs) * batches;
    std::int64_t step = 0;
    std::mt19937_64 order_rng(splitmix64(cfg.seed ^ 0x5EED0F0A11ULL));

    TrainResult result;
    bool have_best = false;
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::vector<int> order(n);
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), order_rng);

        double loss_sum = 0.0;
        double lr = cfg.base_lr;
        for (int b = 0; b < batches; ++b) {
            std::vector<std::string> ids;
            std::vector<std::uint64_t> seeds;
            for (int j = 0; j < cfg.batch_size; ++j) {
                const int pos = b * cfg.batch_size + j;
                ids.push_back(train[order[pos]].scene_id);
                seeds.push_back(sample_seed(cfg.seed, static_cast<std::uint64_t>(epoch - 1) * n + pos));
            }
            if (hooks.on_batch) hooks.on_batch(ids);

            std::vector<AugmentedSample> samples(cfg.batch_size);
            auto augment_one = [&](int j) {
                samples[j] = apply_paired(policy, train[order[b * cfg.batch_size + j]].pair, seeds[j]);
            };
            if (cfg.workers > 1) {
                std::vector<std::future<void>> jobs;
                for (int j = 0; j < cfg.batch_size; ++j) {
                    jobs.push_back(std::async(std::launch::async, augment_one, j));
                    if (static_cast<int>(jobs.size()) == cfg.workers) {
                        for (auto& f : jobs) f.get();
                        jobs.clear();
                    }
                }
                for (auto& f : jobs) f.get();
            } else {
                for (int j = 0; j < cfg.batch_size; ++j) augment_one(j);
            }

            std::vector<const Image*> pre, post;
            std::vector<const Mask*> masks;
            for (const auto& s : samples) {
                pre.push_back(&s.pre);
                post.push_back(&s.post);
                masks.push_back(&s.mask);
            }
            auto logits = model.forward(nn::constant(stack_images<float>(pre)),
                                        nn::constant(stack_images<float>(post)), true);
            auto loss = weighted_cross_entropy(logits->value, masks, cfg.class_weights);
            if (!std::isfinite(loss.value)) {
                throw TrainingError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                                    std::to_string(b) + " (first sample seed " + std::to_string(seeds[0]) + ")");
            }
            nn::backward(logits, std::move(loss.grad));
            lr = lr_at(step, total_steps, cfg.base_lr, cfg.min_lr);
            optimizer.step(lr);
            optimizer.zero_grad();
            ++step;
            loss_sum += loss.value;
        }

        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = loss_sum / batches;
        rec.lr = lr;
        rec.validation = evaluate_model(model, validation, cfg.val_size);
        result.history.push_back(rec);
        spdlog::debug("epoch {} loss {:.5f} score {:.4f}", epoch, rec.train_loss, rec.validation.score);
        if (hooks.on_epoch) hooks.on_epoch(rec);

        if (!have_best || rec.validation.score > result.best.validation.score) {
            have_best = true;
            result.best.model_config = model_config;
            result.best.train_config = train_config_to_json(cfg);
            result.best.epoch = epoch;
            result.best.validation = rec.validation;
            result.best.state = capture_state(model);
        }
    }
    return result;
}

TrainResult train_fold(const std::vector<SceneRecord>& records, const FoldAssignment& folds, int fold_id,
                       const ModelConfig& model_config, const TrainConfig& train_config,
                       const TrainHooks& hooks) {
    if (fold_id < 0 || fold_id >= folds.k) {
        throw ConfigError("fold " + std::to_string(fold_id) + " outside 0.." + std::to_string(folds.k - 1));
    }
    std::vector<LabeledScene> train, validation;
    for (const auto& r : records) {
        const auto it = folds.fold_of.find(r.scene_id);
        if (it == folds.fold_of.end()) {
            throw ValidationError("scene '" + r.scene_id + "' has no fold assignment");
        }
        auto& dst = it->second == fold_id ? validation : train;
        dst.push_back({r.scene_id, load_raster_pair(r)});
    }
    return train_model(train, validation, model_config, train_config, hooks);
}

nlohmann::json train_config_to_json(const TrainConfig& c) {
    return {{"epochs", c.epochs},
            {"batch_size", c.batch_size},
            {"base_lr", c.base_lr},
            {"min_lr", c.min_lr},
            {"weight_decay", c.weight_decay},
            {"crop", c.crop},
            {"val_size", c.val_size},
            {"optimizer", c.optimizer},
            {"augmentation", policy_to_json(c.augmentation)},
            {"class_weights", c.class_weights.w},
            {"seed", c.seed},
            {"workers", c.workers}};
}

}  // namespace damageseg
