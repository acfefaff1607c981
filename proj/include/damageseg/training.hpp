#pragma once

#include "damageseg/augment.hpp"
#include "damageseg/checkpoint.hpp"
#include "damageseg/dataset.hpp"
#include "damageseg/metrics.hpp"
#include "damageseg/model.hpp"
#include "damageseg/objective.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace damageseg {

struct TrainConfig {
    int epochs = 100;
    int batch_size = 32;
    double base_lr = 1e-3;
    double min_lr = 1e-6;
    double weight_decay = 1e-5;
    int crop = 512;
    int val_size = 1024;
    std::string optimizer = "radam";
    AugmentationPolicy augmentation = build_policy("medium");
    ClassWeights class_weights;
    std::uint64_t seed = 0;
    int workers = 1;  ///< parallel augmentation threads
};

/// Throws ConfigError when an invariant of TrainConfig is violated.
void validate_train_config(const TrainConfig& c);

/// Cosine decay from base_lr (step 0) to min_lr (step == total_steps).
double lr_at(std::int64_t step, std::int64_t total_steps, double base_lr, double min_lr);

/// Rectified Adam with L2 weight decay folded into the gradient.
class RAdam {
public:
    explicit RAdam(std::vector<nn::Var<float>> params, double weight_decay = 0.0, double beta1 = 0.9,
                   double beta2 = 0.999, double eps = 1e-8);

    void step(double lr);
    void zero_grad();
    std::int64_t steps() const { return t_; }

private:
    std::vector<nn::Var<float>> params_;
    std::vector<std::vector<float>> m_;
    std::vector<std::vector<float>> v_;
    double weight_decay_;
    double beta1_;
    double beta2_;
    double eps_;
    std::int64_t t_ = 0;
};

struct LabeledScene {
    std::string scene_id;
    RasterPair pair;
};

struct EpochRecord {
    int epoch = 0;  ///< 1-based
    double train_loss = 0.0;
    double lr = 0.0;  ///< learning rate of the epoch's last step
    EvalResult validation;
};

struct TrainResult {
    Checkpoint best;
    std::vector<EpochRecord> history;
};

/// Called with the scene ids of every training batch before it is used.
using BatchObserver = std::function<void(const std::vector<std::string>&)>;
/// Called after each epoch's validation.
using EpochObserver = std::function<void(const EpochRecord&)>;

struct TrainHooks {
    BatchObserver on_batch;
    EpochObserver on_epoch;
};

/// Full-resolution evaluation without augmentation. Scenes larger than
/// `val_size` are centre-cropped; sizes are rounded down to multiples of 32.
EvalResult evaluate_model(SegmentationModel& model, const std::vector<LabeledScene>& scenes, int val_size);

/// Crop-based training with per-epoch validation; returns the best-Score checkpoint.
TrainResult train_model(const std::vector<LabeledScene>& train, const std::vector<LabeledScene>& validation,
                        const ModelConfig& model_config, const TrainConfig& train_config,
                        const TrainHooks& hooks = {});

/// Trains on every scene outside `fold_id` and validates on `fold_id`.
TrainResult train_fold(const std::vector<SceneRecord>& records, const FoldAssignment& folds, int fold_id,
                       const ModelConfig& model_config, const TrainConfig& train_config,
                       const TrainHooks& hooks = {});

/// Largest centred window of side <= limit whose dimensions are multiples of 32.
RasterPair validation_view(const RasterPair& pair, int limit);

nlohmann::json train_config_to_json(const TrainConfig& c);

}  // namespace damageseg
