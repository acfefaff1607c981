#include "doctest.h"

#include "damageseg/checkpoint.hpp"
#include "damageseg/error.hpp"
#include "damageseg/training.hpp"
#include "test_support.hpp"

#include <cmath>
#include <fstream>
#include <set>

using namespace damageseg;
using testing_support::TempDir;

namespace {

SyntheticConfig small_scenes() {
    SyntheticConfig g;
    g.width = 64;
    g.height = 64;
    g.min_buildings = 2;
    g.max_buildings = 4;
    g.min_size = 10;
    g.max_size = 16;
    return g;
}

std::vector<LabeledScene> labeled(int n, std::uint64_t base) {
    std::vector<LabeledScene> out;
    for (int i = 0; i < n; ++i) {
        auto s = generate_synthetic_scene(base + i, small_scenes());
        out.push_back({s.record.scene_id, s.pair});
    }
    return out;
}

TrainConfig quick(int epochs) {
    TrainConfig t;
    t.epochs = epochs;
    t.batch_size = 2;
    t.crop = 32;
    t.val_size = 64;
    t.base_lr = 3e-3;
    t.augmentation = build_policy("none", {{"shared.random_crop", 1}});
    t.seed = 5;
    return t;
}

ModelConfig small_model() {
    ModelConfig m;
    m.decoder_width = 16;
    return m;
}

}  // namespace

TEST_SUITE("training") {

TEST_CASE("cosine schedule") {
    CHECK(lr_at(0, 1000, 1e-3, 1e-6) == 1e-3);
    CHECK(lr_at(1000, 1000, 1e-3, 1e-6) == 1e-6);
    CHECK(std::fabs(lr_at(500, 1000, 1e-3, 1e-6) - (1e-3 + 1e-6) / 2) <= 1e-12);
    double prev = 1.0;
    for (int s = 0; s <= 100; ++s) {
        const double lr = lr_at(s, 100, 1e-3, 1e-6);
        CHECK(lr <= prev);
        prev = lr;
    }
    CHECK_THROWS_AS(lr_at(-1, 10, 1e-3, 1e-6), ArgumentError);
    CHECK_THROWS_AS(lr_at(11, 10, 1e-3, 1e-6), ArgumentError);
    CHECK_THROWS_AS(lr_at(0, 0, 1e-3, 1e-6), ArgumentError);
}

TEST_CASE("config invariants") {
    TrainConfig t;
    CHECK_NOTHROW(validate_train_config(t));
    t.min_lr = 1e-2;
    CHECK_THROWS_AS(validate_train_config(t), ConfigError);
    t = TrainConfig{};
    t.crop = 2048;
    CHECK_THROWS_AS(validate_train_config(t), ConfigError);
    t = TrainConfig{};
    t.epochs = 0;
    CHECK_THROWS_AS(validate_train_config(t), ConfigError);
    t = TrainConfig{};
    t.optimizer = "sgd";
    CHECK_THROWS_AS(validate_train_config(t), ConfigError);
}

TEST_CASE("RAdam minimises a quadratic") {
    auto p = nn::parameter(nn::Tensor<float>({1, 1, 1, 3}));
    p->value.data = {3.0f, -2.0f, 1.0f};
    RAdam opt({p});
    for (int i = 0; i < 2000; ++i) {
        opt.zero_grad();
        auto& g = p->grad_buffer();
        for (std::size_t k = 0; k < 3; ++k) g.data[k] = 2.0f * p->value.data[k];
        opt.step(1e-2);
    }
    for (float v : p->value.data) CHECK(std::fabs(v) < 5e-2);
    CHECK(opt.steps() == 2000);
}

TEST_CASE("early RAdam steps are unrectified momentum steps") {
    auto p = nn::parameter(nn::Tensor<float>({1, 1, 1, 1}));
    p->value.data = {1.0f};
    RAdam opt({p});
    p->grad_buffer().data[0] = 0.5f;
    opt.step(0.1);
    // With rho_1 <= 5 the update is lr times the bias-corrected first moment.
    CHECK(p->value.data[0] == doctest::Approx(1.0 - 0.1 * 0.5).epsilon(1e-6));
}

TEST_CASE("one epoch returns the epoch-one checkpoint and is deterministic") {
    const auto scenes = labeled(4, 10);
    const auto a = train_model(scenes, scenes, small_model(), quick(1));
    const auto b = train_model(scenes, scenes, small_model(), quick(1));
    REQUIRE(a.history.size() == 1);
    CHECK(a.best.epoch == 1);
    CHECK(std::fabs(a.history[0].train_loss - b.history[0].train_loss) <= 1e-6);
    CHECK(a.best.state.tensors[0].second.data == b.best.state.tensors[0].second.data);
}

TEST_CASE("parallel workers keep the sample-to-seed mapping") {
    const auto scenes = labeled(4, 10);
    auto cfg = quick(1);
    const auto single = train_model(scenes, scenes, small_model(), cfg);
    cfg.workers = 3;
    const auto multi = train_model(scenes, scenes, small_model(), cfg);
    CHECK(std::fabs(single.history[0].train_loss - multi.history[0].train_loss) <= 1e-6);
}

TEST_CASE("fold training never sees validation scenes and keeps the best epoch") {
    std::vector<SceneRecord> records;
    for (int i = 0; i < 8; ++i) records.push_back(generate_synthetic_scene(40 + i, small_scenes()).record);
    const auto folds = split_folds(records, 4, 1);
    const auto held_out = folds.scenes_in(2);
    const std::set<std::string> held(held_out.begin(), held_out.end());

    std::size_t batches = 0;
    bool leaked = false;
    TrainHooks hooks;
    hooks.on_batch = [&](const std::vector<std::string>& ids) {
        ++batches;
        for (const auto& id : ids) leaked = leaked || held.count(id) > 0;
    };
    const auto r = train_fold(records, folds, 2, small_model(), quick(12), hooks);
    CHECK_FALSE(leaked);
    CHECK(batches == 12 * 3);
    REQUIRE(r.history.size() == 12);
    double best = -1.0;
    for (const auto& e : r.history) best = std::max(best, e.validation.score);
    CHECK(r.best.validation.score == best);
    CHECK(r.history.back().train_loss < r.history.front().train_loss);

    // Stored validation score matches a recomputation.
    std::vector<LabeledScene> val;
    for (const auto& rec : records) {
        if (held.count(rec.scene_id)) val.push_back({rec.scene_id, load_raster_pair(rec)});
    }
    auto model = instantiate(r.best);
    CHECK(std::fabs(evaluate_model(model, val, 64).score - r.best.validation.score) <= 1e-6);

    CHECK_THROWS_AS(train_fold(records, folds, 7, small_model(), quick(1)), ConfigError);
    auto partial = folds;
    partial.fold_of.erase(records[0].scene_id);
    CHECK_THROWS_AS(train_fold(records, partial, 0, small_model(), quick(1)), ValidationError);
}

TEST_CASE("diverging training aborts with the sample seed") {
    const auto scenes = labeled(2, 20);
    auto cfg = quick(3);
    cfg.base_lr = 1e30;
    cfg.min_lr = 1e30;
    try {
        train_model(scenes, scenes, small_model(), cfg);
        FAIL("expected TrainingError");
    } catch (const TrainingError& e) {
        CHECK(std::string(e.what()).find("seed") != std::string::npos);
    }
}

TEST_CASE("batch larger than the training split") {
    const auto scenes = labeled(2, 20);
    auto cfg = quick(1);
    cfg.batch_size = 3;
    CHECK_THROWS_AS(train_model(scenes, scenes, small_model(), cfg), ConfigError);
    CHECK_THROWS_AS(train_model({}, scenes, small_model(), quick(1)), ConfigError);
}

TEST_CASE("validation view is centred and 32-aligned") {
    auto s = generate_synthetic_scene(3, SyntheticConfig{});
    const auto v = validation_view(s.pair, 100);
    CHECK(v.pre.width == 96);
    CHECK(v.mask.height == 96);
    CHECK(v.pre.at(0, 0, 0) == s.pair.pre.at(16, 16, 0));
}

TEST_CASE("checkpoint round trip") {
    TempDir dir("ckpt");
    const auto scenes = labeled(2, 30);
    const auto r = train_model(scenes, scenes, small_model(), quick(1));
    save_checkpoint(dir / "model.ckpt", r.best);
    const auto back = load_checkpoint(dir / "model.ckpt");
    CHECK(back.model_config == r.best.model_config);
    CHECK(back.epoch == 1);
    CHECK(back.validation.score == r.best.validation.score);
    REQUIRE(back.state.tensors.size() == r.best.state.tensors.size());
    for (std::size_t i = 0; i < back.state.tensors.size(); ++i) {
        CHECK(back.state.tensors[i].first == r.best.state.tensors[i].first);
        CHECK(back.state.tensors[i].second.data == r.best.state.tensors[i].second.data);
    }
    auto a = instantiate(r.best);
    auto b = instantiate(back);
    CHECK(predict_pair(a, scenes[0].pair.pre, scenes[0].pair.post).logits.data ==
          predict_pair(b, scenes[0].pair.pre, scenes[0].pair.post).logits.data);
    {
        std::ofstream(dir / "junk.ckpt") << "not a checkpoint";
    }
    CHECK_THROWS_AS(load_checkpoint(dir / "junk.ckpt"), IoError);
}

}  // TEST_SUITE
