#include "doctest.h"

#include "damageseg/ablation.hpp"
#include "damageseg/config.hpp"
#include "damageseg/error.hpp"
#include "damageseg/overlay.hpp"
#include "test_support.hpp"

#include <fstream>

using namespace damageseg;
using testing_support::TempDir;

TEST_SUITE("cli") {

TEST_CASE("defaults resolve to the library defaults") {
    const RunConfig c = resolve_config(default_config_document());
    CHECK(c.model == ModelConfig{});
    CHECK(c.train.epochs == TrainConfig{}.epochs);
    CHECK(c.train.class_weights.w == ClassWeights{}.w);
    CHECK(c.train.augmentation.post_only.enabled);
    CHECK(c.manifest.empty());
    CHECK(c.synthetic.count == 16);
}

TEST_CASE("overrides and unknown keys") {
    auto doc = default_config_document();
    apply_override(doc, "model.mode=siamese-subtract");
    apply_override(doc, "train.epochs=3");
    apply_override(doc, "train.augmentation.overrides.post_only.max_shift_px=4");
    apply_override(doc, "train.class_weights=[1,1,2,2,2]");
    const RunConfig c = resolve_config(doc);
    CHECK(c.model.mode == FusionMode::kSiameseSubtract);
    CHECK(c.train.epochs == 3);
    CHECK(c.train.augmentation.post_only.max_shift_px == 4.0);
    CHECK(c.train.class_weights.w[2] == 2.0);

    CHECK_THROWS_AS(apply_override(doc, "model.colour=red"), ConfigError);
    CHECK_THROWS_AS(apply_override(doc, "nonsense"), ConfigError);
    CHECK_THROWS_AS(merge_config(doc, nlohmann::json{{"train", {{"epoch", 3}}}}), ConfigError);

    auto bad = default_config_document();
    apply_override(bad, "train.augmentation.overrides.shared.bogus=1");
    CHECK_THROWS_AS(resolve_config(bad), ConfigError);
    auto bad_mode = default_config_document();
    apply_override(bad_mode, "model.mode=multiply");
    CHECK_THROWS_AS(resolve_config(bad_mode), ConfigError);
    auto bad_fold = default_config_document();
    apply_override(bad_fold, "split.fold=9");
    CHECK_THROWS_AS(resolve_config(bad_fold), ConfigError);
}

TEST_CASE("snapshot reloads to the same settings") {
    TempDir dir("cfg");
    {
        std::ofstream(dir / "run.json") << R"({"train": {"epochs": 2, "crop": 64}, "seed": 9})";
    }
    RunConfig c = load_run_config(dir / "run.json", {"output=" + (dir / "out").string()});
    CHECK(c.train.epochs == 2);
    CHECK(c.seed == 9);
    CHECK(c.train.seed == 9);
    const auto snap = write_config_snapshot(c);
    const RunConfig again = load_run_config(snap, {});
    CHECK(again.document == c.document);
    CHECK_THROWS_AS(load_run_config(dir / "missing.json", {}), ConfigError);
}

TEST_CASE("synthetic records are deterministic") {
    auto doc = default_config_document();
    apply_override(doc, "data.synthetic.count=3");
    const RunConfig c = resolve_config(doc);
    const auto a = load_records(c);
    const auto b = load_records(c);
    REQUIRE(a.size() == 3);
    CHECK(load_raster_pair(a[2]).post == load_raster_pair(b[2]).post);
}

TEST_CASE("overlay rendering") {
    TempDir dir("overlay");
    SyntheticConfig g;
    g.damage_counts = std::array<int, 4>{0, 0, 0, 1};
    const auto s = generate_synthetic_scene(3, g);
    const int w = s.pair.pre.width;

    SUBCASE("an empty mask leaves the overlay panel equal to the pre image") {
        const Image panel = compose_overlay(s.pair.pre, s.pair.post, Mask(w, s.pair.pre.height, 0));
        for (int y = 0; y < panel.height; ++y) {
            for (int x = 0; x < w; ++x) {
                for (int c = 0; c < 3; ++c) CHECK(panel.at(2 * w + x, y, c) == s.pair.pre.at(x, y, c));
            }
        }
    }
    SUBCASE("a destroyed building is painted red exactly on its footprint") {
        const Image panel = render_overlay(s.pair.pre, s.pair.post, s.pair.mask, dir / "o.png");
        int painted = 0;
        for (int y = 0; y < panel.height; ++y) {
            for (int x = 0; x < w; ++x) {
                const Rgb base{s.pair.pre.at(x, y, 0), s.pair.pre.at(x, y, 1), s.pair.pre.at(x, y, 2)};
                const Rgb got{panel.at(2 * w + x, y, 0), panel.at(2 * w + x, y, 1), panel.at(2 * w + x, y, 2)};
                if (s.pair.mask.at(x, y) == 4) {
                    ++painted;
                    CHECK(got == blend_class_colour(base, 4));
                    CHECK(got[0] >= got[1]);
                } else {
                    CHECK(got == base);
                }
            }
        }
        CHECK(painted > 0);
        CHECK(png_dimensions(dir / "o.png") == std::pair<int, int>{3 * w, s.pair.pre.height});
        CHECK(read_png_rgb(dir / "o.png") == panel);
    }
    SUBCASE("unwritable destination") {
        CHECK_THROWS_AS(render_overlay(s.pair.pre, s.pair.post, s.pair.mask, dir / "no" / "such" / "dir.png"),
                        IoError);
    }
}

TEST_CASE("loss ablation runs two variants with identical settings") {
    auto doc = default_config_document();
    for (const char* o : {"data.synthetic.count=8", "data.synthetic.width=64", "data.synthetic.height=64",
                          "data.synthetic.min_buildings=2", "data.synthetic.max_buildings=3",
                          "data.synthetic.min_size=10", "data.synthetic.max_size=16", "train.epochs=1",
                          "train.batch_size=2", "train.crop=32", "train.val_size=64", "model.decoder_width=8",
                          "train.augmentation.preset=\"none\""}) {
        apply_override(doc, o);
    }
    const RunConfig c = resolve_config(doc);
    const auto report = run_ablation(c, AblationAxis::kLoss);
    REQUIRE(report.rows.size() == 2);
    CHECK(report.rows[0].variant == "CE");
    CHECK(report.rows[1].variant == "weighted CE");
    CHECK(report.all_ok());
    CHECK(format_ablation_table(report).find("background only") != std::string::npos);
    CHECK(ablation_csv(report).rfind("variant,status", 0) == 0);
    CHECK_THROWS_AS(parse_ablation_axis("depth"), ArgumentError);
}

}  // TEST_SUITE
