#include "doctest.h"

#include "damageseg/dataset.hpp"
#include "damageseg/error.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

#include <fstream>

#include "json.hpp"

using namespace damageseg;
using testing_support::TempDir;

namespace {

BuildingAnnotation rect(double x0, double y0, double x1, double y1, DamageClass d) {
    return {{{x0, y0}, {x1, y0}, {x1, y1}, {x0, y1}}, d};
}

std::vector<Point> random_polygon(std::mt19937_64& rng, double cx, double cy) {
    // Star-shaped around the centre, so always simple.
    std::uniform_real_distribution<double> radius(2.0, 12.0);
    const int n = 3 + static_cast<int>(rng() % 6);
    std::vector<Point> p;
    for (int i = 0; i < n; ++i) {
        const double a = 2.0 * 3.14159265358979 * i / n;
        const double r = radius(rng);
        p.push_back({cx + r * std::cos(a), cy + r * std::sin(a)});
    }
    return p;
}

}  // namespace

TEST_SUITE("dataset") {

TEST_CASE("empty annotation list rasterizes to zeros") {
    const Mask m = rasterize_annotations({}, 64, 64);
    CHECK(m.width == 64);
    CHECK(m.height == 64);
    CHECK(std::all_of(m.labels.begin(), m.labels.end(), [](auto v) { return v == 0; }));
}

TEST_CASE("axis-aligned rectangle covers exactly the centres inside it") {
    const std::vector<BuildingAnnotation> a{rect(2, 2, 6, 5, DamageClass::kDestroyed)};
    const Mask m = rasterize_annotations(a, 10, 10);
    CHECK(m == oracle::rasterize(a, 10, 10));
    int count = 0;
    for (int y = 0; y < 10; ++y) {
        for (int x = 0; x < 10; ++x) {
            const bool inside = x >= 2 && x <= 5 && y >= 2 && y <= 4;
            CHECK(m.at(x, y) == (inside ? 4 : 0));
            count += inside;
        }
    }
    CHECK(count == 12);
}

TEST_CASE("overlaps keep the larger damage") {
    const std::vector<BuildingAnnotation> a{rect(1, 1, 8, 8, DamageClass::kNoDamage),
                                            rect(5, 5, 12, 12, DamageClass::kMajor)};
    const Mask m = rasterize_annotations(a, 16, 16);
    CHECK(m == oracle::rasterize(a, 16, 16));
    CHECK(m.at(6, 6) == 3);
    CHECK(m.at(2, 2) == 1);
    CHECK(m.at(10, 10) == 3);
}

TEST_CASE("random star polygons agree with the point-in-polygon scan") {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> c(0.0, 48.0);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<BuildingAnnotation> a;
        const int n = 1 + static_cast<int>(rng() % 4);
        for (int i = 0; i < n; ++i) {
            a.push_back({random_polygon(rng, c(rng), c(rng)), static_cast<DamageClass>(1 + rng() % 4)});
        }
        CHECK(rasterize_annotations(a, 48, 40) == oracle::rasterize(a, 48, 40));
    }
}

TEST_CASE("polygons on half-integer coordinates follow the even-odd rule") {
    std::vector<BuildingAnnotation> a{{{{1.5, 1.5}, {7.5, 1.5}, {7.5, 6.5}, {1.5, 6.5}}, DamageClass::kMinor},
                                      {{{3.0, 0.5}, {9.5, 4.5}, {3.0, 8.5}}, DamageClass::kNoDamage}};
    CHECK(rasterize_annotations(a, 12, 12) == oracle::rasterize(a, 12, 12));
}

TEST_CASE("degenerate polygons") {
    CHECK_THROWS_AS(rasterize_annotations({{{{0, 0}, {4, 4}}, DamageClass::kMinor}}, 8, 8), ValidationError);
    // Zero area is skipped with a warning rather than rejected.
    const Mask m = rasterize_annotations({{{{0, 0}, {4, 4}, {2, 2}}, DamageClass::kMinor}}, 8, 8);
    CHECK(std::all_of(m.labels.begin(), m.labels.end(), [](auto v) { return v == 0; }));
}

TEST_CASE("annotation validation") {
    CHECK_NOTHROW(validate_annotation(rect(0, 0, 4, 4, DamageClass::kMinor), 16, 16));
    CHECK_THROWS_AS(validate_annotation({{{0, 0}, {4, 0}}, DamageClass::kMinor}, 16, 16), ValidationError);
    // Bow-tie is self-intersecting.
    CHECK_THROWS_AS(validate_annotation({{{0, 0}, {4, 4}, {4, 0}, {0, 4}}, DamageClass::kMinor}, 16, 16),
                    ValidationError);
    CHECK_THROWS_AS(validate_annotation(rect(0, 0, 100, 4, DamageClass::kMinor), 16, 16), ValidationError);
    CHECK_THROWS_AS(validate_annotation(rect(0, 0, 4, 4, DamageClass::kNoBuilding), 16, 16), ValidationError);
}

TEST_CASE("damage histogram counts buildings per class") {
    SceneRecord r;
    CHECK(damage_histogram(r).counts == std::array<std::int64_t, 4>{0, 0, 0, 0});
    r.annotations = {rect(0, 0, 2, 2, DamageClass::kNoDamage), rect(3, 3, 5, 5, DamageClass::kNoDamage),
                     rect(6, 6, 8, 8, DamageClass::kDestroyed)};
    CHECK(damage_histogram(r).counts == std::array<std::int64_t, 4>{2, 0, 0, 1});
}

TEST_CASE("manifest ingestion") {
    TempDir dir("manifest");
    Image img(32, 24, 90);
    write_png(dir / "a_pre.png", img);
    write_png(dir / "a_post.png", img);
    write_png(dir / "b_pre.png", img);
    write_png(dir / "b_post.png", img);
    auto scene = [](const std::string& id) {
        return nlohmann::json{{"scene_id", id},
                              {"disaster_id", "flood"},
                              {"pre_image", id + "_pre.png"},
                              {"post_image", id + "_post.png"},
                              {"width", 32},
                              {"height", 24},
                              {"buildings", {{{"polygon", {{2, 2}, {10, 2}, {10, 8}, {2, 8}}}, {"damage", 2}}}}};
    };
    auto write = [&](const nlohmann::json& j) {
        std::ofstream(dir / "manifest.json") << j.dump();
        return dir / "manifest.json";
    };

    SUBCASE("empty manifest") { CHECK(ingest_manifest(write(nlohmann::json::array())).empty()); }
    SUBCASE("two scenes keep their order") {
        const auto recs = ingest_manifest(write({scene("b"), scene("a")}));
        REQUIRE(recs.size() == 2);
        CHECK(recs[0].scene_id == "b");
        CHECK(recs[1].scene_id == "a");
        CHECK(recs[0].annotations.size() == 1);
        const RasterPair p = load_raster_pair(recs[0]);
        CHECK(p.mask.at(5, 5) == 2);
    }
    SUBCASE("missing post image names the scene and path") {
        auto j = scene("a");
        j["post_image"] = "nowhere.png";
        try {
            ingest_manifest(write(nlohmann::json::array({j})));
            FAIL("expected IngestError");
        } catch (const IngestError& e) {
            const std::string msg = e.what();
            CHECK(msg.find("'a'") != std::string::npos);
            CHECK(msg.find("nowhere.png") != std::string::npos);
        }
    }
    SUBCASE("duplicate ids") { CHECK_THROWS_AS(ingest_manifest(write({scene("a"), scene("a")})), ManifestError); }
    SUBCASE("two-vertex polygon") {
        auto j = scene("a");
        j["buildings"][0]["polygon"] = {{1, 1}, {5, 5}};
        CHECK_THROWS_AS(ingest_manifest(write(nlohmann::json::array({j}))), ValidationError);
    }
    SUBCASE("size mismatch with the PNG header") {
        auto j = scene("a");
        j["width"] = 64;
        CHECK_THROWS_AS(ingest_manifest(write(nlohmann::json::array({j}))), IngestError);
    }
    SUBCASE("write_manifest round trip") {
        const auto recs = ingest_manifest(write({scene("a"), scene("b")}));
        write_manifest(dir / "copy.json", recs);
        const auto again = ingest_manifest(dir / "copy.json");
        REQUIRE(again.size() == 2);
        CHECK(again[1].annotations[0].polygon.size() == 4);
    }
}

TEST_CASE("fold splitting") {
    SUBCASE("identical histograms split evenly") {
        std::vector<SceneRecord> recs(10);
        for (int i = 0; i < 10; ++i) {
            recs[i].scene_id = "s" + std::to_string(i);
            recs[i].annotations = {rect(0, 0, 2, 2, DamageClass::kMinor)};
        }
        const auto f = split_folds(recs, 5, 3);
        for (int k = 0; k < 5; ++k) CHECK(f.scenes_in(k).size() == 2);
        CHECK(split_folds(recs, 5, 3).fold_of == f.fold_of);
    }
    SUBCASE("argument checks") {
        std::vector<SceneRecord> recs(3);
        for (int i = 0; i < 3; ++i) recs[i].scene_id = std::to_string(i);
        CHECK_THROWS_AS(split_folds(recs, 1, 0), ArgumentError);
        CHECK_THROWS_AS(split_folds(recs, 4, 0), ArgumentError);
    }
    SUBCASE("csv round trip") {
        TempDir dir("folds");
        std::vector<SceneRecord> recs(6);
        for (int i = 0; i < 6; ++i) recs[i].scene_id = "scene-" + std::to_string(i);
        const auto f = split_folds(recs, 3, 9);
        write_folds_csv(dir / "folds.csv", f);
        CHECK(read_folds_csv(dir / "folds.csv").fold_of == f.fold_of);
    }
}

TEST_CASE("synthetic generator") {
    SyntheticConfig cfg;
    SUBCASE("deterministic per seed") {
        const auto a = generate_synthetic_scene(5, cfg);
        const auto b = generate_synthetic_scene(5, cfg);
        CHECK(a.pair.pre == b.pair.pre);
        CHECK(a.pair.post == b.pair.post);
        CHECK(a.pair.mask == b.pair.mask);
        CHECK(!(generate_synthetic_scene(6, cfg).pair.pre == a.pair.pre));
    }
    SUBCASE("exact class counts round-trip through the histogram") {
        cfg.damage_counts = std::array<int, 4>{3, 2, 1, 2};
        const auto s = generate_synthetic_scene(1, cfg);
        CHECK(damage_histogram(s.record).counts == std::array<std::int64_t, 4>{3, 2, 1, 2});
        CHECK(damage_histogram(s.record).total() == 8);
        CHECK(s.pair.mask == rasterize_annotations(s.record.annotations, cfg.width, cfg.height));
        CHECK(load_raster_pair(s.record).post == s.pair.post);
    }
    SUBCASE("undamaged mixture changes the post image only by jitter and drift") {
        cfg.damage_mixture = {1.0, 0.0, 0.0, 0.0};
        cfg.jitter_shift_px = 0.0;
        cfg.jitter_rotation_deg = 0.0;
        cfg.brightness_drift = 0.0;
        cfg.contrast_drift = 0.0;
        const auto s = generate_synthetic_scene(2, cfg);
        CHECK(s.pair.pre == s.pair.post);
        for (auto v : s.pair.mask.labels) CHECK(v <= 1);
    }
    SUBCASE("impossible packing fails loudly") {
        cfg.width = 32;
        cfg.height = 32;
        cfg.min_buildings = 30;
        cfg.max_buildings = 30;
        CHECK_THROWS_AS(generate_synthetic_scene(0, cfg), GenerationError);
    }
}

}  // TEST_SUITE
