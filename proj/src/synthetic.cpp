#include "damageseg/dataset.hpp"
#include "damageseg/error.hpp"
#include "damageseg/imaging.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

namespace damageseg {

namespace {

struct Box {
    double x0, y0, x1, y1;
    bool overlaps(const Box& o, double gap) const {
        return x0 - gap < o.x1 && o.x0 - gap < x1 && y0 - gap < o.y1 && o.y0 - gap < y1;
    }
};

std::vector<Point> rotated_rect(double cx, double cy, double w, double h, double angle_deg) {
    const double t = angle_deg * std::numbers::pi / 180.0;
    const double c = std::cos(t);
    const double s = std::sin(t);
    const double hw = w / 2.0;
    const double hh = h / 2.0;
    const double corners[4][2] = {{-hw, -hh}, {hw, -hh}, {hw, hh}, {-hw, hh}};
    std::vector<Point> poly;
    for (const auto& k : corners) {
        poly.push_back({cx + c * k[0] - s * k[1], cy + s * k[0] + c * k[1]});
    }
    return poly;
}

Box bounds(const std::vector<Point>& poly) {
    Box b{poly[0].x, poly[0].y, poly[0].x, poly[0].y};
    for (const auto& p : poly) {
        b.x0 = std::min(b.x0, p.x);
        b.y0 = std::min(b.y0, p.y);
        b.x1 = std::max(b.x1, p.x);
        b.y1 = std::max(b.y1, p.y);
    }
    return b;
}

void validate(const SyntheticConfig& c) {
    if (c.width <= 0 || c.height <= 0) throw ArgumentError("synthetic: image size must be positive");
    if (c.min_size < 2 || c.max_size < c.min_size) {
        throw ArgumentError("synthetic: building size range is invalid");
    }
    if (c.min_buildings < 0 || c.max_buildings < c.min_buildings) {
        throw ArgumentError("synthetic: building count range is invalid");
    }
    if (c.damage_counts) {
        for (int v : *c.damage_counts) {
            if (v < 0) throw ArgumentError("synthetic: negative damage count");
        }
    } else {
        double sum = 0.0;
        for (double p : c.damage_mixture) {
            if (p < 0.0) throw ArgumentError("synthetic: negative damage mixture weight");
            sum += p;
        }
        if (sum <= 0.0) throw ArgumentError("synthetic: damage mixture sums to zero");
    }
    if (c.jitter_shift_px < 0 || c.jitter_rotation_deg < 0 || c.brightness_drift < 0 ||
        c.contrast_drift < 0 || c.max_orientation_deg < 0 || c.min_gap < 0) {
        throw ArgumentError("synthetic: magnitudes must be non-negative");
    }
}

}  // namespace

SyntheticScene generate_synthetic_scene(std::uint64_t seed, const SyntheticConfig& config) {
    validate(config);
    std::mt19937_64 rng(seed);
    auto uniform = [&](double lo, double hi) {
        return std::uniform_real_distribution<double>(lo, hi)(rng);
    };
    auto uniform_int = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };

    // Damage labels.
    std::vector<DamageClass> damages;
    if (config.damage_counts) {
        for (int c = 0; c < 4; ++c) {
            for (int i = 0; i < (*config.damage_counts)[c]; ++i) {
                damages.push_back(static_cast<DamageClass>(c + 1));
            }
        }
        std::shuffle(damages.begin(), damages.end(), rng);
    } else {
        const int count = uniform_int(config.min_buildings, config.max_buildings);
        std::discrete_distribution<int> mix(config.damage_mixture.begin(), config.damage_mixture.end());
        for (int i = 0; i < count; ++i) damages.push_back(static_cast<DamageClass>(mix(rng) + 1));
    }

    const double min_footprint = static_cast<double>(config.min_size + config.min_gap) *
                                 (config.min_size + config.min_gap);
    if (static_cast<double>(damages.size()) * min_footprint >
        0.9 * static_cast<double>(config.width) * config.height) {
        throw GenerationError("cannot place " + std::to_string(damages.size()) +
                              " buildings in a " + std::to_string(config.width) + "x" +
                              std::to_string(config.height) + " scene");
    }

    // Placement by rejection sampling of non-overlapping bounding boxes.
    std::vector<BuildingAnnotation> buildings;
    std::vector<Box> boxes;
    constexpr int kAttempts = 500;
    for (DamageClass d : damages) {
        bool placed = false;
        for (int attempt = 0; attempt < kAttempts && !placed; ++attempt) {
            const double w = uniform_int(config.min_size, config.max_size);
            const double h = uniform_int(config.min_size, config.max_size);
            const double angle = uniform(-config.max_orientation_deg, config.max_orientation_deg);
            const double half_diag = 0.5 * std::hypot(w, h) + 1.0;
            if (2 * half_diag >= config.width || 2 * half_diag >= config.height) continue;
            const double cx = uniform(half_diag, config.width - half_diag);
            const double cy = uniform(half_diag, config.height - half_diag);
            auto poly = rotated_rect(cx, cy, w, h, angle);
            const Box b = bounds(poly);
            const bool clash = std::any_of(boxes.begin(), boxes.end(), [&](const Box& o) {
                return b.overlaps(o, config.min_gap);
            });
            if (clash) continue;
            boxes.push_back(b);
            buildings.push_back({std::move(poly), d});
            placed = true;
        }
        if (!placed) {
            throw GenerationError("could not place building " + std::to_string(buildings.size() + 1) +
                                  " of " + std::to_string(damages.size()) + " without overlap");
        }
    }

    // Ground texture shared by both epochs.
    const int W = config.width;
    const int H = config.height;
    Image pre(W, H);
    {
        const double base[3] = {100.0, 118.0, 72.0};
        double phase[3][2];
        double freq[3][2];
        for (int c = 0; c < 3; ++c) {
            for (int k = 0; k < 2; ++k) {
                phase[c][k] = uniform(0.0, 2.0 * std::numbers::pi);
                freq[c][k] = uniform(0.02, 0.08);
            }
        }
        for (int y = 0; y < H; ++y) {
            for (int x = 0; x < W; ++x) {
                for (int c = 0; c < 3; ++c) {
                    const double lowfreq = 8.0 * std::sin(freq[c][0] * x + phase[c][0]) +
                                           8.0 * std::sin(freq[c][1] * y + phase[c][1]);
                    pre.at(x, y, c) = saturate_u8(base[c] + lowfreq + uniform(-10.0, 10.0));
                }
            }
        }
    }
    Image post = pre;

    // Buildings: intact roofs in pre, damage signatures in post.
    for (const auto& b : buildings) {
        const Mask footprint = rasterize_annotations({b}, W, H);
        const double grey = uniform(170.0, 225.0);
        double roof[3];
        for (double& r : roof) r = grey + uniform(-10.0, 10.0);
        const int d = static_cast<int>(b.damage);
        for (int y = 0; y < H; ++y) {
            for (int x = 0; x < W; ++x) {
                if (!footprint.at(x, y)) continue;
                for (int c = 0; c < 3; ++c) {
                    const std::uint8_t intact = saturate_u8(roof[c] + uniform(-4.0, 4.0));
                    pre.at(x, y, c) = intact;
                    if (d == 4) {
                        const double rubble[3] = {128.0, 108.0, 88.0};
                        post.at(x, y, c) = saturate_u8(rubble[c] + uniform(-35.0, 35.0));
                    } else {
                        const double speckle = config.roof_speckle[d - 1];
                        const double noise = speckle > 0 ? uniform(-speckle, speckle) : 0.0;
                        post.at(x, y, c) = saturate_u8(intact * config.roof_darkening[d - 1] + noise);
                    }
                }
            }
        }
    }

    // Misregistration and photometric drift of the post image.
    AffineJitter jitter;
    jitter.dx = uniform(-config.jitter_shift_px, config.jitter_shift_px);
    jitter.dy = uniform(-config.jitter_shift_px, config.jitter_shift_px);
    jitter.rotation_deg = uniform(-config.jitter_rotation_deg, config.jitter_rotation_deg);
    post = warp_affine(post, jitter);
    const double brightness = uniform(-config.brightness_drift, config.brightness_drift);
    const double contrast = uniform(1.0 - config.contrast_drift, 1.0 + config.contrast_drift);
    if (brightness != 0.0 || contrast != 1.0) {
        for (auto& v : post.pixels) v = saturate_u8((v - 128.0) * contrast + 128.0 + brightness);
    }

    SyntheticScene scene;
    scene.record.scene_id = "synth-" + std::to_string(seed);
    scene.record.disaster_id = config.disaster_id;
    scene.record.width = W;
    scene.record.height = H;
    scene.record.annotations = buildings;
    scene.pair.mask = rasterize_annotations(buildings, W, H);
    scene.pair.pre = std::move(pre);
    scene.pair.post = std::move(post);
    scene.record.pre_image = std::make_shared<const Image>(scene.pair.pre);
    scene.record.post_image = std::make_shared<const Image>(scene.pair.post);
    return scene;
}

}  // namespace damageseg
