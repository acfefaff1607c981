#include "damageseg/augment.hpp"

#include "damageseg/error.hpp"
#include "damageseg/imaging.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>

namespace damageseg {

AugmentPreset parse_augment_preset(const std::string& name) {
    if (name == "none") return AugmentPreset::kNone;
    if (name == "color") return AugmentPreset::kColor;
    if (name == "medium") return AugmentPreset::kMedium;
    if (name == "hard") return AugmentPreset::kHard;
    throw ArgumentError("unknown augmentation preset '" + name +
                        "' (expected none, color, medium or hard)");
}

const char* to_string(AugmentPreset preset) {
    switch (preset) {
        case AugmentPreset::kNone: return "none";
        case AugmentPreset::kColor: return "color";
        case AugmentPreset::kMedium: return "medium";
        case AugmentPreset::kHard: return "hard";
    }
    return "?";
}

namespace {

struct Field {
    std::function<double&(AugmentationPolicy&)> number;
    std::function<bool&(AugmentationPolicy&)> flag;
    std::function<int&(AugmentationPolicy&)> integer;
};

#define DS_NUM(path, member) {path, Field{[](AugmentationPolicy& p) -> double& { return p.member; }, {}, {}}}
#define DS_FLAG(path, member) {path, Field{{}, [](AugmentationPolicy& p) -> bool& { return p.member; }, {}}}
#define DS_INT(path, member) {path, Field{{}, {}, [](AugmentationPolicy& p) -> int& { return p.member; }}}

const std::map<std::string, Field>& policy_fields() {
    static const std::map<std::string, Field> fields = {
        DS_FLAG("post_only.enabled", post_only.enabled),
        DS_NUM("post_only.max_rotation_deg", post_only.max_rotation_deg),
        DS_NUM("post_only.max_shift_px", post_only.max_shift_px),
        DS_NUM("post_only.scale_range", post_only.scale_range),
        DS_INT("shared.crop", shared.crop),
        DS_FLAG("shared.random_crop", shared.random_crop),
        DS_FLAG("shared.scale", shared.scale),
        DS_NUM("shared.scale_min", shared.scale_min),
        DS_NUM("shared.scale_max", shared.scale_max),
        DS_NUM("shared.scale_p", shared.scale_p),
        DS_FLAG("shared.hflip", shared.hflip),
        DS_NUM("shared.hflip_p", shared.hflip_p),
        DS_FLAG("shared.rot90", shared.rot90),
        DS_NUM("shared.rot90_p", shared.rot90_p),
        DS_FLAG("shared.transpose", shared.transpose),
        DS_NUM("shared.transpose_p", shared.transpose_p),
        DS_FLAG("shared.grid_shuffle", shared.grid_shuffle),
        DS_INT("shared.grid", shared.grid),
        DS_NUM("shared.grid_shuffle_p", shared.grid_shuffle_p),
        DS_FLAG("shared.mask_dropout", shared.mask_dropout),
        DS_NUM("shared.mask_dropout_p", shared.mask_dropout_p),
        DS_FLAG("color.enabled", color.enabled),
        DS_NUM("color.brightness", color.brightness),
        DS_NUM("color.contrast", color.contrast),
        DS_NUM("color.brightness_contrast_p", color.brightness_contrast_p),
        DS_NUM("color.gamma_min", color.gamma_min),
        DS_NUM("color.gamma_max", color.gamma_max),
        DS_NUM("color.gamma_p", color.gamma_p),
        DS_NUM("color.hue_shift_deg", color.hue_shift_deg),
        DS_NUM("color.saturation_shift", color.saturation_shift),
        DS_NUM("color.value_shift", color.value_shift),
        DS_NUM("color.rgb_shift", color.rgb_shift),
        DS_NUM("color.colorspace_p", color.colorspace_p),
    };
    return fields;
}

#undef DS_NUM
#undef DS_FLAG
#undef DS_INT

}  // namespace

AugmentationPolicy build_policy(const std::string& preset,
                                const std::map<std::string, double>& overrides) {
    AugmentationPolicy p;
    p.preset = parse_augment_preset(preset);
    switch (p.preset) {
        case AugmentPreset::kNone:
            break;
        case AugmentPreset::kColor:
            p.shared.random_crop = true;
            p.color.enabled = true;
            break;
        case AugmentPreset::kHard:
            p.shared.grid_shuffle = true;
            p.shared.mask_dropout = true;
            [[fallthrough]];
        case AugmentPreset::kMedium:
            p.post_only.enabled = true;
            p.shared.random_crop = true;
            p.shared.scale = true;
            p.shared.hflip = true;
            p.shared.rot90 = true;
            p.shared.transpose = true;
            p.color.enabled = true;
            break;
    }
    const auto& fields = policy_fields();
    for (const auto& [key, value] : overrides) {
        const auto it = fields.find(key);
        if (it == fields.end()) throw ArgumentError("unknown augmentation parameter '" + key + "'");
        if (it->second.number) {
            it->second.number(p) = value;
        } else if (it->second.flag) {
            it->second.flag(p) = value != 0.0;
        } else {
            it->second.integer(p) = static_cast<int>(std::lround(value));
        }
    }
    validate_policy(p);
    return p;
}

void validate_policy(const AugmentationPolicy& p) {
    auto nonneg = [](double v, const char* name) {
        if (!(v >= 0.0)) throw ValidationError(std::string("augmentation magnitude '") + name + "' is negative");
    };
    auto prob = [](double v, const char* name) {
        if (!(v >= 0.0 && v <= 1.0)) {
            throw ValidationError(std::string("augmentation probability '") + name + "' outside [0, 1]");
        }
    };
    nonneg(p.post_only.max_rotation_deg, "post_only.max_rotation_deg");
    nonneg(p.post_only.max_shift_px, "post_only.max_shift_px");
    nonneg(p.post_only.scale_range, "post_only.scale_range");
    if (p.post_only.scale_range >= 1.0) throw ValidationError("post_only.scale_range must be < 1");
    if (p.shared.crop <= 0) throw ValidationError("shared.crop must be positive");
    nonneg(p.shared.scale_min, "shared.scale_min");
    if (p.shared.scale_min <= 0.0 || p.shared.scale_max < p.shared.scale_min) {
        throw ValidationError("shared scale range must satisfy 0 < min <= max");
    }
    if (p.shared.grid < 1) throw ValidationError("shared.grid must be >= 1");
    prob(p.shared.scale_p, "shared.scale_p");
    prob(p.shared.hflip_p, "shared.hflip_p");
    prob(p.shared.rot90_p, "shared.rot90_p");
    prob(p.shared.transpose_p, "shared.transpose_p");
    prob(p.shared.grid_shuffle_p, "shared.grid_shuffle_p");
    prob(p.shared.mask_dropout_p, "shared.mask_dropout_p");
    nonneg(p.color.brightness, "color.brightness");
    nonneg(p.color.contrast, "color.contrast");
    nonneg(p.color.hue_shift_deg, "color.hue_shift_deg");
    nonneg(p.color.saturation_shift, "color.saturation_shift");
    nonneg(p.color.value_shift, "color.value_shift");
    nonneg(p.color.rgb_shift, "color.rgb_shift");
    if (p.color.gamma_min <= 0.0 || p.color.gamma_max < p.color.gamma_min) {
        throw ValidationError("colour gamma range must satisfy 0 < min <= max");
    }
    prob(p.color.brightness_contrast_p, "color.brightness_contrast_p");
    prob(p.color.gamma_p, "color.gamma_p");
    prob(p.color.colorspace_p, "color.colorspace_p");
}

nlohmann::json policy_to_json(const AugmentationPolicy& policy) {
    nlohmann::json j;
    j["preset"] = to_string(policy.preset);
    auto copy = policy;
    for (const auto& [key, field] : policy_fields()) {
        if (field.number) {
            j["overrides"][key] = field.number(copy);
        } else if (field.flag) {
            j["overrides"][key] = field.flag(copy) ? 1.0 : 0.0;
        } else {
            j["overrides"][key] = field.integer(copy);
        }
    }
    return j;
}

// ---------------------------------------------------------------------------
// Op execution

namespace {

template <class Raster, class F>
Raster remap(const Raster& src, int out_w, int out_h, F source_of) {
    constexpr int C = std::is_same_v<Raster, Image> ? 3 : 1;
    Raster dst(out_w, out_h);
    for (int y = 0; y < out_h; ++y) {
        for (int x = 0; x < out_w; ++x) {
            const auto [sx, sy] = source_of(x, y);
            if constexpr (C == 3) {
                for (int c = 0; c < 3; ++c) dst.at(x, y, c) = src.at(sx, sy, c);
            } else {
                dst.at(x, y) = src.at(sx, sy);
            }
        }
    }
    return dst;
}

// Pixel permutations shared by images and masks.
template <class Raster>
Raster apply_permutation(const AppliedOp& op, const Raster& src) {
    const int w = src.width;
    const int h = src.height;
    if (op.name == "hflip") {
        return remap(src, w, h, [&](int x, int y) { return std::pair{w - 1 - x, y}; });
    }
    if (op.name == "transpose") {
        return remap(src, h, w, [&](int x, int y) { return std::pair{y, x}; });
    }
    if (op.name == "rot90") {
        // Counter-clockwise quarter turns.
        const int k = static_cast<int>(op.params.at("k")) & 3;
        Raster out = src;
        for (int i = 0; i < k; ++i) {
            const int cw = out.width;
            out = remap(out, out.height, cw, [&](int x, int y) { return std::pair{cw - 1 - y, x}; });
        }
        return out;
    }
    if (op.name == "grid_shuffle") {
        const int g = static_cast<int>(op.params.at("grid"));
        const int cw = w / g;
        const int ch = h / g;
        return remap(src, w, h, [&](int x, int y) {
            const int cell = (y / ch) * g + (x / cw);
            const int from = static_cast<int>(op.params.at("p" + std::to_string(cell)));
            return std::pair{(from % g) * cw + x % cw, (from / g) * ch + y % ch};
        });
    }
    throw ArgumentError("unknown spatial op '" + op.name + "'");
}

Mask drop_instances(const Mask& src, std::uint64_t seed, double p) {
    Mask out = src;
    const int w = src.width;
    const int h = src.height;
    std::vector<int> comp(static_cast<std::size_t>(w) * h, -1);
    std::mt19937_64 rng(seed);
    std::bernoulli_distribution drop(p);
    std::vector<int> stack;
    int next = 0;
    for (int start = 0; start < w * h; ++start) {
        if (src.labels[start] == 0 || comp[start] >= 0) continue;
        const bool remove = drop(rng);
        comp[start] = next;
        stack.assign(1, start);
        while (!stack.empty()) {
            const int idx = stack.back();
            stack.pop_back();
            if (remove) out.labels[idx] = 0;
            const int x = idx % w;
            const int y = idx / w;
            const int nbr[4][2] = {{x - 1, y}, {x + 1, y}, {x, y - 1}, {x, y + 1}};
            for (const auto& n : nbr) {
                if (n[0] < 0 || n[1] < 0 || n[0] >= w || n[1] >= h) continue;
                const int j = n[1] * w + n[0];
                if (src.labels[j] != 0 && comp[j] < 0) {
                    comp[j] = next;
                    stack.push_back(j);
                }
            }
        }
        ++next;
    }
    return out;
}

void rgb_to_hsv(double r, double g, double b, double& h, double& s, double& v) {
    const double mx = std::max({r, g, b});
    const double mn = std::min({r, g, b});
    const double d = mx - mn;
    v = mx;
    s = mx > 0.0 ? d / mx : 0.0;
    if (d == 0.0) {
        h = 0.0;
    } else if (mx == r) {
        h = 60.0 * std::fmod((g - b) / d, 6.0);
    } else if (mx == g) {
        h = 60.0 * ((b - r) / d + 2.0);
    } else {
        h = 60.0 * ((r - g) / d + 4.0);
    }
    if (h < 0.0) h += 360.0;
}

void hsv_to_rgb(double h, double s, double v, double& r, double& g, double& b) {
    const double c = v * s;
    const double hp = std::fmod(h, 360.0) / 60.0;
    const double x = c * (1.0 - std::fabs(std::fmod(hp, 2.0) - 1.0));
    double r1 = 0, g1 = 0, b1 = 0;
    if (hp < 1) { r1 = c; g1 = x; }
    else if (hp < 2) { r1 = x; g1 = c; }
    else if (hp < 3) { g1 = c; b1 = x; }
    else if (hp < 4) { g1 = x; b1 = c; }
    else if (hp < 5) { r1 = x; b1 = c; }
    else { r1 = c; b1 = x; }
    const double m = v - c;
    r = r1 + m;
    g = g1 + m;
    b = b1 + m;
}

Image apply_color(const AppliedOp& op, const Image& src) {
    Image out = src;
    const auto& p = op.params;
    if (op.name == "brightness_contrast") {
        const double alpha = p.at("alpha");
        const double beta = p.at("beta");
        for (auto& v : out.pixels) v = saturate_u8(alpha * v + beta);
    } else if (op.name == "gamma") {
        const double g = p.at("gamma");
        std::array<std::uint8_t, 256> lut{};
        for (int i = 0; i < 256; ++i) lut[i] = saturate_u8(255.0 * std::pow(i / 255.0, g));
        for (auto& v : out.pixels) v = lut[v];
    } else if (op.name == "hsv_shift") {
        const double dh = p.at("hue");
        const double ds = p.at("saturation");
        const double dv = p.at("value");
        for (std::size_t i = 0; i < out.pixels.size(); i += 3) {
            double h, s, v, r, g, b;
            rgb_to_hsv(out.pixels[i] / 255.0, out.pixels[i + 1] / 255.0, out.pixels[i + 2] / 255.0, h, s, v);
            h = std::fmod(h + dh + 360.0, 360.0);
            s = std::clamp(s + ds, 0.0, 1.0);
            v = std::clamp(v + dv, 0.0, 1.0);
            hsv_to_rgb(h, s, v, r, g, b);
            out.pixels[i] = saturate_u8(r * 255.0);
            out.pixels[i + 1] = saturate_u8(g * 255.0);
            out.pixels[i + 2] = saturate_u8(b * 255.0);
        }
    } else if (op.name == "rgb_shift") {
        const double shift[3] = {p.at("r"), p.at("g"), p.at("b")};
        for (std::size_t i = 0; i < out.pixels.size(); ++i) {
            out.pixels[i] = saturate_u8(out.pixels[i] + shift[i % 3]);
        }
    } else {
        throw ArgumentError("unknown colour op '" + op.name + "'");
    }
    return out;
}

void execute(const AppliedOp& op, AugmentedSample& s) {
    if (op.group == "post_only") {
        AffineJitter t;
        t.rotation_deg = op.params.at("rotation_deg");
        t.scale = op.params.at("scale");
        t.dx = op.params.at("dx");
        t.dy = op.params.at("dy");
        s.post = warp_affine(s.post, t);
    } else if (op.group == "shared") {
        if (op.name == "crop") {
            const double x = op.params.at("x");
            const double y = op.params.at("y");
            const double side = op.params.at("side");
            const int out = static_cast<int>(op.params.at("size"));
            s.pre = resize_window_bilinear(s.pre, x, y, side, side, out, out);
            s.post = resize_window_bilinear(s.post, x, y, side, side, out, out);
            s.mask = resize_window_nearest(s.mask, x, y, side, side, out, out);
        } else if (op.name == "mask_dropout") {
            s.mask = drop_instances(s.mask, static_cast<std::uint64_t>(op.params.at("seed")),
                                    op.params.at("p"));
        } else {
            s.pre = apply_permutation(op, s.pre);
            s.post = apply_permutation(op, s.post);
            s.mask = apply_permutation(op, s.mask);
        }
    } else if (op.group == "color") {
        if (op.target == "pre") {
            s.pre = apply_color(op, s.pre);
        } else {
            s.post = apply_color(op, s.post);
        }
    } else {
        throw ArgumentError("unknown op group '" + op.group + "'");
    }
}

class Sampler {
public:
    explicit Sampler(std::uint64_t seed) : rng_(seed) {}
    double uniform(double lo, double hi) {
        return lo == hi ? lo : std::uniform_real_distribution<double>(lo, hi)(rng_);
    }
    int uniform_int(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng_); }
    bool chance(double p) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng_) < p; }
    std::uint64_t next() { return rng_(); }
    std::mt19937_64& engine() { return rng_; }

private:
    std::mt19937_64 rng_;
};

void draw_color(const ColorJitter& c, const char* target, Sampler& rng, std::vector<AppliedOp>& ops) {
    if (rng.chance(c.brightness_contrast_p)) {
        ops.push_back({"brightness_contrast", "color", target,
                       {{"alpha", 1.0 + rng.uniform(-c.contrast, c.contrast)},
                        {"beta", 255.0 * rng.uniform(-c.brightness, c.brightness)}}});
    }
    if (rng.chance(c.gamma_p)) {
        ops.push_back({"gamma", "color", target, {{"gamma", rng.uniform(c.gamma_min, c.gamma_max)}}});
    }
    if (rng.chance(c.colorspace_p)) {
        if (rng.chance(0.5)) {
            ops.push_back({"hsv_shift", "color", target,
                           {{"hue", rng.uniform(-c.hue_shift_deg, c.hue_shift_deg)},
                            {"saturation", rng.uniform(-c.saturation_shift, c.saturation_shift)},
                            {"value", rng.uniform(-c.value_shift, c.value_shift)}}});
        } else {
            ops.push_back({"rgb_shift", "color", target,
                           {{"r", rng.uniform(-c.rgb_shift, c.rgb_shift)},
                            {"g", rng.uniform(-c.rgb_shift, c.rgb_shift)},
                            {"b", rng.uniform(-c.rgb_shift, c.rgb_shift)}}});
        }
    }
}

}  // namespace

AugmentedSample apply_paired(const AugmentationPolicy& policy, const RasterPair& pair,
                             std::uint64_t seed) {
    validate_pair(pair);
    const int w = pair.pre.width;
    const int h = pair.pre.height;
    const auto& sh = policy.shared;
    if (sh.crop > std::min(w, h)) {
        throw ArgumentError("crop " + std::to_string(sh.crop) + " larger than image " +
                            std::to_string(w) + "x" + std::to_string(h));
    }

    Sampler rng(seed);
    std::vector<AppliedOp> ops;

    if (policy.post_only.enabled) {
        const auto& po = policy.post_only;
        ops.push_back({"affine", "post_only", "post",
                       {{"rotation_deg", rng.uniform(-po.max_rotation_deg, po.max_rotation_deg)},
                        {"scale", 1.0 + rng.uniform(-po.scale_range, po.scale_range)},
                        {"dx", rng.uniform(-po.max_shift_px, po.max_shift_px)},
                        {"dy", rng.uniform(-po.max_shift_px, po.max_shift_px)}}});
    }

    // Random-sized crop: a window of side crop/scale resampled to crop x crop.
    {
        double scale = 1.0;
        if (sh.scale && rng.chance(sh.scale_p)) scale = rng.uniform(sh.scale_min, sh.scale_max);
        const double side = std::min<double>(sh.crop / scale, std::min(w, h));
        const int max_x = static_cast<int>(std::floor(w - side));
        const int max_y = static_cast<int>(std::floor(h - side));
        int x = max_x / 2;
        int y = max_y / 2;
        if (sh.random_crop) {
            x = rng.uniform_int(0, max_x);
            y = rng.uniform_int(0, max_y);
        }
        ops.push_back({"crop", "shared", "all",
                       {{"x", x}, {"y", y}, {"side", side}, {"size", sh.crop}}});
    }
    if (sh.hflip && rng.chance(sh.hflip_p)) ops.push_back({"hflip", "shared", "all", {}});
    if (sh.rot90 && rng.chance(sh.rot90_p)) {
        ops.push_back({"rot90", "shared", "all", {{"k", rng.uniform_int(1, 3)}}});
    }
    if (sh.transpose && rng.chance(sh.transpose_p)) ops.push_back({"transpose", "shared", "all", {}});
    if (sh.grid_shuffle && sh.crop % sh.grid == 0 && rng.chance(sh.grid_shuffle_p)) {
        std::vector<int> perm(static_cast<std::size_t>(sh.grid) * sh.grid);
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), rng.engine());
        AppliedOp op{"grid_shuffle", "shared", "all", {{"grid", sh.grid}}};
        for (std::size_t i = 0; i < perm.size(); ++i) op.params["p" + std::to_string(i)] = perm[i];
        ops.push_back(std::move(op));
    }
    if (sh.mask_dropout) {
        // 53-bit seed survives the round trip through a double parameter.
        const double op_seed = static_cast<double>(rng.next() >> 11);
        ops.push_back({"mask_dropout", "shared", "mask", {{"seed", op_seed}, {"p", sh.mask_dropout_p}}});
    }

    if (policy.color.enabled) {
        draw_color(policy.color, "pre", rng, ops);
        draw_color(policy.color, "post", rng, ops);
    }

    return replay(ops, pair);
}

AugmentedSample replay(const std::vector<AppliedOp>& ops, const RasterPair& pair) {
    AugmentedSample s{pair.pre, pair.post, pair.mask, {}};
    for (const auto& op : ops) execute(op, s);
    s.applied_ops = ops;
    return s;
}

Mask apply_shared_to_mask(const AppliedOp& op, const Mask& mask) {
    if (op.group != "shared") throw ArgumentError("op '" + op.name + "' is not a shared spatial op");
    if (op.name == "crop") {
        const int out = static_cast<int>(op.params.at("size"));
        const double side = op.params.at("side");
        return resize_window_nearest(mask, op.params.at("x"), op.params.at("y"), side, side, out, out);
    }
    if (op.name == "mask_dropout") {
        return drop_instances(mask, static_cast<std::uint64_t>(op.params.at("seed")), op.params.at("p"));
    }
    return apply_permutation(op, mask);
}

nlohmann::json ops_to_json(const std::vector<AppliedOp>& ops) {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& op : ops) {
        j.push_back({{"name", op.name}, {"group", op.group}, {"target", op.target}, {"params", op.params}});
    }
    return j;
}

std::vector<AppliedOp> ops_from_json(const nlohmann::json& j) {
    std::vector<AppliedOp> ops;
    for (const auto& o : j) {
        ops.push_back({o.at("name").get<std::string>(), o.at("group").get<std::string>(),
                       o.at("target").get<std::string>(),
                       o.at("params").get<std::map<std::string, double>>()});
    }
    return ops;
}

}  // namespace damageseg
