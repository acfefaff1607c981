#include "damageseg/dataset.hpp"

#include "damageseg/error.hpp"

#include "json.hpp"
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

namespace damageseg {

namespace fs = std::filesystem;
using nlohmann::json;

const char* damage_class_name(DamageClass c) {
    switch (c) {
        case DamageClass::kNoBuilding: return "no-building";
        case DamageClass::kNoDamage: return "no-damage";
        case DamageClass::kMinor: return "minor";
        case DamageClass::kMajor: return "major";
        case DamageClass::kDestroyed: return "destroyed";
    }
    return "?";
}

DamageClass to_damage_class(int value) {
    if (value < 0 || value > 4) {
        throw ValidationError("damage class " + std::to_string(value) + " outside 0..4");
    }
    return static_cast<DamageClass>(value);
}

// ---------------------------------------------------------------------------
// Polygon geometry

double polygon_area(const std::vector<Point>& polygon) {
    double twice = 0.0;
    const std::size_t n = polygon.size();
    for (std::size_t i = 0; i < n; ++i) {
        const Point& a = polygon[i];
        const Point& b = polygon[(i + 1) % n];
        twice += a.x * b.y - b.x * a.y;
    }
    return 0.5 * twice;
}

namespace {

int orientation(const Point& a, const Point& b, const Point& c) {
    const double v = (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x);
    return (v > 0) - (v < 0);
}

bool on_segment(const Point& a, const Point& b, const Point& p) {
    return std::min(a.x, b.x) <= p.x && p.x <= std::max(a.x, b.x) && std::min(a.y, b.y) <= p.y &&
           p.y <= std::max(a.y, b.y);
}

bool segments_intersect(const Point& p1, const Point& p2, const Point& q1, const Point& q2) {
    const int o1 = orientation(p1, p2, q1);
    const int o2 = orientation(p1, p2, q2);
    const int o3 = orientation(q1, q2, p1);
    const int o4 = orientation(q1, q2, p2);
    if (o1 != o2 && o3 != o4) return true;
    if (o1 == 0 && on_segment(p1, p2, q1)) return true;
    if (o2 == 0 && on_segment(p1, p2, q2)) return true;
    if (o3 == 0 && on_segment(q1, q2, p1)) return true;
    if (o4 == 0 && on_segment(q1, q2, p2)) return true;
    return false;
}

}  // namespace

bool polygon_is_simple(const std::vector<Point>& polygon) {
    const std::size_t n = polygon.size();
    if (n < 3) return false;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            // Adjacent edges share a vertex by construction.
            if (j == i + 1 || (i == 0 && j == n - 1)) continue;
            if (segments_intersect(polygon[i], polygon[(i + 1) % n], polygon[j],
                                   polygon[(j + 1) % n])) {
                return false;
            }
        }
    }
    return true;
}

void validate_annotation(const BuildingAnnotation& a, int width, int height) {
    if (a.polygon.size() < 3) {
        throw ValidationError("polygon has " + std::to_string(a.polygon.size()) +
                              " vertices; at least 3 required");
    }
    const int d = static_cast<int>(a.damage);
    if (d < 1 || d > 4) {
        throw ValidationError("building damage " + std::to_string(d) + " outside 1..4");
    }
    for (const auto& p : a.polygon) {
        if (!std::isfinite(p.x) || !std::isfinite(p.y) || p.x < -kPolygonMargin ||
            p.y < -kPolygonMargin || p.x > width + kPolygonMargin ||
            p.y > height + kPolygonMargin) {
            std::ostringstream os;
            os << "polygon vertex (" << p.x << ", " << p.y << ") outside image bounds " << width
               << "x" << height;
            throw ValidationError(os.str());
        }
    }
    if (!polygon_is_simple(a.polygon)) throw ValidationError("polygon is self-intersecting");
}

// ---------------------------------------------------------------------------
// Rasterization

namespace {

// Scanline fill of one polygon. A pixel centre on row y is inside when it lies
// in [x_in, x_out) of an even-odd span, which includes left/top edges and
// excludes right/bottom ones.
void burn_polygon(const std::vector<Point>& poly, std::uint8_t value, Mask& mask) {
    double ymin = poly[0].y;
    double ymax = poly[0].y;
    for (const auto& p : poly) {
        ymin = std::min(ymin, p.y);
        ymax = std::max(ymax, p.y);
    }
    const int row_begin = std::max(0, static_cast<int>(std::floor(ymin - 0.5)));
    const int row_end = std::min(mask.height, static_cast<int>(std::ceil(ymax + 0.5)) + 1);

    const std::size_t n = poly.size();
    std::vector<double> crossings;
    for (int y = row_begin; y < row_end; ++y) {
        const double yc = y + 0.5;
        crossings.clear();
        for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
            const Point& pi = poly[i];
            const Point& pj = poly[j];
            if ((pi.y > yc) != (pj.y > yc)) {
                crossings.push_back((pj.x - pi.x) * (yc - pi.y) / (pj.y - pi.y) + pi.x);
            }
        }
        std::sort(crossings.begin(), crossings.end());
        for (std::size_t k = 0; k + 1 < crossings.size(); k += 2) {
            const double a = crossings[k];
            const double b = crossings[k + 1];
            // First centre with x + 0.5 >= a, first centre with x + 0.5 >= b.
            auto first_at_or_after = [](double edge) {
                double guess = std::ceil(edge - 0.5);
                guess = std::clamp(guess, -1.0e9, 1.0e9);
                auto x = static_cast<long long>(guess);
                while (static_cast<double>(x - 1) + 0.5 >= edge) --x;
                while (static_cast<double>(x) + 0.5 < edge) ++x;
                return x;
            };
            const long long x0 = std::max<long long>(0, first_at_or_after(a));
            const long long x1 = std::min<long long>(mask.width, first_at_or_after(b));
            for (long long x = x0; x < x1; ++x) {
                auto& px = mask.at(static_cast<int>(x), y);
                px = std::max(px, value);
            }
        }
    }
}

}  // namespace

Mask rasterize_annotations(const std::vector<BuildingAnnotation>& annotations, int width,
                           int height) {
    if (width <= 0 || height <= 0) {
        throw ArgumentError("rasterize_annotations: width and height must be positive");
    }
    Mask mask(width, height, 0);
    for (const auto& a : annotations) {
        if (a.polygon.size() < 3) {
            throw ValidationError("polygon has fewer than 3 vertices");
        }
        if (polygon_area(a.polygon) == 0.0) {
            spdlog::warn("skipping zero-area polygon with {} vertices", a.polygon.size());
            continue;
        }
        burn_polygon(a.polygon, static_cast<std::uint8_t>(a.damage), mask);
    }
    return mask;
}

// ---------------------------------------------------------------------------
// Manifest

namespace {

fs::path resolve(const fs::path& base, const std::string& p) {
    fs::path path(p);
    return path.is_absolute() ? path : base / path;
}

template <class T>
T require(const json& obj, const char* key, const std::string& context) {
    if (!obj.contains(key)) throw ManifestError(context + ": missing field '" + key + "'");
    try {
        return obj.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ManifestError(context + ": field '" + key + "': " + e.what());
    }
}

void check_image(const SceneRecord& r, const fs::path& path, const char* which) {
    if (!fs::exists(path)) {
        throw IngestError("scene '" + r.scene_id + "': " + which + " image not found: " +
                          path.string());
    }
    const auto [w, h] = png_dimensions(path);
    if (w != r.width || h != r.height) {
        throw IngestError("scene '" + r.scene_id + "': " + which + " image " + path.string() +
                          " is " + std::to_string(w) + "x" + std::to_string(h) +
                          ", manifest says " + std::to_string(r.width) + "x" +
                          std::to_string(r.height));
    }
}

}  // namespace

std::vector<SceneRecord> ingest_manifest(const fs::path& manifest_path) {
    std::ifstream in(manifest_path);
    if (!in) throw IngestError("cannot open manifest " + manifest_path.string());
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ManifestError("manifest " + manifest_path.string() + ": " + e.what());
    }
    if (!doc.is_array()) throw ManifestError("manifest must be a JSON list of scenes");

    const fs::path base = manifest_path.parent_path();
    std::vector<SceneRecord> records;
    std::set<std::string> seen;
    for (std::size_t i = 0; i < doc.size(); ++i) {
        const json& s = doc[i];
        const std::string ctx = "manifest entry " + std::to_string(i);
        if (!s.is_object()) throw ManifestError(ctx + ": not an object");
        SceneRecord r;
        r.scene_id = require<std::string>(s, "scene_id", ctx);
        const std::string sctx = "scene '" + r.scene_id + "'";
        if (!seen.insert(r.scene_id).second) {
            throw ManifestError("duplicate scene_id '" + r.scene_id + "'");
        }
        r.disaster_id = require<std::string>(s, "disaster_id", sctx);
        r.width = require<int>(s, "width", sctx);
        r.height = require<int>(s, "height", sctx);
        if (r.width <= 0 || r.height <= 0) throw ManifestError(sctx + ": non-positive size");
        const fs::path pre = resolve(base, require<std::string>(s, "pre_image", sctx));
        const fs::path post = resolve(base, require<std::string>(s, "post_image", sctx));
        check_image(r, pre, "pre");
        check_image(r, post, "post");
        r.pre_image = pre;
        r.post_image = post;

        const json buildings = s.value("buildings", json::array());
        if (!buildings.is_array()) throw ManifestError(sctx + ": 'buildings' must be a list");
        for (const auto& b : buildings) {
            BuildingAnnotation a;
            const auto poly = require<std::vector<std::array<double, 2>>>(b, "polygon", sctx);
            for (const auto& v : poly) a.polygon.push_back({v[0], v[1]});
            const int damage = require<int>(b, "damage", sctx);
            if (damage < 1 || damage > 4) {
                throw ValidationError(sctx + ": building damage " + std::to_string(damage) +
                                      " outside 1..4");
            }
            a.damage = static_cast<DamageClass>(damage);
            try {
                validate_annotation(a, r.width, r.height);
            } catch (const ValidationError& e) {
                throw ValidationError(sctx + ": " + e.what());
            }
            r.annotations.push_back(std::move(a));
        }
        records.push_back(std::move(r));
    }
    return records;
}

void write_manifest(const fs::path& manifest_path, const std::vector<SceneRecord>& records) {
    json doc = json::array();
    for (const auto& r : records) {
        const auto* pre = std::get_if<fs::path>(&r.pre_image);
        const auto* post = std::get_if<fs::path>(&r.post_image);
        if (!pre || !post) {
            throw ArgumentError("scene '" + r.scene_id + "' holds in-memory images; write them first");
        }
        json buildings = json::array();
        for (const auto& a : r.annotations) {
            json poly = json::array();
            for (const auto& p : a.polygon) poly.push_back({p.x, p.y});
            buildings.push_back({{"polygon", poly}, {"damage", static_cast<int>(a.damage)}});
        }
        doc.push_back({{"scene_id", r.scene_id},
                       {"disaster_id", r.disaster_id},
                       {"pre_image", pre->string()},
                       {"post_image", post->string()},
                       {"width", r.width},
                       {"height", r.height},
                       {"buildings", buildings}});
    }
    std::ofstream out(manifest_path);
    if (!out) throw IoError("cannot write " + manifest_path.string());
    out << doc.dump(2) << '\n';
}

namespace {

Image load_image(const ImageSource& src) {
    if (const auto* p = std::get_if<fs::path>(&src)) return read_png_rgb(*p);
    const auto& ptr = std::get<std::shared_ptr<const Image>>(src);
    if (!ptr) throw IngestError("null in-memory image");
    return *ptr;
}

}  // namespace

RasterPair load_raster_pair(const SceneRecord& record) {
    RasterPair pair;
    try {
        pair.pre = load_image(record.pre_image);
        pair.post = load_image(record.post_image);
    } catch (const IoError& e) {
        throw IngestError("scene '" + record.scene_id + "': " + e.what());
    }
    if (pair.pre.width != record.width || pair.pre.height != record.height ||
        pair.post.width != record.width || pair.post.height != record.height) {
        throw IngestError("scene '" + record.scene_id + "': image size differs from record");
    }
    pair.mask = rasterize_annotations(record.annotations, record.width, record.height);
    return pair;
}

// ---------------------------------------------------------------------------
// Histograms and folds

std::int64_t DamageHistogram::total() const {
    return std::accumulate(counts.begin(), counts.end(), std::int64_t{0});
}

DamageHistogram& DamageHistogram::operator+=(const DamageHistogram& o) {
    for (int c = 0; c < 4; ++c) counts[c] += o.counts[c];
    return *this;
}

DamageHistogram damage_histogram(const SceneRecord& record) {
    DamageHistogram h;
    for (const auto& a : record.annotations) {
        const int d = static_cast<int>(a.damage);
        if (d >= 1 && d <= 4) ++h.counts[d - 1];
    }
    return h;
}

std::vector<std::string> FoldAssignment::scenes_in(int fold) const {
    std::vector<std::string> out;
    for (const auto& [id, f] : fold_of) {
        if (f == fold) out.push_back(id);
    }
    return out;
}

FoldAssignment split_folds(const std::vector<SceneRecord>& records, int k, std::uint64_t seed) {
    if (k < 2) throw ArgumentError("split_folds: k must be >= 2");
    const int n = static_cast<int>(records.size());
    if (n < k) {
        throw ArgumentError("split_folds: " + std::to_string(n) + " scenes cannot fill " +
                            std::to_string(k) + " folds");
    }

    std::vector<DamageHistogram> hist(n);
    std::array<double, 4> total{};
    for (int i = 0; i < n; ++i) {
        hist[i] = damage_histogram(records[i]);
        for (int c = 0; c < 4; ++c) total[c] += static_cast<double>(hist[i].counts[c]);
    }

    // Seeded tie-breaking orders for scenes and folds.
    std::mt19937_64 rng(seed);
    std::vector<int> scene_rank(n);
    {
        std::vector<int> perm(n);
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), rng);
        for (int r = 0; r < n; ++r) scene_rank[perm[r]] = r;
    }
    std::vector<int> fold_rank(k);
    {
        std::vector<int> perm(k);
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), rng);
        for (int r = 0; r < k; ++r) fold_rank[perm[r]] = r;
    }

    std::vector<std::array<double, 4>> label_need(k);
    std::vector<double> size_need(k, static_cast<double>(n) / k);
    for (int f = 0; f < k; ++f) {
        for (int c = 0; c < 4; ++c) label_need[f][c] = total[c] / k;
    }

    std::vector<int> fold(n, -1);
    auto assign = [&](int i, int f) {
        fold[i] = f;
        size_need[f] -= 1.0;
        for (int c = 0; c < 4; ++c) label_need[f][c] -= static_cast<double>(hist[i].counts[c]);
    };

    while (true) {
        std::array<std::int64_t, 4> remaining{};
        for (int i = 0; i < n; ++i) {
            if (fold[i] >= 0) continue;
            for (int c = 0; c < 4; ++c) remaining[c] += hist[i].counts[c];
        }
        int rarest = -1;
        for (int c = 0; c < 4; ++c) {
            if (remaining[c] > 0 && (rarest < 0 || remaining[c] < remaining[rarest])) rarest = c;
        }
        if (rarest < 0) break;

        std::vector<int> batch;
        for (int i = 0; i < n; ++i) {
            if (fold[i] < 0 && hist[i].counts[rarest] > 0) batch.push_back(i);
        }
        std::sort(batch.begin(), batch.end(), [&](int a, int b) {
            if (hist[a].counts[rarest] != hist[b].counts[rarest]) {
                return hist[a].counts[rarest] > hist[b].counts[rarest];
            }
            return scene_rank[a] < scene_rank[b];
        });
        for (int i : batch) {
            int best = 0;
            for (int f = 1; f < k; ++f) {
                const double dl = label_need[f][rarest] - label_need[best][rarest];
                const double ds = size_need[f] - size_need[best];
                if (dl > 0 || (dl == 0 && (ds > 0 || (ds == 0 && fold_rank[f] < fold_rank[best])))) {
                    best = f;
                }
            }
            assign(i, best);
        }
    }

    // Scenes without buildings balance fold sizes.
    std::vector<int> rest;
    for (int i = 0; i < n; ++i) {
        if (fold[i] < 0) rest.push_back(i);
    }
    std::sort(rest.begin(), rest.end(), [&](int a, int b) { return scene_rank[a] < scene_rank[b]; });
    for (int i : rest) {
        int best = 0;
        for (int f = 1; f < k; ++f) {
            const double ds = size_need[f] - size_need[best];
            if (ds > 0 || (ds == 0 && fold_rank[f] < fold_rank[best])) best = f;
        }
        assign(i, best);
    }

    // Guarantee non-empty folds by moving the lightest scene out of the largest fold.
    while (true) {
        std::vector<int> sizes(k, 0);
        for (int f : fold) ++sizes[f];
        const auto empty = std::find(sizes.begin(), sizes.end(), 0);
        if (empty == sizes.end()) break;
        const int largest =
            static_cast<int>(std::max_element(sizes.begin(), sizes.end()) - sizes.begin());
        int pick = -1;
        for (int i = 0; i < n; ++i) {
            if (fold[i] != largest) continue;
            if (pick < 0 || hist[i].total() < hist[pick].total() ||
                (hist[i].total() == hist[pick].total() && scene_rank[i] < scene_rank[pick])) {
                pick = i;
            }
        }
        fold[pick] = static_cast<int>(empty - sizes.begin());
    }

    FoldAssignment out;
    out.k = k;
    out.seed = seed;
    for (int i = 0; i < n; ++i) {
        if (!out.fold_of.emplace(records[i].scene_id, fold[i]).second) {
            throw ManifestError("duplicate scene_id '" + records[i].scene_id + "'");
        }
    }
    return out;
}

void write_folds_csv(const fs::path& path, const FoldAssignment& folds) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << "scene_id,fold\n";
    for (const auto& [id, f] : folds.fold_of) out << id << ',' << f << '\n';
}

FoldAssignment read_folds_csv(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line) || line != "scene_id,fold") {
        throw ValidationError(path.string() + ": expected header 'scene_id,fold'");
    }
    FoldAssignment folds;
    int max_fold = -1;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto comma = line.rfind(',');
        if (comma == std::string::npos) throw ValidationError("malformed fold row: " + line);
        const std::string id = line.substr(0, comma);
        int f = 0;
        try {
            f = std::stoi(line.substr(comma + 1));
        } catch (const std::exception&) {
            throw ValidationError("malformed fold index in row: " + line);
        }
        if (f < 0) throw ValidationError("negative fold index in row: " + line);
        if (!folds.fold_of.emplace(id, f).second) {
            throw ValidationError("scene '" + id + "' listed twice in " + path.string());
        }
        max_fold = std::max(max_fold, f);
    }
    folds.k = max_fold + 1;
    return folds;
}

}  // namespace damageseg
