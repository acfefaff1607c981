#pragma once

#include "damageseg/raster.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace damageseg {

/// Pixel class. Polygons carry 1..4; 0 marks background.
enum class DamageClass : std::uint8_t {
    kNoBuilding = 0,
    kNoDamage = 1,
    kMinor = 2,
    kMajor = 3,
    kDestroyed = 4,
};

inline constexpr int kNumClasses = 5;
inline constexpr int kNumDamageClasses = 4;

const char* damage_class_name(DamageClass c);

/// Throws ValidationError unless 0 <= value <= 4.
DamageClass to_damage_class(int value);

struct Point {
    double x = 0.0;
    double y = 0.0;
    bool operator==(const Point&) const = default;
};

struct BuildingAnnotation {
    std::vector<Point> polygon;
    DamageClass damage = DamageClass::kNoDamage;
};

/// Vertex coordinates may lie this many pixels outside the image bounds.
inline constexpr double kPolygonMargin = 32.0;

/// Enforces the annotation invariants: at least three vertices, a simple
/// polygon, damage in 1..4 and vertices within the image margin.
void validate_annotation(const BuildingAnnotation& a, int width, int height);

bool polygon_is_simple(const std::vector<Point>& polygon);
double polygon_area(const std::vector<Point>& polygon);

/// A raster is either a file on disk or already held in memory.
using ImageSource = std::variant<std::filesystem::path, std::shared_ptr<const Image>>;

struct SceneRecord {
    std::string scene_id;
    std::string disaster_id;
    ImageSource pre_image;
    ImageSource post_image;
    std::vector<BuildingAnnotation> annotations;
    int width = 0;
    int height = 0;
};

/// Building counts for damage classes 1..4 (index 0 holds class 1).
struct DamageHistogram {
    std::array<std::int64_t, 4> counts{};

    std::int64_t total() const;
    DamageHistogram& operator+=(const DamageHistogram& o);
    bool operator==(const DamageHistogram&) const = default;
};

struct FoldAssignment {
    std::map<std::string, int> fold_of;
    int k = 0;
    std::uint64_t seed = 0;

    std::vector<std::string> scenes_in(int fold) const;
    bool operator==(const FoldAssignment&) const = default;
};

/// Parses a JSON manifest (see README) and validates every scene. Relative
/// image paths resolve against the manifest's directory.
std::vector<SceneRecord> ingest_manifest(const std::filesystem::path& manifest_path);

/// Writes records whose images are file paths; in-memory images are rejected.
void write_manifest(const std::filesystem::path& manifest_path,
                    const std::vector<SceneRecord>& records);

/// Burns polygons into a width x height class mask. A pixel takes a polygon's
/// damage when its centre lies inside it (top-left rule on edges); overlaps
/// keep the maximum damage. Zero-area polygons are skipped with a warning.
Mask rasterize_annotations(const std::vector<BuildingAnnotation>& annotations, int width,
                           int height);

/// Loads both images and rasterizes the annotations.
RasterPair load_raster_pair(const SceneRecord& record);

DamageHistogram damage_histogram(const SceneRecord& record);

/// Iterative multi-label stratification over per-scene damage histograms.
FoldAssignment split_folds(const std::vector<SceneRecord>& records, int k, std::uint64_t seed);

void write_folds_csv(const std::filesystem::path& path, const FoldAssignment& folds);
FoldAssignment read_folds_csv(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Synthetic scenes

/// Settings for the synthetic scene generator. Defaults are tuned so a tiny
/// model can separate the damage signatures within minutes on a CPU.
struct SyntheticConfig {
    int width = 128;
    int height = 128;
    int min_buildings = 4;
    int max_buildings = 8;
    /// Mixture over damage classes 1..4, used when exact counts are absent.
    std::array<double, 4> damage_mixture{0.4, 0.2, 0.2, 0.2};
    /// Exact number of buildings per damage class 1..4; overrides the mixture.
    std::optional<std::array<int, 4>> damage_counts;
    int min_size = 12;
    int max_size = 24;
    double max_orientation_deg = 20.0;
    int min_gap = 3;
    // Misregistration of the post image.
    double jitter_shift_px = 1.0;
    double jitter_rotation_deg = 0.5;
    // Photometric drift of the post image.
    double brightness_drift = 8.0;
    double contrast_drift = 0.05;
    // Post-image roof intensity multipliers for classes 1..3; class 4 becomes rubble.
    std::array<double, 3> roof_darkening{1.0, 0.72, 0.45};
    std::array<double, 3> roof_speckle{0.0, 10.0, 40.0};
    std::string disaster_id = "synthetic";
};

struct SyntheticScene {
    SceneRecord record;
    RasterPair pair;
};

SyntheticScene generate_synthetic_scene(std::uint64_t seed, const SyntheticConfig& config);

}  // namespace damageseg
