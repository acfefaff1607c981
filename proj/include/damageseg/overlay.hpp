#pragma once

#include "damageseg/raster.hpp"

#include <array>
#include <cstdint>
#include <filesystem>

namespace damageseg {

using Rgb = std::array<std::uint8_t, 3>;

/// Class colours; class 0 is never painted.
inline constexpr std::array<Rgb, 5> kClassPalette{{
    {0, 0, 0},
    {0, 0, 255},
    {255, 255, 0},
    {255, 128, 0},
    {255, 0, 0},
}};

inline constexpr double kOverlayAlpha = 0.5;

/// Colour of a pre-image pixel painted with class `label` (label > 0).
Rgb blend_class_colour(const Rgb& base, int label);

/// Three panels side by side: pre | post | pre with the mask painted on top.
Image compose_overlay(const Image& pre, const Image& post, const Mask& mask);

/// compose_overlay written as PNG. Throws IoError when the file cannot be written.
Image render_overlay(const Image& pre, const Image& post, const Mask& mask, const std::filesystem::path& out_path);

}  // namespace damageseg
