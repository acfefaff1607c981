#pragma once

#include "damageseg/raster.hpp"

#include <cstdint>

namespace damageseg {

/// Reflect-101 border index (gfedcb|abcdefgh|gfedcba).
int reflect101(int i, int n);

/// Similarity transform about the image centre: rotate by `rotation_deg`,
/// scale by `scale`, then translate by (dx, dy) pixels.
struct AffineJitter {
    double rotation_deg = 0.0;
    double scale = 1.0;
    double dx = 0.0;
    double dy = 0.0;

    bool is_identity() const { return rotation_deg == 0.0 && scale == 1.0 && dx == 0.0 && dy == 0.0; }
};

/// Warps an image with bilinear sampling and reflect-101 borders.
Image warp_affine(const Image& src, const AffineJitter& t);

/// Bilinear resize of the source window [x0, x0+w) x [y0, y0+h) to out_w x out_h.
Image resize_window_bilinear(const Image& src, double x0, double y0, double w, double h, int out_w,
                             int out_h);
/// Nearest-neighbour counterpart for class masks.
Mask resize_window_nearest(const Mask& src, double x0, double y0, double w, double h, int out_w,
                           int out_h);

inline std::uint8_t saturate_u8(double v) {
    if (!(v > 0.0)) return 0;
    if (v >= 255.0) return 255;
    return static_cast<std::uint8_t>(v + 0.5);
}

}  // namespace damageseg
