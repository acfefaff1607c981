#include "damageseg/imaging.hpp"

#include <cmath>
#include <numbers>

namespace damageseg {

int reflect101(int i, int n) {
    if (n == 1) return 0;
    const int period = 2 * n - 2;
    i = std::abs(i) % period;
    return i < n ? i : period - i;
}

namespace {

void sample_bilinear(const Image& src, double u, double v, std::uint8_t* out) {
    const double fx0 = std::floor(u);
    const double fy0 = std::floor(v);
    const double ax = u - fx0;
    const double ay = v - fy0;
    const int x0 = static_cast<int>(fx0);
    const int y0 = static_cast<int>(fy0);
    const int xa = reflect101(x0, src.width);
    const int xb = reflect101(x0 + 1, src.width);
    const int ya = reflect101(y0, src.height);
    const int yb = reflect101(y0 + 1, src.height);
    for (int c = 0; c < 3; ++c) {
        const double top = (1.0 - ax) * src.at(xa, ya, c) + ax * src.at(xb, ya, c);
        const double bottom = (1.0 - ax) * src.at(xa, yb, c) + ax * src.at(xb, yb, c);
        out[c] = saturate_u8((1.0 - ay) * top + ay * bottom);
    }
}

}  // namespace

Image warp_affine(const Image& src, const AffineJitter& t) {
    if (t.is_identity()) return src;
    Image dst(src.width, src.height);
    const double cx = src.width / 2.0;
    const double cy = src.height / 2.0;
    const double theta = t.rotation_deg * std::numbers::pi / 180.0;
    const double cs = std::cos(theta) / t.scale;
    const double sn = std::sin(theta) / t.scale;
    for (int y = 0; y < dst.height; ++y) {
        for (int x = 0; x < dst.width; ++x) {
            // Inverse map of the output pixel centre.
            const double qx = x + 0.5 - cx - t.dx;
            const double qy = y + 0.5 - cy - t.dy;
            const double px = cx + cs * qx + sn * qy;
            const double py = cy - sn * qx + cs * qy;
            sample_bilinear(src, px - 0.5, py - 0.5, &dst.at(x, y, 0));
        }
    }
    return dst;
}

Image resize_window_bilinear(const Image& src, double x0, double y0, double w, double h, int out_w,
                             int out_h) {
    Image dst(out_w, out_h);
    const double sx = w / out_w;
    const double sy = h / out_h;
    for (int y = 0; y < out_h; ++y) {
        const double v = y0 + (y + 0.5) * sy - 0.5;
        for (int x = 0; x < out_w; ++x) {
            const double u = x0 + (x + 0.5) * sx - 0.5;
            sample_bilinear(src, u, v, &dst.at(x, y, 0));
        }
    }
    return dst;
}

Mask resize_window_nearest(const Mask& src, double x0, double y0, double w, double h, int out_w,
                           int out_h) {
    Mask dst(out_w, out_h);
    const double sx = w / out_w;
    const double sy = h / out_h;
    for (int y = 0; y < out_h; ++y) {
        const int sy_i = reflect101(static_cast<int>(std::floor(y0 + (y + 0.5) * sy)), src.height);
        for (int x = 0; x < out_w; ++x) {
            const int sx_i =
                reflect101(static_cast<int>(std::floor(x0 + (x + 0.5) * sx)), src.width);
            dst.at(x, y) = src.at(sx_i, sy_i);
        }
    }
    return dst;
}

}  // namespace damageseg
