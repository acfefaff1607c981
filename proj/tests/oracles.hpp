#pragma once

// Independent reference implementations used by the unit and acceptance tests.
// They favour obviousness over speed and share no code with the library.

#include "damageseg/dataset.hpp"
#include "damageseg/raster.hpp"

#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace oracle {

using damageseg::BuildingAnnotation;
using damageseg::Image;
using damageseg::Mask;
using damageseg::Point;

/// Even-odd crossing test on a pixel centre (Franklin's PNPOLY).
inline bool point_in_polygon(const std::vector<Point>& poly, double x, double y) {
    bool inside = false;
    for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
        const Point& pi = poly[i];
        const Point& pj = poly[j];
        if ((pi.y > y) != (pj.y > y)) {
            const double xint = (pj.x - pi.x) * (y - pi.y) / (pj.y - pi.y) + pi.x;
            if (x < xint) inside = !inside;
        }
    }
    return inside;
}

inline Mask rasterize(const std::vector<BuildingAnnotation>& buildings, int w, int h) {
    Mask m(w, h, 0);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            int best = 0;
            for (const auto& b : buildings) {
                if (point_in_polygon(b.polygon, x + 0.5, y + 0.5)) best = std::max(best, static_cast<int>(b.damage));
            }
            m.at(x, y) = static_cast<std::uint8_t>(best);
        }
    }
    return m;
}

/// tally[t][p] by direct pixel walk.
inline std::array<std::array<std::int64_t, 5>, 5> tally(const Mask& pred, const Mask& truth) {
    std::array<std::array<std::int64_t, 5>, 5> m{};
    for (int y = 0; y < truth.height; ++y) {
        for (int x = 0; x < truth.width; ++x) ++m[truth.at(x, y)][pred.at(x, y)];
    }
    return m;
}

inline double f1_from(double tp, double fp, double fn) {
    if (tp + fp + fn == 0) return 1.0;
    return 2.0 * tp / (2.0 * tp + fp + fn);
}

/// Binary building F1 computed straight from a list of mask pairs.
inline double f1_loc(const std::vector<std::pair<const Mask*, const Mask*>>& scenes) {
    double tp = 0, fp = 0, fn = 0;
    for (const auto& [pred, truth] : scenes) {
        for (std::size_t i = 0; i < truth->labels.size(); ++i) {
            const bool t = truth->labels[i] > 0;
            const bool p = pred->labels[i] > 0;
            tp += t && p;
            fp += !t && p;
            fn += t && !p;
        }
    }
    return f1_from(tp, fp, fn);
}

/// One-vs-rest F1 for damage class c over all pixels.
inline double f1_class(const std::vector<std::pair<const Mask*, const Mask*>>& scenes, int c) {
    double tp = 0, fp = 0, fn = 0;
    for (const auto& [pred, truth] : scenes) {
        for (std::size_t i = 0; i < truth->labels.size(); ++i) {
            const bool t = truth->labels[i] == c;
            const bool p = pred->labels[i] == c;
            tp += t && p;
            fp += !t && p;
            fn += t && !p;
        }
    }
    return f1_from(tp, fp, fn);
}

inline double harmonic(const std::array<double, 4>& f) {
    double denom = 0.0;
    for (double v : f) denom += 1.0 / (v + 1e-6);
    return std::min(1.0, 4.0 / denom);
}

/// Per-pixel softmax, log and weighting in plain loops; logits[c][y][x].
inline double weighted_ce(const std::vector<double>& logits, int h, int w, const Mask& target,
                          const std::array<double, 5>& weights) {
    double num = 0.0, den = 0.0;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double mx = -1e300;
            for (int c = 0; c < 5; ++c) mx = std::max(mx, logits[(c * h + y) * w + x]);
            double z = 0.0;
            for (int c = 0; c < 5; ++c) z += std::exp(logits[(c * h + y) * w + x] - mx);
            const int t = target.at(x, y);
            const double logp = logits[(t * h + y) * w + x] - mx - std::log(z);
            num += weights[t] * -logp;
            den += weights[t];
        }
    }
    return num / den;
}

/// Image shifted right by dx pixels with reflect-101 border fill.
inline Image translate_x(const Image& src, int dx) {
    Image out(src.width, src.height);
    for (int y = 0; y < src.height; ++y) {
        for (int x = 0; x < src.width; ++x) {
            int sx = x - dx;
            const int n = src.width;
            while (sx < 0 || sx >= n) sx = sx < 0 ? -sx : 2 * (n - 1) - sx;
            for (int c = 0; c < 3; ++c) out.at(x, y, c) = src.at(sx, y, c);
        }
    }
    return out;
}

inline Mask random_mask(std::mt19937_64& rng, int w, int h) {
    Mask m(w, h);
    std::uniform_int_distribution<int> d(0, 4);
    for (auto& v : m.labels) v = static_cast<std::uint8_t>(d(rng));
    return m;
}

inline Image random_image(std::mt19937_64& rng, int w, int h) {
    Image im(w, h);
    std::uniform_int_distribution<int> d(0, 255);
    for (auto& v : im.pixels) v = static_cast<std::uint8_t>(d(rng));
    return im;
}

}  // namespace oracle
