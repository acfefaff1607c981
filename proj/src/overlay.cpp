#include "damageseg/overlay.hpp"

#include "damageseg/error.hpp"
#include "damageseg/imaging.hpp"

namespace damageseg {

Rgb blend_class_colour(const Rgb& base, int label) {
    const Rgb& c = kClassPalette.at(static_cast<std::size_t>(label));
    Rgb out{};
    for (int k = 0; k < 3; ++k) {
        out[k] = saturate_u8((1.0 - kOverlayAlpha) * base[k] + kOverlayAlpha * c[k]);
    }
    return out;
}

Image compose_overlay(const Image& pre, const Image& post, const Mask& mask) {
    validate_pair(RasterPair{pre, post, mask});
    const int w = pre.width;
    const int h = pre.height;
    Image panel(3 * w, h);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const int label = mask.at(x, y);
            Rgb base{pre.at(x, y, 0), pre.at(x, y, 1), pre.at(x, y, 2)};
            const Rgb painted = label == 0 ? base : blend_class_colour(base, label);
            for (int k = 0; k < 3; ++k) {
                panel.at(x, y, k) = base[k];
                panel.at(w + x, y, k) = post.at(x, y, k);
                panel.at(2 * w + x, y, k) = painted[k];
            }
        }
    }
    return panel;
}

Image render_overlay(const Image& pre, const Image& post, const Mask& mask, const std::filesystem::path& out_path) {
    Image panel = compose_overlay(pre, post, mask);
    write_png(out_path, panel);
    return panel;
}

}  // namespace damageseg
