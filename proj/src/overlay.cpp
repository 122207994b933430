#include <array>

#include "slidepipe/errors.hpp"
#include "slidepipe/raster_io.hpp"

namespace slidepipe {

namespace {

constexpr std::array<std::uint8_t, 3> kPredColor = {255, 196, 0};   // amber
constexpr std::array<std::uint8_t, 3> kTruthColor = {0, 168, 255};  // azure

bool is_boundary(const LabelMask& mask, std::int64_t y, std::int64_t x) {
    if (mask.at(y, x) == 0) return false;
    if (y == 0 || y == mask.height - 1 || x == 0 || x == mask.width - 1) return true;
    return mask.at(y - 1, x) == 0 || mask.at(y + 1, x) == 0 || mask.at(y, x - 1) == 0 ||
           mask.at(y, x + 1) == 0;
}

}  // namespace

PixelBlock render_overlay(const PixelBlock& image, const LabelMask& mask, const LabelMask* truth,
                          double fill_alpha) {
    if (image.width != mask.width || image.height != mask.height) {
        throw ShapeMismatch("render_overlay: image and mask extents differ");
    }
    if (truth != nullptr && !truth->same_shape(mask)) {
        throw ShapeMismatch("render_overlay: truth and mask extents differ");
    }
    if (fill_alpha < 0.0 || fill_alpha > 1.0) {
        throw ConfigError("render_overlay: fill_alpha must be in [0, 1]");
    }

    PixelBlock out(image.width, image.height, 3);
    for (std::int64_t y = 0; y < image.height; ++y) {
        for (std::int64_t x = 0; x < image.width; ++x) {
            std::array<std::uint8_t, 3> px;
            for (int c = 0; c < 3; ++c) {
                px[static_cast<std::size_t>(c)] =
                    image.channels == 1 ? image.at(y, x, 0) : image.at(y, x, c);
            }
            if (fill_alpha > 0.0 && mask.at(y, x) != 0) {
                for (int c = 0; c < 3; ++c) {
                    const double blended =
                        (1.0 - fill_alpha) * px[static_cast<std::size_t>(c)] +
                        fill_alpha * kPredColor[static_cast<std::size_t>(c)];
                    px[static_cast<std::size_t>(c)] = static_cast<std::uint8_t>(blended + 0.5);
                }
            }
            if (truth != nullptr && is_boundary(*truth, y, x)) px = kTruthColor;
            if (is_boundary(mask, y, x)) px = kPredColor;
            for (int c = 0; c < 3; ++c) {
                out.at(y, x, c) = px[static_cast<std::size_t>(c)];
            }
        }
    }
    return out;
}

}  // namespace slidepipe
