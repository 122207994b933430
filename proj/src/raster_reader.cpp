#include "slidepipe/raster_reader.hpp"

#include <algorithm>
#include <string>

#include "slidepipe/errors.hpp"

namespace slidepipe {

std::int64_t mirror_index(std::int64_t i, std::int64_t n) {
    // Symmetric reflection: -1 -> 0, -2 -> 1, n -> n-1, n+1 -> n-2, ...
    while (i < 0 || i >= n) {
        if (i < 0) i = -i - 1;
        if (i >= n) i = 2 * n - i - 1;
    }
    return i;
}

PixelBlock RasterReader::read_window(std::int64_t x, std::int64_t y, std::int64_t w,
                                     std::int64_t h) const {
    if (w < 1 || h < 1) throw ConfigError("read_window: window must be at least 1x1");
    const RasterExtent ext = extent();
    if (x + w <= 0 || y + h <= 0 || x >= ext.width || y >= ext.height) {
        throw OutOfExtent("read_window: window [" + std::to_string(x) + "," + std::to_string(y) +
                          " " + std::to_string(w) + "x" + std::to_string(h) +
                          "] does not intersect the raster");
    }

    if (x >= 0 && y >= 0 && x + w <= ext.width && y + h <= ext.height) {
        return read_inside(x, y, w, h);
    }

    // Mirrored indices always land inside the raster; read the bounding box
    // of everything the padded window needs, then assemble.
    std::vector<std::int64_t> col_src(static_cast<std::size_t>(w));
    std::vector<std::int64_t> row_src(static_cast<std::size_t>(h));
    std::int64_t x0 = ext.width, x1 = -1, y0 = ext.height, y1 = -1;
    for (std::int64_t j = 0; j < w; ++j) {
        const std::int64_t s = mirror_index(x + j, ext.width);
        col_src[static_cast<std::size_t>(j)] = s;
        x0 = std::min(x0, s);
        x1 = std::max(x1, s);
    }
    for (std::int64_t i = 0; i < h; ++i) {
        const std::int64_t s = mirror_index(y + i, ext.height);
        row_src[static_cast<std::size_t>(i)] = s;
        y0 = std::min(y0, s);
        y1 = std::max(y1, s);
    }

    const PixelBlock src = read_inside(x0, y0, x1 - x0 + 1, y1 - y0 + 1);
    PixelBlock out(w, h, src.channels);
    const int nc = src.channels;
    for (std::int64_t i = 0; i < h; ++i) {
        const std::int64_t sy = row_src[static_cast<std::size_t>(i)] - y0;
        for (std::int64_t j = 0; j < w; ++j) {
            const std::int64_t sx = col_src[static_cast<std::size_t>(j)] - x0;
            for (int c = 0; c < nc; ++c) {
                out.at(i, j, c) = src.at(sy, sx, c);
            }
        }
    }
    return out;
}

PixelBlock MemoryRasterReader::read_inside(std::int64_t x, std::int64_t y, std::int64_t w,
                                           std::int64_t h) const {
    PixelBlock out(w, h, image_.channels);
    const std::size_t row_bytes = static_cast<std::size_t>(w) * static_cast<std::size_t>(image_.channels);
    for (std::int64_t i = 0; i < h; ++i) {
        const std::uint8_t* src = &image_.pixels[((static_cast<std::size_t>(y + i)) *
                                                      static_cast<std::size_t>(image_.width) +
                                                  static_cast<std::size_t>(x)) *
                                                 static_cast<std::size_t>(image_.channels)];
        std::copy(src, src + row_bytes,
                  &out.pixels[static_cast<std::size_t>(i) * row_bytes]);
    }
    return out;
}

PixelBlock MaskRasterReader::read_inside(std::int64_t x, std::int64_t y, std::int64_t w,
                                         std::int64_t h) const {
    PixelBlock out(w, h, 1);
    for (std::int64_t i = 0; i < h; ++i) {
        for (std::int64_t j = 0; j < w; ++j) {
            out.at(i, j, 0) = mask_->at(y + i, x + j);
        }
    }
    return out;
}

}  // namespace slidepipe
