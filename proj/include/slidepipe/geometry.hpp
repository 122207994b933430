#pragma once

#include <cstdint>
#include <vector>

namespace slidepipe {

struct RasterExtent {
    std::int64_t width = 0;
    std::int64_t height = 0;

    bool operator==(const RasterExtent&) const = default;
    std::int64_t area() const { return width * height; }
};

// One square window. (x, y) is the top-left pixel, size the side length.
struct TileSpec {
    std::int64_t x = 0;
    std::int64_t y = 0;
    std::int64_t size = 0;

    bool operator==(const TileSpec&) const = default;
    bool contains(std::int64_t px, std::int64_t py) const {
        return px >= x && px < x + size && py >= y && py < y + size;
    }
};

// Row-major (by y, then x) set of tiles covering an extent.
struct TileGrid {
    RasterExtent extent;
    std::int64_t tile_size = 0;
    std::int64_t stride = 0;
    std::vector<TileSpec> tiles;
};

// Sliding-window origins along one axis: {0, stride, 2*stride, ...} with the
// final origin clamped to max(0, dim - tile_size) so the last tile abuts the
// edge. Duplicates introduced by clamping are dropped. A dimension smaller
// than the tile yields the single origin 0 (the I/O layer mirror-pads).
std::vector<std::int64_t> axis_origins(std::int64_t dim, std::int64_t tile_size, std::int64_t stride);

// Full grid over extent, row-major by (y, x). Rejects zero sizes and
// stride > tile_size.
TileGrid make_grid(const RasterExtent& extent, std::int64_t tile_size, std::int64_t stride);

}  // namespace slidepipe
