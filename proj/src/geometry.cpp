#include "slidepipe/geometry.hpp"

#include <string>

#include "slidepipe/errors.hpp"

namespace slidepipe {

std::vector<std::int64_t> axis_origins(std::int64_t dim, std::int64_t tile_size, std::int64_t stride) {
    std::vector<std::int64_t> origins;
    if (dim <= tile_size) {
        origins.push_back(0);
        return origins;
    }
    const std::int64_t last = dim - tile_size;
    for (std::int64_t o = 0; o < last; o += stride) origins.push_back(o);
    origins.push_back(last);
    return origins;
}

TileGrid make_grid(const RasterExtent& extent, std::int64_t tile_size, std::int64_t stride) {
    if (extent.width < 1 || extent.height < 1) {
        throw ConfigError("make_grid: extent must be at least 1x1, got " +
                          std::to_string(extent.width) + "x" + std::to_string(extent.height));
    }
    if (tile_size < 1) throw ConfigError("make_grid: tile_size must be >= 1");
    if (stride < 1) throw ConfigError("make_grid: stride must be >= 1");
    if (stride > tile_size) {
        throw ConfigError("make_grid: stride " + std::to_string(stride) +
                          " exceeds tile_size " + std::to_string(tile_size));
    }

    TileGrid grid;
    grid.extent = extent;
    grid.tile_size = tile_size;
    grid.stride = stride;

    const auto xs = axis_origins(extent.width, tile_size, stride);
    const auto ys = axis_origins(extent.height, tile_size, stride);
    grid.tiles.reserve(xs.size() * ys.size());
    for (std::int64_t y : ys) {
        for (std::int64_t x : xs) {
            grid.tiles.push_back(TileSpec{x, y, tile_size});
        }
    }
    return grid;
}

}  // namespace slidepipe
