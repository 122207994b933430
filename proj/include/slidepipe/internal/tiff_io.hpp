#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>

#include "slidepipe/raster_reader.hpp"

namespace slidepipe {

std::unique_ptr<RasterReader> open_tiff(const std::filesystem::path& path);

// Uncompressed baseline writers, used by the tile extractor and tests.
void write_tiff_striped(const std::filesystem::path& path, const PixelBlock& image,
                        std::uint32_t rows_per_strip);
void write_tiff_tiled(const std::filesystem::path& path, const PixelBlock& image,
                      std::uint32_t tile_w, std::uint32_t tile_h);

}  // namespace slidepipe
