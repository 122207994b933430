#pragma once

#include <filesystem>

#include "slidepipe/raster_reader.hpp"

namespace slidepipe {

// Full decode of a PNG into 8-bit gray or RGB.
PixelBlock read_png(const std::filesystem::path& path);

}  // namespace slidepipe
