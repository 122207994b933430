#include "slidepipe/raster_io.hpp"

#include <fstream>

#include "slidepipe/errors.hpp"
#include "slidepipe/internal/png_io.hpp"
#include "slidepipe/internal/tiff_io.hpp"

namespace slidepipe {

namespace {

enum class Format { Png, Tiff, Unknown };

Format sniff(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "'");
    unsigned char magic[4] = {0, 0, 0, 0};
    in.read(reinterpret_cast<char*>(magic), 4);
    if (magic[0] == 0x89 && magic[1] == 'P' && magic[2] == 'N' && magic[3] == 'G') {
        return Format::Png;
    }
    if ((magic[0] == 'I' && magic[1] == 'I' && magic[2] == 42 && magic[3] == 0) ||
        (magic[0] == 'M' && magic[1] == 'M' && magic[2] == 0 && magic[3] == 42)) {
        return Format::Tiff;
    }
    return Format::Unknown;
}

}  // namespace

std::unique_ptr<RasterReader> open_raster(const std::filesystem::path& path) {
    switch (sniff(path)) {
        case Format::Png:
            return std::make_unique<MemoryRasterReader>(read_png(path));
        case Format::Tiff:
            return open_tiff(path);
        case Format::Unknown:
            break;
    }
    throw UnsupportedFormat("'" + path.string() + "' is neither PNG nor TIFF");
}

}  // namespace slidepipe
