#include <png.h>

#include <cstdio>
#include <iostream>
#include <vector>

#include "slidepipe/errors.hpp"
#include "slidepipe/internal/png_io.hpp"
#include "slidepipe/raster_io.hpp"

namespace slidepipe {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f != nullptr) std::fclose(f);
    }
};
using FileHandle = std::unique_ptr<std::FILE, FileCloser>;

FileHandle open_file(const std::filesystem::path& path, const char* mode) {
    FileHandle f(std::fopen(path.string().c_str(), mode));
    if (!f) throw IoError("cannot open '" + path.string() + "'");
    return f;
}

[[noreturn]] void png_error_fn(png_structp, png_const_charp msg) {
    throw CorruptFile(std::string("png: ") + msg);
}

void png_warn_fn(png_structp, png_const_charp) {}

constexpr std::int64_t kFullDecodeWarnPixels = 64ll * 1024 * 1024;

}  // namespace

PixelBlock read_png(const std::filesystem::path& path) {
    FileHandle f = open_file(path, "rb");

    png_structp png =
        png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_fn, png_warn_fn);
    if (png == nullptr) throw IoError("png: allocation failed");
    png_infop info = png_create_info_struct(png);
    if (info == nullptr) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw IoError("png: allocation failed");
    }

    try {
        png_init_io(png, f.get());
        png_read_info(png, info);

        const png_uint_32 width = png_get_image_width(png, info);
        const png_uint_32 height = png_get_image_height(png, info);
        const int bit_depth = png_get_bit_depth(png, info);
        const int color_type = png_get_color_type(png, info);

        // Normalize everything to 8-bit gray or RGB.
        if (bit_depth == 16) png_set_strip_16(png);
        if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
        if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
        if (png_get_valid(png, info, PNG_INFO_tRNS) != 0) png_set_tRNS_to_alpha(png);
        if ((color_type & PNG_COLOR_MASK_ALPHA) != 0 ||
            png_get_valid(png, info, PNG_INFO_tRNS) != 0) {
            png_set_strip_alpha(png);
        }
        png_read_update_info(png, info);

        const int channels = png_get_channels(png, info);
        if (channels != 1 && channels != 3) {
            throw UnsupportedFormat("png: '" + path.string() + "' decodes to " +
                                    std::to_string(channels) + " channels");
        }

        if (static_cast<std::int64_t>(width) * static_cast<std::int64_t>(height) >
            kFullDecodeWarnPixels) {
            std::cerr << "warning: PNG '" << path.string()
                      << "' requires a full decode; consider striped/tiled TIFF for large slides\n";
        }

        PixelBlock out(static_cast<std::int64_t>(width), static_cast<std::int64_t>(height),
                       channels);
        const std::size_t row_bytes =
            static_cast<std::size_t>(width) * static_cast<std::size_t>(channels);
        if (png_get_rowbytes(png, info) != row_bytes) {
            throw CorruptFile("png: unexpected row size in '" + path.string() + "'");
        }
        std::vector<png_bytep> rows(height);
        for (png_uint_32 r = 0; r < height; ++r) {
            rows[r] = out.pixels.data() + static_cast<std::size_t>(r) * row_bytes;
        }
        png_read_image(png, rows.data());
        png_read_end(png, nullptr);
        png_destroy_read_struct(&png, &info, nullptr);
        return out;
    } catch (...) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw;
    }
}

struct PngMaskSink::Impl {
    std::filesystem::path path;
    RasterExtent extent;
    FileHandle file;
    png_structp png = nullptr;
    png_infop info = nullptr;
    std::int64_t next_row = 0;
    bool finished = false;

    ~Impl() {
        if (png != nullptr) png_destroy_write_struct(&png, &info);
        if (!finished) {
            file.reset();
            std::error_code ec;
            std::filesystem::remove(path, ec);
        }
    }
};

PngMaskSink::PngMaskSink(const std::filesystem::path& path, RasterExtent extent)
    : impl_(std::make_unique<Impl>()) {
    if (extent.width < 1 || extent.height < 1) {
        throw ConfigError("PngMaskSink: extent must be at least 1x1");
    }
    impl_->path = path;
    impl_->extent = extent;
    impl_->file = open_file(path, "wb");

    impl_->png =
        png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_fn, png_warn_fn);
    if (impl_->png == nullptr) throw IoError("png: allocation failed");
    impl_->info = png_create_info_struct(impl_->png);
    if (impl_->info == nullptr) throw IoError("png: allocation failed");

    png_init_io(impl_->png, impl_->file.get());
    png_set_IHDR(impl_->png, impl_->info, static_cast<png_uint_32>(extent.width),
                 static_cast<png_uint_32>(extent.height), 8, PNG_COLOR_TYPE_GRAY,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(impl_->png, impl_->info);
}

PngMaskSink::~PngMaskSink() = default;

void PngMaskSink::accept_rows(std::int64_t row_start, const LabelMask& rows) {
    if (impl_->finished) throw IoError("PngMaskSink: rows after finish");
    if (row_start != impl_->next_row) {
        throw IoError("PngMaskSink: rows out of order (expected " +
                      std::to_string(impl_->next_row) + ", got " + std::to_string(row_start) +
                      ")");
    }
    if (rows.width != impl_->extent.width) {
        throw ShapeMismatch("PngMaskSink: row width " + std::to_string(rows.width) +
                            " does not match extent width " + std::to_string(impl_->extent.width));
    }
    if (row_start + rows.height > impl_->extent.height) {
        throw IoError("PngMaskSink: rows exceed the extent");
    }
    for (std::int64_t r = 0; r < rows.height; ++r) {
        png_write_row(impl_->png, const_cast<png_bytep>(rows.labels.data() +
                                                        static_cast<std::size_t>(r) *
                                                            static_cast<std::size_t>(rows.width)));
    }
    impl_->next_row += rows.height;
}

void PngMaskSink::finish() {
    if (impl_->finished) return;
    if (impl_->next_row != impl_->extent.height) {
        throw IoError("PngMaskSink: finish with " + std::to_string(impl_->next_row) + " of " +
                      std::to_string(impl_->extent.height) + " rows written");
    }
    png_write_end(impl_->png, nullptr);
    png_destroy_write_struct(&impl_->png, &impl_->info);
    impl_->png = nullptr;
    impl_->file.reset();
    impl_->finished = true;
}

void write_mask(const std::filesystem::path& path, const LabelMask& mask) {
    PngMaskSink sink(path, RasterExtent{mask.width, mask.height});
    sink.accept_rows(0, mask);
    sink.finish();
}

LabelMask load_mask(const std::filesystem::path& path) {
    const PixelBlock img = read_png(path);
    if (img.channels != 1) {
        throw UnsupportedFormat("mask '" + path.string() + "' is not single-channel");
    }
    LabelMask mask(img.height, img.width);
    std::copy(img.pixels.begin(), img.pixels.end(), mask.labels.begin());
    return mask;
}

void write_image(const std::filesystem::path& path, const PixelBlock& image) {
    if (image.channels != 1 && image.channels != 3) {
        throw UnsupportedFormat("write_image: only gray and RGB supported");
    }
    FileHandle f = open_file(path, "wb");
    png_structp png =
        png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_fn, png_warn_fn);
    if (png == nullptr) throw IoError("png: allocation failed");
    png_infop info = png_create_info_struct(png);
    if (info == nullptr) {
        png_destroy_write_struct(&png, nullptr);
        throw IoError("png: allocation failed");
    }
    try {
        png_init_io(png, f.get());
        png_set_IHDR(png, info, static_cast<png_uint_32>(image.width),
                     static_cast<png_uint_32>(image.height), 8,
                     image.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
                     PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
        png_write_info(png, info);
        const std::size_t row_bytes =
            static_cast<std::size_t>(image.width) * static_cast<std::size_t>(image.channels);
        for (std::int64_t r = 0; r < image.height; ++r) {
            png_write_row(png, const_cast<png_bytep>(image.pixels.data() +
                                                     static_cast<std::size_t>(r) * row_bytes));
        }
        png_write_end(png, nullptr);
        png_destroy_write_struct(&png, &info);
    } catch (...) {
        png_destroy_write_struct(&png, &info);
        throw;
    }
}

}  // namespace slidepipe
