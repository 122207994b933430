#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <vector>

#include "slidepipe/geometry.hpp"
#include "slidepipe/scoremap.hpp"

namespace slidepipe {

// Interleaved 8-bit pixel block (1 = gray, 3 = RGB).
struct PixelBlock {
    std::int64_t width = 0;
    std::int64_t height = 0;
    int channels = 0;
    std::vector<std::uint8_t> pixels;

    PixelBlock() = default;
    PixelBlock(std::int64_t w, std::int64_t h, int c)
        : width(w), height(h), channels(c),
          pixels(static_cast<std::size_t>(w) * static_cast<std::size_t>(h) *
                 static_cast<std::size_t>(c)) {}

    std::uint8_t& at(std::int64_t y, std::int64_t x, int c) {
        return pixels[(static_cast<std::size_t>(y) * static_cast<std::size_t>(width) +
                       static_cast<std::size_t>(x)) *
                          static_cast<std::size_t>(channels) +
                      static_cast<std::size_t>(c)];
    }
    std::uint8_t at(std::int64_t y, std::int64_t x, int c) const {
        return pixels[(static_cast<std::size_t>(y) * static_cast<std::size_t>(width) +
                       static_cast<std::size_t>(x)) *
                          static_cast<std::size_t>(channels) +
                      static_cast<std::size_t>(c)];
    }
    bool operator==(const PixelBlock&) const = default;
};

// Windowed access to a large raster. Windows that spill over the raster
// boundary are mirror-padded as long as they intersect the extent; a window
// fully outside is an error. Implementations must allow concurrent
// read_window calls.
class RasterReader {
public:
    virtual ~RasterReader() = default;

    virtual RasterExtent extent() const = 0;
    virtual int channels() const = 0;

    // Mirror-padded window read; see class comment.
    PixelBlock read_window(std::int64_t x, std::int64_t y, std::int64_t w, std::int64_t h) const;

protected:
    // Window guaranteed to lie fully inside the extent.
    virtual PixelBlock read_inside(std::int64_t x, std::int64_t y, std::int64_t w,
                                   std::int64_t h) const = 0;
};

// Reader over an in-memory pixel block.
class MemoryRasterReader final : public RasterReader {
public:
    explicit MemoryRasterReader(PixelBlock image) : image_(std::move(image)) {}

    RasterExtent extent() const override { return {image_.width, image_.height}; }
    int channels() const override { return image_.channels; }
    const PixelBlock& image() const { return image_; }

protected:
    PixelBlock read_inside(std::int64_t x, std::int64_t y, std::int64_t w,
                           std::int64_t h) const override;

private:
    PixelBlock image_;
};

// Reader over an in-memory label mask rendered as single-channel gray.
class MaskRasterReader final : public RasterReader {
public:
    explicit MaskRasterReader(const LabelMask& mask) : mask_(&mask) {}

    RasterExtent extent() const override { return {mask_->width, mask_->height}; }
    int channels() const override { return 1; }

protected:
    PixelBlock read_inside(std::int64_t x, std::int64_t y, std::int64_t w,
                           std::int64_t h) const override;

private:
    const LabelMask* mask_;
};

// Symmetric (half-sample) reflection of an out-of-range index into [0, n).
std::int64_t mirror_index(std::int64_t i, std::int64_t n);

}  // namespace slidepipe
