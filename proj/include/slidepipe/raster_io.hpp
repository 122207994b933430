#pragma once

#include <filesystem>
#include <memory>

#include "slidepipe/raster_reader.hpp"
#include "slidepipe/scoremap.hpp"
#include "slidepipe/sinks.hpp"

namespace slidepipe {

// Opens a PNG or TIFF raster for windowed reads. Striped/tiled TIFFs decode
// only the regions a window needs; PNG falls back to a full decode at open
// (a warning is printed for large files). Throws UnsupportedFormat /
// CorruptFile.
std::unique_ptr<RasterReader> open_raster(const std::filesystem::path& path);

// Streaming PNG mask writer: single-channel 8-bit, class indices stored
// verbatim. Rows must arrive in increasing order without gaps; finish()
// completes the file. A partial file is removed when the sink is destroyed
// unfinished.
class PngMaskSink final : public MaskRowSink {
public:
    PngMaskSink(const std::filesystem::path& path, RasterExtent extent);
    ~PngMaskSink() override;

    void accept_rows(std::int64_t row_start, const LabelMask& rows) override;
    void finish() override;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

// Whole-mask convenience wrappers over the streaming sink.
void write_mask(const std::filesystem::path& path, const LabelMask& mask);
LabelMask load_mask(const std::filesystem::path& path);

// 8-bit RGB (or gray) PNG image output.
void write_image(const std::filesystem::path& path, const PixelBlock& image);

// Raw per-class score shard: "WSSH" header, little-endian planes, CRC32
// trailer.
void write_score_shard(const std::filesystem::path& path, const ScoreMap& scores);
ScoreMap read_score_shard(const std::filesystem::path& path);

// Draws prediction (and optionally truth) boundaries over an RGB image.
// fill_alpha in [0, 1] additionally blends the fill color over foreground.
PixelBlock render_overlay(const PixelBlock& image, const LabelMask& mask,
                          const LabelMask* truth = nullptr, double fill_alpha = 0.0);

}  // namespace slidepipe
