#include "slidepipe/stitcher.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "slidepipe/errors.hpp"
#include "slidepipe/parallel.hpp"

namespace slidepipe {

namespace {

std::string tile_str(const TileSpec& t) {
    return "tile (" + std::to_string(t.x) + "," + std::to_string(t.y) + ") size " +
           std::to_string(t.size);
}

}  // namespace

std::uint64_t band_bytes_bound(int classes, std::int64_t tile_size, std::int64_t stride,
                               std::int64_t width) {
    return static_cast<std::uint64_t>(classes) *
           static_cast<std::uint64_t>(2 * tile_size + stride) * static_cast<std::uint64_t>(width) *
           sizeof(float);
}

StitchAccumulator::StitchAccumulator(RasterExtent extent, int classes, MaskRowSink* mask_sink)
    : StitchAccumulator(extent, classes, mask_sink, Options{}) {}

StitchAccumulator::StitchAccumulator(RasterExtent extent, int classes, MaskRowSink* mask_sink,
                                     Options options)
    : extent_(extent),
      classes_(classes),
      mask_sink_(mask_sink),
      prob_sink_(options.prob_sink),
      sum_sink_(options.sum_sink) {
    if (extent.width < 1 || extent.height < 1) {
        throw ConfigError("StitchAccumulator: extent must be at least 1x1");
    }
    if (classes < 2 || classes > 256) {
        throw ConfigError("StitchAccumulator: classes must be in [2, 256]");
    }
    if (mask_sink == nullptr) throw ConfigError("StitchAccumulator: mask sink required");
    if (options.band_rows_hint > 0) {
        ensure_band_rows(std::min(options.band_rows_hint, extent.height));
    }
}

void StitchAccumulator::ensure_band_rows(std::int64_t rows_needed) {
    if (rows_needed <= band_rows_) return;
    std::int64_t new_rows = std::max(rows_needed, band_rows_ * 2);
    new_rows = std::min(new_rows, extent_.height);

    const std::size_t w = static_cast<std::size_t>(extent_.width);
    std::vector<float> new_band(static_cast<std::size_t>(classes_) *
                                static_cast<std::size_t>(new_rows) * w);
    std::vector<std::uint8_t> new_contrib(static_cast<std::size_t>(new_rows) * w);

    if (band_rows_ > 0) {
        const std::int64_t active_end = std::min(band_origin_row_ + band_rows_, extent_.height);
        for (std::int64_t r = band_origin_row_; r < active_end; ++r) {
            const std::size_t old_slot = static_cast<std::size_t>(r % band_rows_);
            const std::size_t new_slot = static_cast<std::size_t>(r % new_rows);
            for (int c = 0; c < classes_; ++c) {
                const float* src =
                    &band_[(static_cast<std::size_t>(c) * static_cast<std::size_t>(band_rows_) +
                            old_slot) *
                           w];
                float* dst = &new_band[(static_cast<std::size_t>(c) *
                                            static_cast<std::size_t>(new_rows) +
                                        new_slot) *
                                       w];
                std::copy(src, src + w, dst);
            }
            std::copy(&contributors_[old_slot * w], &contributors_[old_slot * w] + w,
                      &new_contrib[new_slot * w]);
        }
    }

    band_ = std::move(new_band);
    contributors_ = std::move(new_contrib);
    band_rows_ = new_rows;
    report_.peak_band_bytes =
        std::max(report_.peak_band_bytes, static_cast<std::uint64_t>(band_.size() * sizeof(float)));
}

void StitchAccumulator::accumulate(const TileSpec& tile, const ScoreMap& scores) {
    if (scores.height != tile.size || scores.width != tile.size) {
        throw ShapeMismatch("accumulate: scores are " + std::to_string(scores.width) + "x" +
                            std::to_string(scores.height) + " but " + tile_str(tile));
    }
    accumulate_block(tile.x, tile.y, scores);
}

void StitchAccumulator::accumulate_block(std::int64_t x, std::int64_t y, const ScoreMap& scores) {
    if (finished_) throw Error("accumulate after finish");
    if (scores.classes != classes_) {
        throw ShapeMismatch("accumulate: scores have " + std::to_string(scores.classes) +
                            " classes, accumulator has " + std::to_string(classes_));
    }
    if (x < 0 || y < 0 || x + scores.width > extent_.width || y + scores.height > extent_.height) {
        throw OutOfExtent("accumulate: block at (" + std::to_string(x) + "," + std::to_string(y) +
                          ") size " + std::to_string(scores.width) + "x" +
                          std::to_string(scores.height) + " leaves the extent");
    }
    if (y < band_origin_row_) {
        throw OutOfBand("accumulate: block row " + std::to_string(y) +
                        " is below already-finalized row " + std::to_string(band_origin_row_));
    }

    ensure_band_rows(y + scores.height - band_origin_row_);

    const std::size_t w = static_cast<std::size_t>(extent_.width);
    const std::size_t bw = static_cast<std::size_t>(scores.width);
    for (int c = 0; c < classes_; ++c) {
        const float* src = scores.plane(c).data();
        for (std::int64_t dy = 0; dy < scores.height; ++dy) {
            float* dst = &band_[(static_cast<std::size_t>(c) *
                                     static_cast<std::size_t>(band_rows_) +
                                 slot(y + dy)) *
                                    w +
                                static_cast<std::size_t>(x)];
            const float* row = src + static_cast<std::size_t>(dy) * bw;
            for (std::size_t dx = 0; dx < bw; ++dx) dst[dx] += row[dx];
        }
    }
    for (std::int64_t dy = 0; dy < scores.height; ++dy) {
        std::uint8_t* cnt = &contributors_[slot(y + dy) * w + static_cast<std::size_t>(x)];
        for (std::size_t dx = 0; dx < bw; ++dx) {
            if (cnt[dx] < 255) ++cnt[dx];
        }
    }
    ++report_.tiles_applied;
}

void StitchAccumulator::advance(std::int64_t safe_row) {
    const std::int64_t safe = std::min(safe_row, extent_.height);
    if (safe <= band_origin_row_) return;
    if (band_rows_ == 0) ensure_band_rows(1);

    const std::int64_t h = safe - band_origin_row_;
    const std::size_t w = static_cast<std::size_t>(extent_.width);
    LabelMask mask_rows(h, extent_.width);
    ScoreMap prob_rows;
    ScoreMap sum_rows;
    if (prob_sink_ != nullptr) prob_rows = ScoreMap(classes_, h, extent_.width);
    if (sum_sink_ != nullptr) sum_rows = ScoreMap(classes_, h, extent_.width);

    std::vector<double> exps(static_cast<std::size_t>(classes_));
    for (std::int64_t r = 0; r < h; ++r) {
        const std::size_t s = slot(band_origin_row_ + r);
        for (std::size_t xpix = 0; xpix < w; ++xpix) {
            int best = 0;
            float best_v = band_[s * w + xpix];
            for (int c = 1; c < classes_; ++c) {
                const float v = band_[(static_cast<std::size_t>(c) *
                                           static_cast<std::size_t>(band_rows_) +
                                       s) *
                                          w +
                                      xpix];
                if (v > best_v) {
                    best_v = v;
                    best = c;
                }
            }
            mask_rows.at(r, static_cast<std::int64_t>(xpix)) = static_cast<std::uint8_t>(best);

            if (prob_sink_ != nullptr) {
                double max_v = -HUGE_VAL;
                for (int c = 0; c < classes_; ++c) {
                    max_v = std::max(max_v, static_cast<double>(
                                                band_[(static_cast<std::size_t>(c) *
                                                           static_cast<std::size_t>(band_rows_) +
                                                       s) *
                                                          w +
                                                      xpix]));
                }
                double sum = 0.0;
                for (int c = 0; c < classes_; ++c) {
                    const double e = std::exp(
                        static_cast<double>(band_[(static_cast<std::size_t>(c) *
                                                       static_cast<std::size_t>(band_rows_) +
                                                   s) *
                                                      w +
                                                  xpix]) -
                        max_v);
                    exps[static_cast<std::size_t>(c)] = e;
                    sum += e;
                }
                for (int c = 0; c < classes_; ++c) {
                    prob_rows.at(c, r, static_cast<std::int64_t>(xpix)) =
                        static_cast<float>(exps[static_cast<std::size_t>(c)] / sum);
                }
            }
            if (sum_sink_ != nullptr) {
                for (int c = 0; c < classes_; ++c) {
                    sum_rows.at(c, r, static_cast<std::int64_t>(xpix)) =
                        band_[(static_cast<std::size_t>(c) *
                                   static_cast<std::size_t>(band_rows_) +
                               s) *
                                  w +
                              xpix];
                }
            }
            report_.max_contributors_seen =
                std::max(report_.max_contributors_seen, static_cast<int>(contributors_[s * w + xpix]));
        }

        // Release the slot for reuse by rows further down.
        for (int c = 0; c < classes_; ++c) {
            float* row = &band_[(static_cast<std::size_t>(c) *
                                     static_cast<std::size_t>(band_rows_) +
                                 s) *
                                w];
            std::fill(row, row + w, 0.0f);
        }
        std::fill(&contributors_[s * w], &contributors_[s * w] + w, static_cast<std::uint8_t>(0));
    }

    const std::int64_t row_start = band_origin_row_;
    band_origin_row_ = safe;
    report_.pixels_finalized += static_cast<std::uint64_t>(h) * static_cast<std::uint64_t>(w);

    mask_sink_->accept_rows(row_start, mask_rows);
    if (prob_sink_ != nullptr) prob_sink_->accept_rows(row_start, prob_rows);
    if (sum_sink_ != nullptr) sum_sink_->accept_rows(row_start, sum_rows);
}

StitchReport StitchAccumulator::finish() {
    if (finished_) return report_;
    advance(extent_.height);
    mask_sink_->finish();
    if (prob_sink_ != nullptr) prob_sink_->finish();
    if (sum_sink_ != nullptr) sum_sink_->finish();
    finished_ = true;
    return report_;
}

StitchReport stitch_full(const TileGrid& grid, Predictor& predictor, RasterReader& source,
                         MaskRowSink& mask_sink, const StitchOptions& options) {
    if (!(grid.extent == source.extent())) {
        throw ShapeMismatch("stitch_full: grid extent does not match the raster");
    }
    if (predictor.input_size() > 0 && predictor.input_size() != grid.tile_size) {
        throw DimensionMismatch("stitch_full: predictor expects patches of " +
                                std::to_string(predictor.input_size()) + ", grid uses " +
                                std::to_string(grid.tile_size));
    }

    StitchAccumulator::Options acc_opts;
    acc_opts.band_rows_hint = std::min(grid.extent.height, 2 * grid.tile_size + grid.stride);
    acc_opts.prob_sink = options.prob_sink;
    acc_opts.sum_sink = options.sum_sink;
    StitchAccumulator acc(grid.extent, predictor.classes(), &mask_sink, acc_opts);

    auto predict_tile = [&](std::size_t i) -> ScoreMap {
        const TileSpec& tile = grid.tiles[i];
        try {
            const PixelBlock patch = source.read_window(tile.x, tile.y, tile.size, tile.size);
            return predictor.predict(patch, tile);
        } catch (const std::exception& e) {
            throw Error(tile_str(tile) + ": " + e.what());
        }
    };

    auto consume = [&](std::size_t i, ScoreMap scores) {
        const TileSpec& tile = grid.tiles[i];
        // Row-major grid order makes every row above the current tile safe.
        acc.advance(tile.y);
        const std::int64_t valid_w = std::min(tile.size, grid.extent.width - tile.x);
        const std::int64_t valid_h = std::min(tile.size, grid.extent.height - tile.y);
        if (valid_w == tile.size && valid_h == tile.size) {
            acc.accumulate(tile, scores);
            return;
        }
        // Raster smaller than the tile: the window was mirror-padded for the
        // predictor; crop the scores back to the real region.
        ScoreMap cropped(scores.classes, valid_h, valid_w);
        for (int c = 0; c < scores.classes; ++c) {
            for (std::int64_t y = 0; y < valid_h; ++y) {
                for (std::int64_t x = 0; x < valid_w; ++x) {
                    cropped.at(c, y, x) = scores.at(c, y, x);
                }
            }
        }
        acc.accumulate_block(tile.x, tile.y, cropped);
    };

    ordered_parallel_for(grid.tiles.size(), options.workers, predict_tile, consume);
    return acc.finish();
}

std::pair<LabelMask, StitchReport> stitch_full_mask(const TileGrid& grid, Predictor& predictor,
                                                    RasterReader& source,
                                                    const StitchOptions& options) {
    MemoryMaskSink sink(grid.extent);
    StitchReport report = stitch_full(grid, predictor, source, sink, options);
    return {sink.take(), report};
}

namespace {

// Collects only the rows/columns of the target window.
class TargetCropSink final : public MaskRowSink {
public:
    TargetCropSink(std::int64_t x0, std::int64_t y0, std::int64_t size)
        : x0_(x0), y0_(y0), size_(size), out_(size, size) {}

    void accept_rows(std::int64_t row_start, const LabelMask& rows) override {
        const std::int64_t lo = std::max(row_start, y0_);
        const std::int64_t hi = std::min(row_start + rows.height, y0_ + size_);
        for (std::int64_t r = lo; r < hi; ++r) {
            for (std::int64_t x = 0; x < size_; ++x) {
                out_.at(r - y0_, x) = rows.at(r - row_start, x0_ + x);
            }
        }
    }

    LabelMask take() { return std::move(out_); }

private:
    std::int64_t x0_, y0_, size_;
    LabelMask out_;
};

}  // namespace

LabelMask reassemble_patches(const std::vector<ScoredPatch>& patches, const PatchRecord& target) {
    if (patches.empty()) throw ConfigError("reassemble_patches: no patches");

    const std::string& slide = patches.front().record.wsi_id;
    bool found_target = false;
    std::int64_t min_x = patches.front().record.x, min_y = patches.front().record.y;
    std::int64_t max_x = 0, max_y = 0;
    for (const auto& p : patches) {
        if (p.record.wsi_id != slide) {
            throw MixedSlide("reassemble_patches: records from '" + slide + "' and '" +
                             p.record.wsi_id + "'");
        }
        if (p.scores.height != p.record.size || p.scores.width != p.record.size) {
            throw ShapeMismatch("reassemble_patches: scores do not match the record size for " +
                                format_patch_filename(p.record));
        }
        if (p.scores.classes != patches.front().scores.classes) {
            throw ShapeMismatch("reassemble_patches: class counts differ between patches");
        }
        if (p.record == target) found_target = true;
        min_x = std::min(min_x, p.record.x);
        min_y = std::min(min_y, p.record.y);
        max_x = std::max(max_x, p.record.x + p.record.size);
        max_y = std::max(max_y, p.record.y + p.record.size);
    }
    if (!found_target) {
        throw MissingTarget("reassemble_patches: target " + format_patch_filename(target) +
                            " not among the supplied records");
    }

    // Work in the bounding box of the records, not the slide frame.
    const RasterExtent frame{max_x - min_x, max_y - min_y};
    std::vector<std::size_t> order(patches.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        const auto& ra = patches[a].record;
        const auto& rb = patches[b].record;
        return std::tie(ra.y, ra.x) < std::tie(rb.y, rb.x);
    });

    TargetCropSink sink(target.x - min_x, target.y - min_y, target.size);
    StitchAccumulator acc(frame, patches.front().scores.classes, &sink);
    for (std::size_t i : order) {
        const auto& p = patches[i];
        acc.advance(p.record.y - min_y);
        acc.accumulate_block(p.record.x - min_x, p.record.y - min_y, p.scores);
    }
    acc.finish();
    return sink.take();
}

}  // namespace slidepipe
