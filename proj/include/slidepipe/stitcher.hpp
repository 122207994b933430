#pragma once

#include <cstdint>
#include <vector>

#include "slidepipe/geometry.hpp"
#include "slidepipe/patch_codec.hpp"
#include "slidepipe/predictor.hpp"
#include "slidepipe/raster_reader.hpp"
#include "slidepipe/scoremap.hpp"
#include "slidepipe/sinks.hpp"

namespace slidepipe {

struct StitchReport {
    std::uint64_t tiles_applied = 0;
    std::uint64_t pixels_finalized = 0;
    int max_contributors_seen = 0;
    std::uint64_t peak_band_bytes = 0;  // score band allocation, counts plane excluded
};

// Upper bound on the score band for a full stitch run:
// classes * (2 * tile_size + stride) * width * 4 bytes.
std::uint64_t band_bytes_bound(int classes, std::int64_t tile_size, std::int64_t stride,
                               std::int64_t width);

// Running sum of overlapping ScoreMaps over a raster, held in a rolling band
// of rows so full-slide accumulation never needs a dense class buffer.
// Feed contract: tiles arrive with non-decreasing safe rows; a tile may not
// start above band_origin_row(). advance(safe_row) finalizes rows below
// safe_row (argmax to the mask sink, optionally softmax probabilities and
// raw sums to plane sinks) and releases them.
class StitchAccumulator {
public:
    struct Options {
        std::int64_t band_rows_hint = 0;  // preallocate this many rows (grown on demand)
        PlaneRowSink* prob_sink = nullptr;
        PlaneRowSink* sum_sink = nullptr;
    };

    StitchAccumulator(RasterExtent extent, int classes, MaskRowSink* mask_sink);
    StitchAccumulator(RasterExtent extent, int classes, MaskRowSink* mask_sink, Options options);

    // Adds a square tile's scores. scores must be tile.size x tile.size with
    // the accumulator's class count.
    void accumulate(const TileSpec& tile, const ScoreMap& scores);

    // Rect variant: the score map's own height/width define the block. Used
    // when a nominal tile was cropped back to the raster boundary.
    void accumulate_block(std::int64_t x, std::int64_t y, const ScoreMap& scores);

    // Finalizes rows [band_origin_row, safe_row) and emits them to the
    // sinks. Advancing to a row at or below the current origin is a no-op.
    void advance(std::int64_t safe_row);

    // Advances to the full height, finishes the sinks and returns the report.
    StitchReport finish();

    std::int64_t band_origin_row() const { return band_origin_row_; }
    std::int64_t band_capacity_rows() const { return band_rows_; }
    const RasterExtent& extent() const { return extent_; }
    int classes() const { return classes_; }

private:
    void ensure_band_rows(std::int64_t rows_needed);
    std::size_t slot(std::int64_t row) const {
        return static_cast<std::size_t>(row % band_rows_);
    }

    RasterExtent extent_;
    int classes_ = 0;
    MaskRowSink* mask_sink_ = nullptr;
    PlaneRowSink* prob_sink_ = nullptr;
    PlaneRowSink* sum_sink_ = nullptr;

    std::int64_t band_rows_ = 0;            // ring capacity in rows
    std::vector<float> band_;               // [class][slot][x]
    std::vector<std::uint8_t> contributors_;  // [slot][x], saturating
    std::int64_t band_origin_row_ = 0;      // == finalized row count
    bool finished_ = false;

    StitchReport report_;
};

struct StitchOptions {
    unsigned workers = 1;
    PlaneRowSink* prob_sink = nullptr;
    PlaneRowSink* sum_sink = nullptr;
};

// End-to-end pass over a grid: read each tile window, predict, accumulate,
// advance as rows become safe, finish. Equivalent to a dense all-in-memory
// sum-softmax-argmax at every pixel. Predictor calls run on `workers`
// threads; accumulation order is fixed by the grid, so results do not
// depend on the worker count.
StitchReport stitch_full(const TileGrid& grid, Predictor& predictor, RasterReader& source,
                         MaskRowSink& mask_sink, const StitchOptions& options = {});

// Convenience wrapper collecting the mask in memory.
std::pair<LabelMask, StitchReport> stitch_full_mask(const TileGrid& grid, Predictor& predictor,
                                                    RasterReader& source,
                                                    const StitchOptions& options = {});

// A patch with its raw scores, for coordinate-based reassembly.
struct ScoredPatch {
    PatchRecord record;
    ScoreMap scores;
};

// Stitches all patches of one slide in the bounding-box frame of the
// supplied records and crops the target's window back out. A patch with no
// overlapping neighbour reduces to its own argmax.
LabelMask reassemble_patches(const std::vector<ScoredPatch>& patches, const PatchRecord& target);

}  // namespace slidepipe
