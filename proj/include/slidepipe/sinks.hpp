#pragma once

#include <cstdint>

#include "slidepipe/scoremap.hpp"

namespace slidepipe {

// Receives finalized mask rows in increasing, non-overlapping row order.
// finish() is required for a complete output.
class MaskRowSink {
public:
    virtual ~MaskRowSink() = default;
    virtual void accept_rows(std::int64_t row_start, const LabelMask& rows) = 0;
    virtual void finish() {}
};

// Same contract for per-class float rows (probabilities or raw sums).
class PlaneRowSink {
public:
    virtual ~PlaneRowSink() = default;
    virtual void accept_rows(std::int64_t row_start, const ScoreMap& rows) = 0;
    virtual void finish() {}
};

// Collects all rows into one in-memory mask. For desk-scale rasters and
// tests; gigapixel outputs go to a file-backed sink instead.
class MemoryMaskSink final : public MaskRowSink {
public:
    explicit MemoryMaskSink(RasterExtent extent) : mask_(extent.height, extent.width) {}

    void accept_rows(std::int64_t row_start, const LabelMask& rows) override {
        for (std::int64_t r = 0; r < rows.height; ++r) {
            for (std::int64_t x = 0; x < rows.width; ++x) {
                mask_.at(row_start + r, x) = rows.at(r, x);
            }
        }
    }

    const LabelMask& mask() const { return mask_; }
    LabelMask take() { return std::move(mask_); }

private:
    LabelMask mask_;
};

class MemoryPlaneSink final : public PlaneRowSink {
public:
    MemoryPlaneSink(RasterExtent extent, int classes)
        : map_(classes, extent.height, extent.width) {}

    void accept_rows(std::int64_t row_start, const ScoreMap& rows) override {
        for (int c = 0; c < rows.classes; ++c) {
            for (std::int64_t r = 0; r < rows.height; ++r) {
                for (std::int64_t x = 0; x < rows.width; ++x) {
                    map_.at(c, row_start + r, x) = rows.at(c, r, x);
                }
            }
        }
    }

    const ScoreMap& map() const { return map_; }

private:
    ScoreMap map_;
};

class NullMaskSink final : public MaskRowSink {
public:
    void accept_rows(std::int64_t, const LabelMask&) override {}
};

}  // namespace slidepipe
