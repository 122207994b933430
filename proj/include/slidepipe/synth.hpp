#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "slidepipe/eval.hpp"
#include "slidepipe/geometry.hpp"
#include "slidepipe/raster_reader.hpp"
#include "slidepipe/scoremap.hpp"

namespace slidepipe {

// Recipe for one synthetic slide: elliptical foreground objects on a flat
// background, fully determined by the seed.
struct SynthSlideSpec {
    RasterExtent extent;
    int object_count = 0;
    std::int64_t radius_min = 0;
    std::int64_t radius_max = 0;
    std::uint64_t seed = 0;
    std::string group = "synthetic";
};

struct Ellipse {
    double cx = 0.0, cy = 0.0, rx = 0.0, ry = 0.0;
};

struct SynthSlide {
    PixelBlock image;  // RGB, gray levels per class plus texture noise
    LabelMask truth;   // 0 background, 1 object union
    std::vector<Ellipse> objects;
};

// Pure function of the slide recipe: the same seed gives bit-identical
// output. Throws InfeasibleSpec when an object cannot fit inside the extent.
SynthSlide generate_slide(const SynthSlideSpec& spec);

// Truth-only variants for slides too large to materialize as RGB.
LabelMask generate_truth(const SynthSlideSpec& spec);

// RasterReader that renders image pixels on demand from a truth mask,
// using the same gray levels and noise stream as generate_slide.
class SynthSlideReader final : public RasterReader {
public:
    SynthSlideReader(const LabelMask& truth, std::uint64_t seed);

    RasterExtent extent() const override { return {truth_->width, truth_->height}; }
    int channels() const override { return 3; }

protected:
    PixelBlock read_inside(std::int64_t x, std::int64_t y, std::int64_t w,
                           std::int64_t h) const override;

private:
    const LabelMask* truth_;
    std::uint64_t seed_;
};

// The with/without-overlap experiment: each slide is stitched once with
// stride_control (= tile_size, single prediction per pixel) and once with
// stride_overlap, both under the border-degraded predictor, and the two
// masks are scored against the truth.
struct PredictorParams {
    double border_frac = 0.125;
    double flip_prob = 0.8;
    std::uint64_t seed = 0;
    double noise = 0.0;
};

struct ExperimentConfig {
    std::vector<SynthSlideSpec> slides;
    std::int64_t tile_size = 512;
    std::int64_t stride_overlap = 256;
    std::int64_t stride_control = 512;  // must equal tile_size
    PredictorParams predictor;
    unsigned workers = 1;
};

struct ExperimentResult {
    DiceReport control;
    DiceReport stitched;
    CompareTable delta;           // stitched - control
    double mean_delta = 0.0;      // points, mean over slides
    double frac_not_worse = 0.0;  // share of slides with delta >= 0
    // Share of objects whose bounding box crosses a control-grid tile
    // boundary, per slide. Reported because the stitching gain only exists
    // where objects straddle borders.
    std::vector<double> border_straddle_frac;
};

// Fraction of objects crossing a tile boundary of the non-overlapping grid.
double border_straddle_fraction(const std::vector<Ellipse>& objects, std::int64_t tile_size);

ExperimentResult run_experiment(const ExperimentConfig& config);

// The desk-scale default: 8 slides of 4096^2, tile 512, stride 256 vs 512,
// border_frac 0.125, flip_prob 0.8, fixed seeds.
ExperimentConfig desk_preset();

}  // namespace slidepipe
