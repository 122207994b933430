#pragma once

#include <cstdint>
#include <memory>

#include "slidepipe/geometry.hpp"
#include "slidepipe/raster_reader.hpp"
#include "slidepipe/scoremap.hpp"

namespace slidepipe {

// Patch-to-scores contract. Predictors emit raw (pre-softmax) per-class
// scores; normalization happens after stitching. `where` carries the
// patch's top-left coordinate in the slide frame: real predictors ignore
// it, the deterministic built-ins key their noise streams on it.
// Implementations must be safe to call from multiple threads.
class Predictor {
public:
    virtual ~Predictor() = default;

    virtual int classes() const = 0;
    // Expected square patch side; 0 accepts any size.
    virtual std::int64_t input_size() const { return 0; }

    virtual ScoreMap predict(const PixelBlock& patch, const TileSpec& where) = 0;
};

// Emits the same scores for every patch. Degenerate-pipeline test predictor.
class ConstantPredictor final : public Predictor {
public:
    explicit ConstantPredictor(ScoreMap tile_scores);

    int classes() const override { return scores_.classes; }
    std::int64_t input_size() const override { return scores_.height; }
    ScoreMap predict(const PixelBlock& patch, const TileSpec& where) override;

private:
    ScoreMap scores_;
};

// Pure function of patch bytes: class 1 gets +margin where the mean channel
// value is at least `threshold`, class 0 elsewhere; the losing classes get
// -margin. This is the predictor the reference external server wraps, so
// in-process and over-the-wire runs can be compared byte for byte.
class PixelThresholdPredictor final : public Predictor {
public:
    explicit PixelThresholdPredictor(int classes = 2, int threshold = 128, float margin = 4.0f);

    int classes() const override { return classes_; }
    ScoreMap predict(const PixelBlock& patch, const TileSpec& where) override;

private:
    int classes_;
    int threshold_;
    float margin_;
};

// Scores +margin for the ground-truth class and -margin elsewhere, plus
// uniform noise in [-noise, +noise] keyed by (seed, patch origin, pixel,
// class). With noise < margin the argmax reproduces the truth exactly.
class ThresholdOraclePredictor : public Predictor {
public:
    static constexpr float kMargin = 4.0f;

    ThresholdOraclePredictor(const LabelMask& truth, int classes, double noise = 0.0,
                             std::uint64_t seed = 0);

    int classes() const override { return classes_; }
    ScoreMap predict(const PixelBlock& patch, const TileSpec& where) override;

protected:
    // Truth window at slide coordinates, mirror-padded past the boundary.
    std::uint8_t truth_at(std::int64_t x, std::int64_t y) const;

    const LabelMask* truth_;
    int classes_;
    double noise_;
    std::uint64_t seed_;
};

// Threshold oracle whose border zone misbehaves: ground-truth foreground
// pixels closer than border_frac * size to any patch edge are flipped
// toward background with probability flip_prob. A flipped pixel scores
// background at a quarter of the clean margin (a weak miss, the way
// context-starved border predictions fail), so overlapping tiles that see
// the pixel in their interior outvote it in the stitched sum. Flip
// decisions are a counter-based stream keyed by (seed, patch origin,
// pixel): a pixel degrades identically across runs but differently across
// tiles at different offsets.
class BorderDegradedPredictor final : public ThresholdOraclePredictor {
public:
    static constexpr float kFlipAttenuation = 0.25f;

    BorderDegradedPredictor(const LabelMask& truth, int classes, double border_frac,
                            double flip_prob, std::uint64_t seed, double noise = 0.0);

    ScoreMap predict(const PixelBlock& patch, const TileSpec& where) override;

private:
    double border_frac_;
    double flip_prob_;
};

}  // namespace slidepipe
