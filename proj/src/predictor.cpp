#include "slidepipe/predictor.hpp"

#include <string>

#include "slidepipe/det_random.hpp"
#include "slidepipe/errors.hpp"

namespace slidepipe {

namespace {

// Stream tags keep the noise and flip draws from colliding.
constexpr std::uint64_t kNoiseStream = 0x6e6f697365ull;  // "noise"
constexpr std::uint64_t kFlipStream = 0x666c6970ull;     // "flip"

void require_square(const PixelBlock& patch, const TileSpec& where) {
    if (patch.width != where.size || patch.height != where.size) {
        throw ShapeMismatch("predict: patch is " + std::to_string(patch.width) + "x" +
                            std::to_string(patch.height) + " but tile size is " +
                            std::to_string(where.size));
    }
}

}  // namespace

ConstantPredictor::ConstantPredictor(ScoreMap tile_scores) : scores_(std::move(tile_scores)) {}

ScoreMap ConstantPredictor::predict(const PixelBlock& patch, const TileSpec& where) {
    require_square(patch, where);
    if (patch.width != scores_.width || patch.height != scores_.height) {
        throw ShapeMismatch("ConstantPredictor: patch does not match the fixed score shape");
    }
    return scores_;
}

PixelThresholdPredictor::PixelThresholdPredictor(int classes, int threshold, float margin)
    : classes_(classes), threshold_(threshold), margin_(margin) {
    if (classes < 2) throw ConfigError("pixel predictor needs at least 2 classes");
}

ScoreMap PixelThresholdPredictor::predict(const PixelBlock& patch, const TileSpec& where) {
    require_square(patch, where);
    ScoreMap out(classes_, patch.height, patch.width);
    for (std::int64_t y = 0; y < patch.height; ++y) {
        for (std::int64_t x = 0; x < patch.width; ++x) {
            int sum = 0;
            for (int c = 0; c < patch.channels; ++c) sum += patch.at(y, x, c);
            const int mean = sum / patch.channels;
            const int winner = mean >= threshold_ ? 1 : 0;
            for (int c = 0; c < classes_; ++c) {
                out.at(c, y, x) = c == winner ? margin_ : -margin_;
            }
        }
    }
    return out;
}

ThresholdOraclePredictor::ThresholdOraclePredictor(const LabelMask& truth, int classes,
                                                   double noise, std::uint64_t seed)
    : truth_(&truth), classes_(classes), noise_(noise), seed_(seed) {
    if (classes < 2) throw ConfigError("oracle predictor needs at least 2 classes");
    if (noise < 0.0) throw ConfigError("oracle predictor: noise must be >= 0");
}

std::uint8_t ThresholdOraclePredictor::truth_at(std::int64_t x, std::int64_t y) const {
    return truth_->at(mirror_index(y, truth_->height), mirror_index(x, truth_->width));
}

ScoreMap ThresholdOraclePredictor::predict(const PixelBlock& patch, const TileSpec& where) {
    require_square(patch, where);
    ScoreMap out(classes_, patch.height, patch.width);
    for (std::int64_t y = 0; y < patch.height; ++y) {
        for (std::int64_t x = 0; x < patch.width; ++x) {
            const int truth_class = truth_at(where.x + x, where.y + y);
            for (int c = 0; c < classes_; ++c) {
                float v = (c == truth_class) ? kMargin : -kMargin;
                if (noise_ > 0.0) {
                    v += static_cast<float>(detrand::uniform_in(
                        -noise_, noise_,
                        {seed_, kNoiseStream, static_cast<std::uint64_t>(where.x),
                         static_cast<std::uint64_t>(where.y), static_cast<std::uint64_t>(x),
                         static_cast<std::uint64_t>(y), static_cast<std::uint64_t>(c)}));
                }
                out.at(c, y, x) = v;
            }
        }
    }
    return out;
}

BorderDegradedPredictor::BorderDegradedPredictor(const LabelMask& truth, int classes,
                                                 double border_frac, double flip_prob,
                                                 std::uint64_t seed, double noise)
    : ThresholdOraclePredictor(truth, classes, noise, seed),
      border_frac_(border_frac),
      flip_prob_(flip_prob) {
    if (border_frac < 0.0 || border_frac > 0.5) {
        throw ConfigError("border_frac must be in [0, 0.5]");
    }
    if (flip_prob < 0.0 || flip_prob > 1.0) {
        throw ConfigError("flip_prob must be in [0, 1]");
    }
}

ScoreMap BorderDegradedPredictor::predict(const PixelBlock& patch, const TileSpec& where) {
    ScoreMap out = ThresholdOraclePredictor::predict(patch, where);
    const std::int64_t border = static_cast<std::int64_t>(border_frac_ * static_cast<double>(where.size));
    if (border <= 0 || flip_prob_ <= 0.0) return out;

    for (std::int64_t y = 0; y < patch.height; ++y) {
        const bool y_border = y < border || y >= patch.height - border;
        for (std::int64_t x = 0; x < patch.width; ++x) {
            if (!y_border && x >= border && x < patch.width - border) continue;
            const int truth_class = truth_at(where.x + x, where.y + y);
            if (truth_class == 0) continue;  // only foreground loses context at borders
            const bool flip = detrand::bernoulli(
                flip_prob_, {seed_, kFlipStream, static_cast<std::uint64_t>(where.x),
                             static_cast<std::uint64_t>(where.y), static_cast<std::uint64_t>(x),
                             static_cast<std::uint64_t>(y)});
            if (!flip) continue;
            // Weak background call: wrong on its own, but outvoted once a
            // neighbouring tile contributes a clean interior score.
            out.at(0, y, x) = kMargin * kFlipAttenuation;
            out.at(truth_class, y, x) = -kMargin * kFlipAttenuation;
        }
    }
    return out;
}

}  // namespace slidepipe
