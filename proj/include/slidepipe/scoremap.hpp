#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "slidepipe/geometry.hpp"

namespace slidepipe {

// Per-class raw prediction scores (pre-normalization logits) for one patch.
// Planar layout: classes * height * width, plane-major.
struct ScoreMap {
    int classes = 0;
    std::int64_t height = 0;
    std::int64_t width = 0;
    std::vector<float> scores;

    ScoreMap() = default;
    ScoreMap(int c, std::int64_t h, std::int64_t w)
        : classes(c), height(h), width(w),
          scores(static_cast<std::size_t>(c) * static_cast<std::size_t>(h) *
                 static_cast<std::size_t>(w)) {}

    std::size_t plane_size() const {
        return static_cast<std::size_t>(height) * static_cast<std::size_t>(width);
    }
    float& at(int c, std::int64_t y, std::int64_t x) {
        return scores[static_cast<std::size_t>(c) * plane_size() +
                      static_cast<std::size_t>(y) * static_cast<std::size_t>(width) +
                      static_cast<std::size_t>(x)];
    }
    float at(int c, std::int64_t y, std::int64_t x) const {
        return scores[static_cast<std::size_t>(c) * plane_size() +
                      static_cast<std::size_t>(y) * static_cast<std::size_t>(width) +
                      static_cast<std::size_t>(x)];
    }
    std::span<float> plane(int c) {
        return std::span<float>(scores).subspan(static_cast<std::size_t>(c) * plane_size(), plane_size());
    }
    std::span<const float> plane(int c) const {
        return std::span<const float>(scores).subspan(static_cast<std::size_t>(c) * plane_size(),
                                                      plane_size());
    }
    bool same_shape(const ScoreMap& o) const {
        return classes == o.classes && height == o.height && width == o.width;
    }
};

// Same layout as ScoreMap; per pixel the class values sum to 1.
struct ProbMap {
    int classes = 0;
    std::int64_t height = 0;
    std::int64_t width = 0;
    std::vector<float> values;

    ProbMap() = default;
    ProbMap(int c, std::int64_t h, std::int64_t w)
        : classes(c), height(h), width(w),
          values(static_cast<std::size_t>(c) * static_cast<std::size_t>(h) *
                 static_cast<std::size_t>(w)) {}

    std::size_t plane_size() const {
        return static_cast<std::size_t>(height) * static_cast<std::size_t>(width);
    }
    float at(int c, std::int64_t y, std::int64_t x) const {
        return values[static_cast<std::size_t>(c) * plane_size() +
                      static_cast<std::size_t>(y) * static_cast<std::size_t>(width) +
                      static_cast<std::size_t>(x)];
    }
};

// Per-pixel class indices. Supports up to 256 classes.
struct LabelMask {
    std::int64_t height = 0;
    std::int64_t width = 0;
    std::vector<std::uint8_t> labels;

    LabelMask() = default;
    LabelMask(std::int64_t h, std::int64_t w)
        : height(h), width(w),
          labels(static_cast<std::size_t>(h) * static_cast<std::size_t>(w)) {}

    std::uint8_t& at(std::int64_t y, std::int64_t x) {
        return labels[static_cast<std::size_t>(y) * static_cast<std::size_t>(width) +
                      static_cast<std::size_t>(x)];
    }
    std::uint8_t at(std::int64_t y, std::int64_t x) const {
        return labels[static_cast<std::size_t>(y) * static_cast<std::size_t>(width) +
                      static_cast<std::size_t>(x)];
    }
    bool same_shape(const LabelMask& o) const { return height == o.height && width == o.width; }
    bool operator==(const LabelMask&) const = default;
};

// Per-pixel softmax across the class axis, max-subtraction stabilized,
// accumulated in 64-bit. Throws NonFiniteInput on NaN/Inf scores.
ProbMap softmax_normalize(const ScoreMap& map);

// Per-pixel index of the maximum value; ties break toward the lowest class
// index.
LabelMask argmax_labels(const ScoreMap& map);
LabelMask argmax_labels(const ProbMap& map);

// 1 where label == foreground_class, else 0. Throws IndexOutOfRange when
// foreground_class >= classes.
LabelMask binarize(const LabelMask& mask, int foreground_class, int classes);

}  // namespace slidepipe
