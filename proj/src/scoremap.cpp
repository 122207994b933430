#include "slidepipe/scoremap.hpp"

#include <cmath>
#include <string>

#include "slidepipe/errors.hpp"

namespace slidepipe {

namespace {

void require_valid(int classes, std::int64_t height, std::int64_t width) {
    if (classes < 2) throw ConfigError("score map needs at least 2 classes, got " + std::to_string(classes));
    if (classes > 256) throw ConfigError("score map supports at most 256 classes");
    if (height < 1 || width < 1) throw ConfigError("score map planes must be non-empty");
}

template <class Map>
LabelMask argmax_impl(const Map& map, const float* data) {
    require_valid(map.classes, map.height, map.width);
    const std::size_t plane = map.plane_size();
    LabelMask out(map.height, map.width);
    for (std::size_t i = 0; i < plane; ++i) {
        int best = 0;
        float best_v = data[i];
        for (int c = 1; c < map.classes; ++c) {
            const float v = data[static_cast<std::size_t>(c) * plane + i];
            if (v > best_v) {
                best_v = v;
                best = c;
            }
        }
        out.labels[i] = static_cast<std::uint8_t>(best);
    }
    return out;
}

}  // namespace

ProbMap softmax_normalize(const ScoreMap& map) {
    require_valid(map.classes, map.height, map.width);
    const std::size_t plane = map.plane_size();
    ProbMap out(map.classes, map.height, map.width);

    // 64-bit exponentials; the 32-bit planes stay as storage only.
    std::vector<double> exps(static_cast<std::size_t>(map.classes));
    for (std::size_t i = 0; i < plane; ++i) {
        float max_v = map.scores[i];
        for (int c = 0; c < map.classes; ++c) {
            const float v = map.scores[static_cast<std::size_t>(c) * plane + i];
            if (!std::isfinite(v)) throw NonFiniteInput("softmax_normalize: non-finite score");
            if (v > max_v) max_v = v;
        }
        double sum = 0.0;
        for (int c = 0; c < map.classes; ++c) {
            const double e =
                std::exp(static_cast<double>(map.scores[static_cast<std::size_t>(c) * plane + i]) -
                         static_cast<double>(max_v));
            exps[static_cast<std::size_t>(c)] = e;
            sum += e;
        }
        for (int c = 0; c < map.classes; ++c) {
            out.values[static_cast<std::size_t>(c) * plane + i] =
                static_cast<float>(exps[static_cast<std::size_t>(c)] / sum);
        }
    }
    return out;
}

LabelMask argmax_labels(const ScoreMap& map) {
    for (float v : map.scores) {
        if (!std::isfinite(v)) throw NonFiniteInput("argmax_labels: non-finite score");
    }
    return argmax_impl(map, map.scores.data());
}

LabelMask argmax_labels(const ProbMap& map) {
    return argmax_impl(map, map.values.data());
}

LabelMask binarize(const LabelMask& mask, int foreground_class, int classes) {
    if (foreground_class < 0 || foreground_class >= classes) {
        throw IndexOutOfRange("binarize: foreground class " + std::to_string(foreground_class) +
                              " out of range for " + std::to_string(classes) + " classes");
    }
    LabelMask out(mask.height, mask.width);
    for (std::size_t i = 0; i < mask.labels.size(); ++i) {
        out.labels[i] = mask.labels[i] == foreground_class ? 1 : 0;
    }
    return out;
}

}  // namespace slidepipe
