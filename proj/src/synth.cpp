#include "slidepipe/synth.hpp"

#include <algorithm>
#include <cmath>

#include "slidepipe/det_random.hpp"
#include "slidepipe/errors.hpp"
#include "slidepipe/parallel.hpp"
#include "slidepipe/predictor.hpp"
#include "slidepipe/stitcher.hpp"

namespace slidepipe {

namespace {

constexpr std::uint64_t kEllipseStream = 0x656c6c6970ull;  // "ellip"
constexpr std::uint64_t kTextureStream = 0x74657874ull;    // "text"

constexpr std::uint8_t kBackgroundGray = 40;
constexpr std::uint8_t kForegroundGray = 200;
constexpr int kNoiseAmplitude = 18;

std::vector<Ellipse> place_objects(const SynthSlideSpec& spec) {
    if (spec.extent.width < 1 || spec.extent.height < 1) {
        throw ConfigError("generate_slide: extent must be at least 1x1");
    }
    if (spec.object_count < 0) throw ConfigError("generate_slide: negative object count");
    if (spec.object_count > 0 && (spec.radius_min < 1 || spec.radius_max < spec.radius_min)) {
        throw ConfigError("generate_slide: radius range must satisfy 1 <= min <= max");
    }

    std::vector<Ellipse> objects;
    objects.reserve(static_cast<std::size_t>(spec.object_count));
    for (int k = 0; k < spec.object_count; ++k) {
        const auto id = static_cast<std::uint64_t>(k);
        Ellipse e;
        e.rx = detrand::uniform_in(static_cast<double>(spec.radius_min),
                                   static_cast<double>(spec.radius_max),
                                   {spec.seed, kEllipseStream, id, 0});
        e.ry = detrand::uniform_in(static_cast<double>(spec.radius_min),
                                   static_cast<double>(spec.radius_max),
                                   {spec.seed, kEllipseStream, id, 1});
        const double w = static_cast<double>(spec.extent.width);
        const double h = static_cast<double>(spec.extent.height);
        if (2.0 * e.rx >= w || 2.0 * e.ry >= h) {
            throw InfeasibleSpec("generate_slide: object " + std::to_string(k) +
                                 " cannot fit inside the extent");
        }
        e.cx = detrand::uniform_in(e.rx, w - e.rx, {spec.seed, kEllipseStream, id, 2});
        e.cy = detrand::uniform_in(e.ry, h - e.ry, {spec.seed, kEllipseStream, id, 3});
        objects.push_back(e);
    }
    return objects;
}

// Union of ellipses rasterized at pixel centers (x + 0.5, y + 0.5).
LabelMask rasterize(const std::vector<Ellipse>& objects, RasterExtent extent) {
    LabelMask truth(extent.height, extent.width);
    for (const Ellipse& e : objects) {
        const std::int64_t y0 = std::max<std::int64_t>(0, static_cast<std::int64_t>(std::floor(e.cy - e.ry)));
        const std::int64_t y1 =
            std::min<std::int64_t>(extent.height - 1, static_cast<std::int64_t>(std::ceil(e.cy + e.ry)));
        for (std::int64_t y = y0; y <= y1; ++y) {
            const double dy = (static_cast<double>(y) + 0.5 - e.cy) / e.ry;
            const double rest = 1.0 - dy * dy;
            if (rest < 0.0) continue;
            const double half = e.rx * std::sqrt(rest);
            // pixel centers x + 0.5 within [cx - half, cx + half]
            const std::int64_t x0 =
                std::max<std::int64_t>(0, static_cast<std::int64_t>(std::ceil(e.cx - half - 0.5)));
            const std::int64_t x1 = std::min<std::int64_t>(
                extent.width - 1, static_cast<std::int64_t>(std::floor(e.cx + half - 0.5)));
            for (std::int64_t x = x0; x <= x1; ++x) truth.at(y, x) = 1;
        }
    }
    return truth;
}

std::uint8_t shade(std::uint8_t label, std::int64_t x, std::int64_t y, int channel,
                   std::uint64_t seed) {
    const int base = label == 0 ? kBackgroundGray : kForegroundGray;
    const std::uint64_t h = detrand::hash({seed, kTextureStream, static_cast<std::uint64_t>(x),
                                           static_cast<std::uint64_t>(y)});
    // One hash feeds all three channels.
    const int span = 2 * kNoiseAmplitude + 1;
    const int noise =
        static_cast<int>((h >> (16 * channel)) % static_cast<std::uint64_t>(span)) - kNoiseAmplitude;
    return static_cast<std::uint8_t>(std::clamp(base + noise, 0, 255));
}

}  // namespace

LabelMask generate_truth(const SynthSlideSpec& spec) {
    return rasterize(place_objects(spec), spec.extent);
}

SynthSlide generate_slide(const SynthSlideSpec& spec) {
    SynthSlide slide;
    slide.objects = place_objects(spec);
    slide.truth = rasterize(slide.objects, spec.extent);
    slide.image = PixelBlock(spec.extent.width, spec.extent.height, 3);
    for (std::int64_t y = 0; y < spec.extent.height; ++y) {
        for (std::int64_t x = 0; x < spec.extent.width; ++x) {
            const std::uint8_t label = slide.truth.at(y, x);
            for (int c = 0; c < 3; ++c) {
                slide.image.at(y, x, c) = shade(label, x, y, c, spec.seed);
            }
        }
    }
    return slide;
}

SynthSlideReader::SynthSlideReader(const LabelMask& truth, std::uint64_t seed)
    : truth_(&truth), seed_(seed) {}

PixelBlock SynthSlideReader::read_inside(std::int64_t x, std::int64_t y, std::int64_t w,
                                         std::int64_t h) const {
    PixelBlock out(w, h, 3);
    for (std::int64_t i = 0; i < h; ++i) {
        for (std::int64_t j = 0; j < w; ++j) {
            const std::uint8_t label = truth_->at(y + i, x + j);
            for (int c = 0; c < 3; ++c) {
                out.at(i, j, c) = shade(label, x + j, y + i, c, seed_);
            }
        }
    }
    return out;
}

ExperimentConfig desk_preset() {
    ExperimentConfig config;
    config.tile_size = 512;
    config.stride_overlap = 256;
    config.stride_control = 512;
    config.predictor.border_frac = 0.125;
    config.predictor.flip_prob = 0.8;
    config.predictor.seed = 4242;
    for (int i = 0; i < 8; ++i) {
        SynthSlideSpec spec;
        spec.extent = {4096, 4096};
        spec.object_count = 48;
        spec.radius_min = 48;
        spec.radius_max = 128;
        spec.seed = 1000 + static_cast<std::uint64_t>(i);
        spec.group = "synthetic";
        config.slides.push_back(spec);
    }
    return config;
}

double border_straddle_fraction(const std::vector<Ellipse>& objects, std::int64_t tile_size) {
    if (objects.empty()) return 0.0;
    std::int64_t straddling = 0;
    for (const Ellipse& e : objects) {
        const auto crosses = [tile_size](double lo, double hi) {
            return static_cast<std::int64_t>(std::floor(lo / static_cast<double>(tile_size))) !=
                   static_cast<std::int64_t>(std::floor(hi / static_cast<double>(tile_size)));
        };
        if (crosses(e.cx - e.rx, e.cx + e.rx) || crosses(e.cy - e.ry, e.cy + e.ry)) {
            ++straddling;
        }
    }
    return static_cast<double>(straddling) / static_cast<double>(objects.size());
}

ExperimentResult run_experiment(const ExperimentConfig& config) {
    if (config.slides.empty()) throw ConfigError("run_experiment: no slides configured");
    if (config.stride_control != config.tile_size) {
        throw ConfigError("run_experiment: the control arm must use stride == tile_size");
    }
    if (config.stride_overlap < 1 || config.stride_overlap > config.tile_size) {
        throw ConfigError("run_experiment: stride_overlap must be in [1, tile_size]");
    }

    struct SlideOutcome {
        DiceScore control;
        DiceScore stitched;
        double straddle_frac = 0.0;
    };

    std::vector<SlideOutcome> outcomes(config.slides.size());
    ordered_parallel_for(
        config.slides.size(), config.workers,
        [&](std::size_t i) -> SlideOutcome {
            const SynthSlideSpec& spec = config.slides[i];
            const SynthSlide slide = generate_slide(spec);
            MemoryRasterReader reader(slide.image);
            BorderDegradedPredictor predictor(slide.truth, 2, config.predictor.border_frac,
                                              config.predictor.flip_prob, config.predictor.seed,
                                              config.predictor.noise);

            SlideOutcome out;
            out.straddle_frac = border_straddle_fraction(slide.objects, config.tile_size);
            {
                const TileGrid grid =
                    make_grid(spec.extent, config.tile_size, config.stride_control);
                auto [mask, report] = stitch_full_mask(grid, predictor, reader);
                out.control = dice(mask, slide.truth);
            }
            {
                const TileGrid grid =
                    make_grid(spec.extent, config.tile_size, config.stride_overlap);
                auto [mask, report] = stitch_full_mask(grid, predictor, reader);
                out.stitched = dice(mask, slide.truth);
            }
            return out;
        },
        [&](std::size_t i, SlideOutcome out) { outcomes[i] = out; });

    std::vector<DiceRow> control_rows, stitched_rows;
    for (std::size_t i = 0; i < config.slides.size(); ++i) {
        char unit[32];
        std::snprintf(unit, sizeof(unit), "slide%02zu", i);
        control_rows.push_back(DiceRow{unit, config.slides[i].group, outcomes[i].control});
        stitched_rows.push_back(DiceRow{unit, config.slides[i].group, outcomes[i].stitched});
    }

    ExperimentResult result;
    result.control = build_report(std::move(control_rows));
    result.stitched = build_report(std::move(stitched_rows));
    result.delta = compare_reports(result.control, result.stitched);

    double sum = 0.0;
    std::int64_t not_worse = 0;
    for (const auto& row : result.delta.rows) {
        sum += row.delta;
        if (row.delta >= 0.0) ++not_worse;
    }
    result.mean_delta = sum / static_cast<double>(result.delta.rows.size());
    result.frac_not_worse =
        static_cast<double>(not_worse) / static_cast<double>(result.delta.rows.size());
    for (const auto& out : outcomes) result.border_straddle_frac.push_back(out.straddle_frac);
    return result;
}

}  // namespace slidepipe
