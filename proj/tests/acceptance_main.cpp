// Acceptance suite: one pass/fail line per criterion, nonzero exit when any
// fails. Criterion 4 and 8 shell out to the CLI binary (--cli <path>);
// everything else runs in-process against the library.

#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "slidepipe/errors.hpp"
#include "slidepipe/eval.hpp"
#include "slidepipe/predictor.hpp"
#include "slidepipe/raster_io.hpp"
#include "slidepipe/remote.hpp"
#include "slidepipe/scoremap.hpp"
#include "slidepipe/stitcher.hpp"
#include "slidepipe/synth.hpp"

using namespace slidepipe;
namespace fs = std::filesystem;

namespace {

struct Criterion {
    int id;
    std::string name;
    double limit_seconds;
    std::function<void()> run;  // throws on failure
};

struct Failure : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void require(bool ok, const std::string& what) {
    if (!ok) throw Failure(what);
}

std::string g_cli_path;
fs::path g_workdir;

int run_command(const std::string& command, std::string* output = nullptr) {
    FILE* pipe = popen((command + " 2>&1").c_str(), "r");
    if (pipe == nullptr) throw Failure("popen failed for: " + command);
    std::string captured;
    char buffer[4096];
    while (std::fgets(buffer, sizeof(buffer), pipe) != nullptr) captured += buffer;
    const int status = pclose(pipe);
    if (output != nullptr) *output = captured;
    if (WIFEXITED(status)) return WEXITSTATUS(status);
    return -1;
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    require(static_cast<bool>(in), "cannot open " + path.string());
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

ScoreMap random_scores(std::mt19937& rng, int classes, std::int64_t h, std::int64_t w) {
    std::uniform_real_distribution<float> dist(-6.0f, 6.0f);
    ScoreMap map(classes, h, w);
    for (float& v : map.scores) v = dist(rng);
    return map;
}

// Dense double-precision reference: full-raster sum, then argmax.
struct DenseOracle {
    RasterExtent extent;
    int classes;
    std::vector<double> sums;

    DenseOracle(RasterExtent e, int c)
        : extent(e), classes(c),
          sums(static_cast<std::size_t>(c) * static_cast<std::size_t>(e.area()), 0.0) {}

    void add(std::int64_t tx, std::int64_t ty, const ScoreMap& scores) {
        for (int c = 0; c < classes; ++c) {
            for (std::int64_t y = 0; y < scores.height; ++y) {
                for (std::int64_t x = 0; x < scores.width; ++x) {
                    sums[static_cast<std::size_t>(c) * static_cast<std::size_t>(extent.area()) +
                         static_cast<std::size_t>((ty + y) * extent.width + tx + x)] +=
                        static_cast<double>(scores.at(c, y, x));
                }
            }
        }
    }

    double at(int c, std::int64_t y, std::int64_t x) const {
        return sums[static_cast<std::size_t>(c) * static_cast<std::size_t>(extent.area()) +
                    static_cast<std::size_t>(y * extent.width + x)];
    }

    LabelMask argmax() const {
        LabelMask mask(extent.height, extent.width);
        for (std::int64_t y = 0; y < extent.height; ++y) {
            for (std::int64_t x = 0; x < extent.width; ++x) {
                int best = 0;
                for (int c = 1; c < classes; ++c) {
                    if (at(c, y, x) > at(best, y, x)) best = c;
                }
                mask.at(y, x) = static_cast<std::uint8_t>(best);
            }
        }
        return mask;
    }
};

// --------------------------------------------------------------------------
// 1. Streaming stitcher equals the dense sum-softmax-argmax oracle.

void criterion_stitch_equivalence() {
    std::mt19937 rng(20240801);
    std::uniform_int_distribution<std::int64_t> dim_dist(8, 512);
    const std::int64_t tiles[] = {16, 32, 64};
    int cases = 0;

    for (int round = 0; round < 200; ++round) {
        const std::int64_t tile = tiles[round % 3];
        const std::int64_t stride =
            (round % 9) < 3 ? tile : ((round % 9) < 6 ? tile / 2 : tile / 4);
        const int classes = (round % 2 == 0) ? 2 : 3;
        const RasterExtent extent{dim_dist(rng), dim_dist(rng)};

        const TileGrid grid = make_grid(extent, tile, stride);
        DenseOracle oracle(extent, classes);

        MemoryMaskSink mask_sink(extent);
        MemoryPlaneSink sum_sink(extent, classes);
        StitchAccumulator::Options opts;
        opts.sum_sink = &sum_sink;
        StitchAccumulator acc(extent, classes, &mask_sink, opts);

        for (const TileSpec& t : grid.tiles) {
            ScoreMap scores = random_scores(rng, classes, tile, tile);
            const std::int64_t w = std::min(tile, extent.width - t.x);
            const std::int64_t h = std::min(tile, extent.height - t.y);
            acc.advance(t.y);
            if (w == tile && h == tile) {
                oracle.add(t.x, t.y, scores);
                acc.accumulate(t, scores);
            } else {
                ScoreMap cropped(classes, h, w);
                for (int c = 0; c < classes; ++c)
                    for (std::int64_t y = 0; y < h; ++y)
                        for (std::int64_t x = 0; x < w; ++x)
                            cropped.at(c, y, x) = scores.at(c, y, x);
                oracle.add(t.x, t.y, cropped);
                acc.accumulate_block(t.x, t.y, cropped);
            }
        }
        const StitchReport report = acc.finish();
        require(report.pixels_finalized ==
                    static_cast<std::uint64_t>(extent.width) *
                        static_cast<std::uint64_t>(extent.height),
                "incomplete finalization");

        const LabelMask expect = oracle.argmax();
        require(mask_sink.mask() == expect, "mask mismatch vs dense oracle");

        for (int c = 0; c < classes; ++c) {
            for (std::int64_t y = 0; y < extent.height; ++y) {
                for (std::int64_t x = 0; x < extent.width; ++x) {
                    const double a = sum_sink.map().at(c, y, x);
                    const double b = oracle.at(c, y, x);
                    require(std::abs(a - b) <= 1e-4 * std::max(1.0, std::abs(b)),
                            "sum tolerance exceeded");
                }
            }
        }
        ++cases;
    }
    require(cases >= 200, "fewer than 200 cases");
}

// --------------------------------------------------------------------------
// 2. stride == tile: stitched mask equals per-tile argmax concatenation.

void criterion_degenerate_identity() {
    std::mt19937 rng(20240802);
    std::uniform_int_distribution<std::int64_t> mult(1, 12);
    const std::int64_t tiles[] = {16, 32, 64};

    for (int round = 0; round < 50; ++round) {
        const std::int64_t tile = tiles[round % 3];
        const int classes = (round % 2 == 0) ? 2 : 3;
        // Exact multiples keep the grid overlap-free.
        const RasterExtent extent{tile * mult(rng), tile * mult(rng)};
        const TileGrid grid = make_grid(extent, tile, tile);

        MemoryMaskSink sink(extent);
        StitchAccumulator acc(extent, classes, &sink);
        LabelMask concat(extent.height, extent.width);
        for (const TileSpec& t : grid.tiles) {
            const ScoreMap scores = random_scores(rng, classes, tile, tile);
            const LabelMask tile_mask = argmax_labels(scores);
            for (std::int64_t y = 0; y < tile; ++y)
                for (std::int64_t x = 0; x < tile; ++x)
                    concat.at(t.y + y, t.x + x) = tile_mask.at(y, x);
            acc.advance(t.y);
            acc.accumulate(t, scores);
        }
        acc.finish();
        require(sink.mask() == concat, "degenerate identity violated");
    }
}

// --------------------------------------------------------------------------
// 3. argmax(softmax(sum)) == argmax(sum) == argmax(mean), 1000 pixels.

void criterion_argmax_invariance() {
    std::mt19937 rng(20240803);
    std::uniform_int_distribution<int> class_dist(2, 5);
    std::uniform_int_distribution<int> contrib_dist(1, 6);
    std::uniform_real_distribution<float> score_dist(-8.0f, 8.0f);

    for (int pixel = 0; pixel < 1000; ++pixel) {
        const int classes = class_dist(rng);
        const int contributors = contrib_dist(rng);
        ScoreMap sum(classes, 1, 1);
        for (int k = 0; k < contributors; ++k) {
            for (int c = 0; c < classes; ++c) sum.at(c, 0, 0) += score_dist(rng);
        }
        ScoreMap mean = sum;
        for (float& v : mean.scores) v /= static_cast<float>(contributors);

        const LabelMask a = argmax_labels(softmax_normalize(sum));
        const LabelMask b = argmax_labels(sum);
        const LabelMask c = argmax_labels(mean);
        require(a.labels == b.labels && b.labels == c.labels, "argmax invariance violated");
    }
}

// --------------------------------------------------------------------------
// 4. synth --preset paper-desk: positive mean delta, >= 90% slides not worse.

void criterion_direction() {
    std::string output;
    const int code = run_command(g_cli_path + " synth --preset paper-desk --workers 2 --out " +
                                     (g_workdir / "synth").string(),
                                 &output);
    require(code == 0, "synth exited with code " + std::to_string(code) + "\n" + output);
    require(output.find("direction PASS") != std::string::npos,
            "direction line missing or FAIL:\n" + output);
}

// --------------------------------------------------------------------------
// 5. Dice vs a per-pixel counting oracle, plus edge conventions.

void criterion_dice_oracle() {
    std::mt19937 rng(20240805);
    std::uniform_int_distribution<std::int64_t> dim_dist(1, 48);
    std::uniform_real_distribution<double> fg_dist(0.0, 1.0);

    for (int round = 0; round < 500; ++round) {
        const std::int64_t h = dim_dist(rng);
        const std::int64_t w = dim_dist(rng);
        const double fg = fg_dist(rng);
        LabelMask a(h, w), b(h, w);
        std::bernoulli_distribution pick(fg);
        for (auto& v : a.labels) v = pick(rng) ? 1 : 0;
        for (auto& v : b.labels) v = pick(rng) ? 1 : 0;

        const DiceScore s = dice(a, b);
        std::int64_t inter = 0, pa = 0, ta = 0;
        for (std::size_t i = 0; i < a.labels.size(); ++i) {
            inter += (a.labels[i] != 0 && b.labels[i] != 0);
            pa += a.labels[i] != 0;
            ta += b.labels[i] != 0;
        }
        require(s.intersection == inter && s.pred_area == pa && s.truth_area == ta,
                "dice counts mismatch");
        const double expect = (pa + ta) > 0 ? 2.0 * static_cast<double>(inter) /
                                                  static_cast<double>(pa + ta)
                                            : 1.0;
        require(s.value == expect, "dice value mismatch");
    }

    LabelMask empty(8, 8);
    LabelMask full(8, 8);
    for (auto& v : full.labels) v = 1;
    require(dice(empty, empty).value == 1.0, "empty/empty must be 1");
    require(dice(empty, full).value == 0.0, "empty/non-empty must be 0");
    require(dice(full, empty).value == 0.0, "non-empty/empty must be 0");
}

// --------------------------------------------------------------------------
// 6. 16384x16384 slide, tile 1024, stride 512, C=2: band memory bounded.

// Streams dice counting without holding the output mask.
class DiceCountingSink final : public MaskRowSink {
public:
    explicit DiceCountingSink(const LabelMask& truth) : truth_(&truth) {}

    void accept_rows(std::int64_t row_start, const LabelMask& rows) override {
        for (std::int64_t r = 0; r < rows.height; ++r) {
            for (std::int64_t x = 0; x < rows.width; ++x) {
                const bool p = rows.at(r, x) != 0;
                const bool t = truth_->at(row_start + r, x) != 0;
                inter_ += p && t;
                pred_ += p;
                truth_area_ += t;
            }
        }
    }

    double dice_value() const {
        return (pred_ + truth_area_) > 0
                   ? 2.0 * static_cast<double>(inter_) / static_cast<double>(pred_ + truth_area_)
                   : 1.0;
    }

private:
    const LabelMask* truth_;
    std::int64_t inter_ = 0, pred_ = 0, truth_area_ = 0;
};

void criterion_memory_bound() {
    SynthSlideSpec spec;
    spec.extent = {16384, 16384};
    spec.object_count = 220;
    spec.radius_min = 80;
    spec.radius_max = 420;
    spec.seed = 160384;
    const LabelMask truth = generate_truth(spec);

    SynthSlideReader reader(truth, spec.seed);
    ThresholdOraclePredictor predictor(truth, 2, 0.0, 0);
    const TileGrid grid = make_grid(spec.extent, 1024, 512);

    DiceCountingSink sink(truth);
    const StitchReport report = stitch_full(grid, predictor, reader, sink);

    constexpr std::uint64_t kLimit = 400ull * 1024 * 1024;
    require(report.peak_band_bytes < kLimit,
            "band used " + std::to_string(report.peak_band_bytes) + " bytes");
    require(report.peak_band_bytes <= band_bytes_bound(2, 1024, 512, 16384),
            "band exceeded the documented bound");
    require(report.pixels_finalized == 16384ull * 16384ull, "incomplete finalization");
    require(sink.dice_value() == 1.0, "clean oracle must reproduce truth exactly");
}

// --------------------------------------------------------------------------
// 7. Wire protocol: served scores byte-identical; fault handling.

void criterion_protocol() {
    std::mt19937 rng(20240807);
    std::uniform_int_distribution<int> byte_dist(0, 255);

    {
        PixelThresholdPredictor local(2, 128);
        PixelThresholdPredictor served(2, 128);
        PredictorServer server(served);
        RemotePredictor client(server.endpoint());
        for (int i = 0; i < 50; ++i) {
            const std::int64_t size = 1 + (i * 11) % 48;
            PixelBlock patch(size, size, 3);
            for (auto& v : patch.pixels) v = static_cast<std::uint8_t>(byte_dist(rng));
            const TileSpec where{0, 0, size};
            const ScoreMap a = local.predict(patch, where);
            const ScoreMap b = client.predict(patch, where);
            require(a.scores.size() == b.scores.size() &&
                        std::memcmp(a.scores.data(), b.scores.data(), a.scores.size() * 4) == 0,
                    "served scores not byte-identical");
        }
    }

    {
        // Out-of-order delivery: reversed batches of 8 must still associate.
        PixelThresholdPredictor local(2, 128);
        PixelThresholdPredictor served(2, 128);
        PredictorServer::Options opts;
        opts.shuffle_window = 8;
        PredictorServer server(served, opts);
        RemotePredictor client(server.endpoint());

        std::vector<PixelBlock> patches;
        for (int i = 0; i < 8; ++i) {
            PixelBlock patch(16, 16, 3);
            for (auto& v : patch.pixels) v = static_cast<std::uint8_t>(byte_dist(rng));
            patches.push_back(std::move(patch));
        }
        std::vector<ScoreMap> results(8);
        std::vector<std::thread> threads;
        for (int i = 0; i < 8; ++i) {
            threads.emplace_back([&, i] {
                results[static_cast<std::size_t>(i)] =
                    client.predict(patches[static_cast<std::size_t>(i)], {0, 0, 16});
            });
        }
        for (auto& t : threads) t.join();
        for (int i = 0; i < 8; ++i) {
            const ScoreMap expect =
                local.predict(patches[static_cast<std::size_t>(i)], {0, 0, 16});
            require(results[static_cast<std::size_t>(i)].scores == expect.scores,
                    "out-of-order response misassociated");
        }
    }

    {
        // Corrupted checksum: ProtocolError, connection unusable afterwards.
        PixelThresholdPredictor served(2, 128);
        PredictorServer::Options opts;
        opts.corrupt_crc_every = 2;
        PredictorServer server(served, opts);
        RemotePredictor client(server.endpoint());

        PixelBlock patch(8, 8, 3);
        client.predict(patch, {0, 0, 8});
        bool threw = false;
        try {
            client.predict(patch, {0, 0, 8});
        } catch (const ProtocolError&) {
            threw = true;
        }
        require(threw, "corrupted checksum not detected");
        threw = false;
        try {
            client.predict(patch, {0, 0, 8});
        } catch (const ProtocolError&) {
            threw = true;
        }
        require(threw, "connection usable after a protocol error");
    }
}

// --------------------------------------------------------------------------
// 8. infer is byte-identical across worker counts {1, 4, 16}.

void criterion_determinism() {
    SynthSlideSpec spec;
    spec.extent = {1024, 1024};
    spec.object_count = 14;
    spec.radius_min = 20;
    spec.radius_max = 60;
    spec.seed = 8080;
    const SynthSlide slide = generate_slide(spec);
    const fs::path slide_path = g_workdir / "det_slide.png";
    write_image(slide_path, slide.image);

    std::vector<std::string> masks;
    for (int workers : {1, 4, 16}) {
        const fs::path out = g_workdir / ("det_out_w" + std::to_string(workers));
        std::string output;
        const int code =
            run_command(g_cli_path + " infer --image " + slide_path.string() + " --out " +
                            out.string() + " --tile 128 --stride 64 --predictor pixel" +
                            " --workers " + std::to_string(workers),
                        &output);
        require(code == 0, "infer (workers " + std::to_string(workers) + ") exited " +
                               std::to_string(code) + "\n" + output);
        masks.push_back(read_file(out / "det_slide_mask.png"));
    }
    require(masks[0] == masks[1] && masks[1] == masks[2],
            "mask files differ across worker counts");
    require(!masks[0].empty(), "empty mask output");
}

}  // namespace

int main(int argc, char** argv) {
    for (int i = 1; i < argc; ++i) {
        const std::string arg = argv[i];
        if (arg == "--cli" && i + 1 < argc) g_cli_path = argv[++i];
        if (arg == "--workdir" && i + 1 < argc) g_workdir = argv[++i];
    }
    if (g_workdir.empty()) {
        g_workdir = fs::temp_directory_path() / ("slidepipe_acceptance_" +
                                                 std::to_string(::getpid()));
    }
    fs::create_directories(g_workdir);

    std::vector<Criterion> criteria = {
        {1, "stitch-equivalence oracle (200 randomized cases)", 60.0, criterion_stitch_equivalence},
        {2, "degenerate identity at stride = tile (50 cases)", 10.0, criterion_degenerate_identity},
        {3, "argmax invariance of sum/softmax/mean (1000 pixels)", 5.0, criterion_argmax_invariance},
        {4, "synthetic border-recovery direction (paper-desk preset)", 120.0, criterion_direction},
        {5, "dice counting oracle (500 pairs + edge conventions)", 5.0, criterion_dice_oracle},
        {6, "16384^2 streaming stitch stays under the band memory bound", 300.0,
         criterion_memory_bound},
        {7, "external predictor protocol conformance", 30.0, criterion_protocol},
        {8, "infer determinism across worker counts {1,4,16}", 600.0, criterion_determinism},
    };

    if (g_cli_path.empty()) {
        std::cerr << "usage: slidepipe_acceptance --cli <path-to-slidepipe> [--workdir <dir>]\n";
        return 2;
    }

    int failures = 0;
    for (const Criterion& criterion : criteria) {
        const auto start = std::chrono::steady_clock::now();
        std::string error;
        try {
            criterion.run();
        } catch (const std::exception& e) {
            error = e.what();
        }
        const double elapsed =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

        bool ok = error.empty();
        if (ok && elapsed > criterion.limit_seconds) {
            ok = false;
            error = "exceeded the runtime limit";
        }
        std::printf("[%s] criterion %d: %s (%.1fs, limit %.0fs)%s%s\n", ok ? "PASS" : "FAIL",
                    criterion.id, criterion.name.c_str(), elapsed, criterion.limit_seconds,
                    ok ? "" : " -- ", ok ? "" : error.c_str());
        std::fflush(stdout);
        if (!ok) ++failures;
    }

    std::error_code ec;
    fs::remove_all(g_workdir, ec);

    if (failures > 0) {
        std::printf("%d of %zu criteria FAILED\n", failures, criteria.size());
        return 1;
    }
    std::printf("all %zu criteria passed\n", criteria.size());
    return 0;
}
