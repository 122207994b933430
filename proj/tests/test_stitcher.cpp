#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "slidepipe/errors.hpp"
#include "slidepipe/stitcher.hpp"
#include "test_util.hpp"

using namespace slidepipe;

namespace {

// Dense double-precision oracle: sum every tile into a full buffer, then
// argmax per pixel (ties to the lowest class). Kept deliberately naive and
// independent of the banded implementation.
struct DenseOracle {
    RasterExtent extent;
    int classes;
    std::vector<double> sums;

    DenseOracle(RasterExtent e, int c)
        : extent(e), classes(c),
          sums(static_cast<std::size_t>(c) * static_cast<std::size_t>(e.area()), 0.0) {}

    void add(const TileSpec& tile, const ScoreMap& scores) {
        for (int c = 0; c < classes; ++c) {
            for (std::int64_t y = 0; y < scores.height; ++y) {
                for (std::int64_t x = 0; x < scores.width; ++x) {
                    const std::int64_t gy = tile.y + y;
                    const std::int64_t gx = tile.x + x;
                    if (gy >= extent.height || gx >= extent.width) continue;
                    sums[static_cast<std::size_t>(c) * static_cast<std::size_t>(extent.area()) +
                         static_cast<std::size_t>(gy * extent.width + gx)] +=
                        static_cast<double>(scores.at(c, y, x));
                }
            }
        }
    }

    double sum_at(int c, std::int64_t y, std::int64_t x) const {
        return sums[static_cast<std::size_t>(c) * static_cast<std::size_t>(extent.area()) +
                    static_cast<std::size_t>(y * extent.width + x)];
    }

    LabelMask argmax() const {
        LabelMask mask(extent.height, extent.width);
        for (std::int64_t y = 0; y < extent.height; ++y) {
            for (std::int64_t x = 0; x < extent.width; ++x) {
                int best = 0;
                for (int c = 1; c < classes; ++c) {
                    if (sum_at(c, y, x) > sum_at(best, y, x)) best = c;
                }
                mask.at(y, x) = static_cast<std::uint8_t>(best);
            }
        }
        return mask;
    }
};

// Feeds every grid tile with the supplied per-tile scores through the
// streaming accumulator, advancing as the row-major order allows.
std::pair<LabelMask, ScoreMap> stream_stitch(const TileGrid& grid,
                                             const std::vector<ScoreMap>& tile_scores) {
    MemoryMaskSink mask_sink(grid.extent);
    MemoryPlaneSink sum_sink(grid.extent, tile_scores.front().classes);
    StitchAccumulator::Options opts;
    opts.sum_sink = &sum_sink;
    StitchAccumulator acc(grid.extent, tile_scores.front().classes, &mask_sink, opts);
    for (std::size_t i = 0; i < grid.tiles.size(); ++i) {
        acc.advance(grid.tiles[i].y);
        const TileSpec& t = grid.tiles[i];
        const std::int64_t w = std::min(t.size, grid.extent.width - t.x);
        const std::int64_t h = std::min(t.size, grid.extent.height - t.y);
        if (w == t.size && h == t.size) {
            acc.accumulate(t, tile_scores[i]);
        } else {
            ScoreMap cropped(tile_scores[i].classes, h, w);
            for (int c = 0; c < cropped.classes; ++c)
                for (std::int64_t y = 0; y < h; ++y)
                    for (std::int64_t x = 0; x < w; ++x)
                        cropped.at(c, y, x) = tile_scores[i].at(c, y, x);
            acc.accumulate_block(t.x, t.y, cropped);
        }
    }
    acc.finish();
    return {mask_sink.take(), sum_sink.map()};
}

}  // namespace

TEST_CASE("overlapping contributions add up") {
    MemoryMaskSink sink({8, 8});
    MemoryPlaneSink sums({8, 8}, 2);
    StitchAccumulator::Options opts;
    opts.sum_sink = &sums;
    StitchAccumulator acc({8, 8}, 2, &sink, opts);

    ScoreMap tile(2, 8, 8);
    for (float& v : tile.plane(1)) v = 0.5f;
    acc.accumulate({0, 0, 8}, tile);
    acc.accumulate({0, 0, 8}, tile);
    acc.finish();

    CHECK(sums.map().at(1, 3, 3) == doctest::Approx(1.0f));
    CHECK(sums.map().at(0, 3, 3) == doctest::Approx(0.0f));
    CHECK(sink.mask().at(3, 3) == 1);
}

TEST_CASE("single tile stitches to its own argmax") {
    std::mt19937 rng(21);
    const ScoreMap tile = testutil::random_scores(rng, 3, 16, 16);
    MemoryMaskSink sink({16, 16});
    StitchAccumulator acc({16, 16}, 3, &sink);
    acc.accumulate({0, 0, 16}, tile);
    acc.finish();
    CHECK(sink.mask() == argmax_labels(tile));
}

TEST_CASE("feed contract violations") {
    MemoryMaskSink sink({64, 64});
    StitchAccumulator acc({64, 64}, 2, &sink);

    ScoreMap wrong(2, 8, 8);
    CHECK_THROWS_AS(acc.accumulate({0, 0, 16}, wrong), ShapeMismatch);

    ScoreMap three(3, 16, 16);
    CHECK_THROWS_AS(acc.accumulate({0, 0, 16}, three), ShapeMismatch);

    ScoreMap tile(2, 16, 16);
    CHECK_THROWS_AS(acc.accumulate({56, 0, 16}, tile), OutOfExtent);
    CHECK_THROWS_AS(acc.accumulate({-1, 0, 16}, tile), OutOfExtent);

    acc.accumulate({0, 16, 16}, tile);
    acc.advance(16);
    CHECK_THROWS_AS(acc.accumulate({0, 0, 16}, tile), OutOfBand);
}

TEST_CASE("advance is a no-op at or below the current origin") {
    MemoryMaskSink sink({32, 32});
    StitchAccumulator acc({32, 32}, 2, &sink);
    acc.advance(0);
    CHECK(acc.band_origin_row() == 0);
    acc.advance(10);
    CHECK(acc.band_origin_row() == 10);
    acc.advance(5);
    CHECK(acc.band_origin_row() == 10);
}

TEST_CASE("finishing finalizes the whole extent") {
    std::mt19937 rng(22);
    const TileGrid grid = make_grid({96, 96}, 32, 16);
    std::vector<ScoreMap> scores;
    for (std::size_t i = 0; i < grid.tiles.size(); ++i) {
        scores.push_back(testutil::random_scores(rng, 2, 32, 32));
    }

    MemoryMaskSink sink(grid.extent);
    StitchAccumulator acc(grid.extent, 2, &sink);
    for (std::size_t i = 0; i < grid.tiles.size(); ++i) {
        acc.advance(grid.tiles[i].y);
        acc.accumulate(grid.tiles[i], scores[i]);
    }
    const StitchReport report = acc.finish();
    CHECK(report.pixels_finalized == 96 * 96);
    CHECK(report.tiles_applied == grid.tiles.size());
    CHECK(report.max_contributors_seen == 4);
}

TEST_CASE("streaming equals the dense oracle on random grids") {
    std::mt19937 rng(23);
    std::uniform_int_distribution<std::int64_t> dim_dist(16, 160);
    for (int round = 0; round < 25; ++round) {
        const std::int64_t w = dim_dist(rng);
        const std::int64_t h = dim_dist(rng);
        const std::int64_t tile = (round % 3 == 0) ? 16 : (round % 3 == 1 ? 32 : 64);
        const std::int64_t stride = (round % 2 == 0) ? tile / 2 : tile;
        const int classes = (round % 2 == 0) ? 2 : 3;

        const TileGrid grid = make_grid({w, h}, tile, stride);
        std::vector<ScoreMap> scores;
        DenseOracle oracle(grid.extent, classes);
        for (const TileSpec& t : grid.tiles) {
            ScoreMap s = testutil::random_scores(rng, classes, tile, tile);
            oracle.add(t, s);
            scores.push_back(std::move(s));
        }

        auto [mask, sums] = stream_stitch(grid, scores);
        CHECK(mask == oracle.argmax());
        double worst_rel = 0.0;
        for (int c = 0; c < classes; ++c) {
            for (std::int64_t y = 0; y < h; ++y) {
                for (std::int64_t x = 0; x < w; ++x) {
                    const double a = sums.at(c, y, x);
                    const double b = oracle.sum_at(c, y, x);
                    const double rel = std::abs(a - b) / std::max(1.0, std::abs(b));
                    worst_rel = std::max(worst_rel, rel);
                }
            }
        }
        CHECK(worst_rel < 1e-4);
    }
}

TEST_CASE("any contract-respecting feed order gives the same mask") {
    std::mt19937 rng(24);
    const TileGrid grid = make_grid({128, 128}, 32, 16);
    std::vector<ScoreMap> scores;
    for (std::size_t i = 0; i < grid.tiles.size(); ++i) {
        scores.push_back(testutil::random_scores(rng, 2, 32, 32));
    }

    auto [mask_rowmajor, sums_rowmajor] = stream_stitch(grid, scores);

    // Shuffle tiles within each row band; rows stay ordered, so the
    // monotone contract still holds.
    TileGrid shuffled = grid;
    std::vector<std::size_t> index(grid.tiles.size());
    for (std::size_t i = 0; i < index.size(); ++i) index[i] = i;
    for (std::size_t start = 0; start < index.size();) {
        std::size_t end = start;
        while (end < index.size() && grid.tiles[index[end]].y == grid.tiles[index[start]].y) ++end;
        std::shuffle(index.begin() + static_cast<std::ptrdiff_t>(start),
                     index.begin() + static_cast<std::ptrdiff_t>(end), rng);
        start = end;
    }
    std::vector<ScoreMap> shuffled_scores;
    shuffled.tiles.clear();
    for (std::size_t i : index) {
        shuffled.tiles.push_back(grid.tiles[i]);
        shuffled_scores.push_back(scores[i]);
    }

    auto [mask_shuffled, sums_shuffled] = stream_stitch(shuffled, shuffled_scores);
    CHECK(mask_rowmajor == mask_shuffled);
    for (std::size_t i = 0; i < sums_rowmajor.scores.size(); ++i) {
        const double a = sums_rowmajor.scores[i];
        const double b = sums_shuffled.scores[i];
        CHECK(std::abs(a - b) <= 1e-4 * std::max(1.0, std::abs(b)));
    }
}

TEST_CASE("no overlap reduces to per-tile argmax concatenation") {
    std::mt19937 rng(25);
    const TileGrid grid = make_grid({96, 64}, 32, 32);
    std::vector<ScoreMap> scores;
    for (std::size_t i = 0; i < grid.tiles.size(); ++i) {
        scores.push_back(testutil::random_scores(rng, 3, 32, 32));
    }
    auto [mask, sums] = stream_stitch(grid, scores);

    for (std::size_t i = 0; i < grid.tiles.size(); ++i) {
        const LabelMask tile_mask = argmax_labels(scores[i]);
        const TileSpec& t = grid.tiles[i];
        for (std::int64_t y = 0; y < t.size; ++y) {
            for (std::int64_t x = 0; x < t.size; ++x) {
                CHECK(mask.at(t.y + y, t.x + x) == tile_mask.at(y, x));
            }
        }
    }
}

TEST_CASE("stitch_full with a constant predictor tiles its argmax everywhere") {
    ScoreMap tile(2, 32, 32);
    for (std::int64_t y = 0; y < 32; ++y) {
        for (std::int64_t x = 0; x < 32; ++x) {
            tile.at(0, y, x) = (x % 2 == 0) ? 1.0f : -1.0f;
            tile.at(1, y, x) = 0.0f;
        }
    }
    ConstantPredictor predictor(tile);

    PixelBlock image(96, 96, 3);
    MemoryRasterReader reader(image);
    const TileGrid grid = make_grid({96, 96}, 32, 32);
    auto [mask, report] = stitch_full_mask(grid, predictor, reader);

    const LabelMask tile_mask = argmax_labels(tile);
    for (std::int64_t y = 0; y < 96; ++y) {
        for (std::int64_t x = 0; x < 96; ++x) {
            CHECK(mask.at(y, x) == tile_mask.at(y % 32, x % 32));
        }
    }
    CHECK(report.tiles_applied == 9);
}

TEST_CASE("stitch_full matches the dense oracle through the full pipeline") {
    std::mt19937 rng(26);
    LabelMask truth = testutil::random_mask(rng, 128, 128, 0.3);
    ThresholdOraclePredictor predictor(truth, 2, 3.0, 99);

    PixelBlock image(128, 128, 3);
    MemoryRasterReader reader(image);
    const TileGrid grid = make_grid({128, 128}, 32, 16);

    DenseOracle oracle(grid.extent, 2);
    for (const TileSpec& t : grid.tiles) {
        const PixelBlock patch = reader.read_window(t.x, t.y, t.size, t.size);
        oracle.add(t, predictor.predict(patch, t));
    }

    auto [mask, report] = stitch_full_mask(grid, predictor, reader);
    CHECK(mask == oracle.argmax());
    CHECK(report.pixels_finalized == 128 * 128);
}

TEST_CASE("stitch_full reproduces exact truth with a clean oracle") {
    std::mt19937 rng(27);
    const LabelMask truth = testutil::random_mask(rng, 256, 256, 0.25);
    ThresholdOraclePredictor predictor(truth, 2, 0.0, 0);
    PixelBlock image(256, 256, 3);
    MemoryRasterReader reader(image);

    const TileGrid grid = make_grid({256, 256}, 64, 32);
    auto [mask, report] = stitch_full_mask(grid, predictor, reader);
    CHECK(mask == truth);
}

TEST_CASE("probability rows are the softmax of the accumulated sums") {
    std::mt19937 rng(36);
    const TileGrid grid = make_grid({64, 48}, 16, 8);
    std::vector<ScoreMap> scores;
    for (std::size_t i = 0; i < grid.tiles.size(); ++i) {
        scores.push_back(testutil::random_scores(rng, 3, 16, 16));
    }

    MemoryMaskSink mask_sink(grid.extent);
    MemoryPlaneSink prob_sink(grid.extent, 3);
    MemoryPlaneSink sum_sink(grid.extent, 3);
    StitchAccumulator::Options opts;
    opts.prob_sink = &prob_sink;
    opts.sum_sink = &sum_sink;
    StitchAccumulator acc(grid.extent, 3, &mask_sink, opts);
    for (std::size_t i = 0; i < grid.tiles.size(); ++i) {
        acc.advance(grid.tiles[i].y);
        acc.accumulate(grid.tiles[i], scores[i]);
    }
    acc.finish();

    const ProbMap expect = softmax_normalize(sum_sink.map());
    for (std::size_t i = 0; i < expect.values.size(); ++i) {
        CHECK(std::abs(prob_sink.map().scores[i] - expect.values[i]) < 1e-6f);
    }
    // Per-pixel distributions sum to one.
    for (std::int64_t y = 0; y < 48; ++y) {
        for (std::int64_t x = 0; x < 64; ++x) {
            double sum = 0.0;
            for (int c = 0; c < 3; ++c) sum += prob_sink.map().at(c, y, x);
            CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
        }
    }
    CHECK(mask_sink.mask() == argmax_labels(prob_sink.map()));
}

TEST_CASE("the kpis preset constants run through the full pipeline") {
    // Tile 2048 with stride 1024, on an extent that forces clamping on
    // both axes.
    ScoreMap tile(2, 2048, 2048);
    for (std::int64_t y = 0; y < 2048; ++y) {
        for (std::int64_t x = 0; x < 2048; ++x) {
            tile.at(1, y, x) = ((x / 64) % 2 == 0) ? 1.0f : -1.0f;
        }
    }
    ConstantPredictor predictor(tile);
    PixelBlock image(4096, 3000, 1);
    MemoryRasterReader reader(image);

    const TileGrid grid = make_grid({4096, 3000}, 2048, 1024);
    auto [mask, report] = stitch_full_mask(grid, predictor, reader);
    CHECK(report.pixels_finalized == 4096ull * 3000ull);
    CHECK(report.tiles_applied == grid.tiles.size());
    CHECK(report.peak_band_bytes <= band_bytes_bound(2, 2048, 1024, 4096));
    CHECK(report.max_contributors_seen >= 4);
}

TEST_CASE("stitch_full stays within the documented band bound") {
    std::mt19937 rng(28);
    const LabelMask truth = testutil::random_mask(rng, 512, 512, 0.2);
    ThresholdOraclePredictor predictor(truth, 2, 0.0, 0);
    PixelBlock image(512, 512, 3);
    MemoryRasterReader reader(image);

    const TileGrid grid = make_grid({512, 512}, 128, 64);
    auto [mask, report] = stitch_full_mask(grid, predictor, reader);
    CHECK(report.peak_band_bytes <= band_bytes_bound(2, 128, 64, 512));
    CHECK(report.peak_band_bytes > 0);
}

TEST_CASE("stitch_full is identical across worker counts") {
    std::mt19937 rng(29);
    const LabelMask truth = testutil::random_mask(rng, 160, 160, 0.4);
    BorderDegradedPredictor predictor(truth, 2, 0.125, 0.8, 7);
    PixelBlock image(160, 160, 3);
    MemoryRasterReader reader(image);
    const TileGrid grid = make_grid({160, 160}, 32, 16);

    StitchOptions one;
    one.workers = 1;
    StitchOptions four;
    four.workers = 4;
    auto [mask1, r1] = stitch_full_mask(grid, predictor, reader, one);
    auto [mask4, r4] = stitch_full_mask(grid, predictor, reader, four);
    CHECK(mask1 == mask4);
}

TEST_CASE("stitch_full handles rasters smaller than one tile") {
    std::mt19937 rng(30);
    const LabelMask truth = testutil::random_mask(rng, 20, 28, 0.5);
    ThresholdOraclePredictor predictor(truth, 2, 0.0, 0);
    PixelBlock image(28, 20, 3);
    MemoryRasterReader reader(image);

    const TileGrid grid = make_grid({28, 20}, 32, 16);
    REQUIRE(grid.tiles.size() == 1);
    auto [mask, report] = stitch_full_mask(grid, predictor, reader);
    CHECK(mask == truth);
    CHECK(report.pixels_finalized == 28 * 20);
}

TEST_CASE("stitch_full attaches the offending tile to predictor failures") {
    struct FailingPredictor : Predictor {
        int classes() const override { return 2; }
        ScoreMap predict(const PixelBlock&, const TileSpec& where) override {
            if (where.y >= 64) throw RemoteError("backend fell over");
            return ScoreMap(2, where.size, where.size);
        }
    } predictor;

    PixelBlock image(96, 96, 3);
    MemoryRasterReader reader(image);
    const TileGrid grid = make_grid({96, 96}, 32, 32);
    MemoryMaskSink sink(grid.extent);
    try {
        stitch_full(grid, predictor, reader, sink);
        FAIL("expected an error");
    } catch (const Error& e) {
        const std::string msg = e.what();
        CHECK(msg.find("tile (0,64)") != std::string::npos);
        CHECK(msg.find("backend fell over") != std::string::npos);
    }
}

TEST_CASE("reassembling a single patch is its own argmax") {
    std::mt19937 rng(31);
    ScoredPatch patch;
    patch.record.wsi_id = "w";
    patch.record.x = 100;
    patch.record.y = 200;
    patch.record.size = 24;
    patch.scores = testutil::random_scores(rng, 2, 24, 24);

    const LabelMask mask = reassemble_patches({patch}, patch.record);
    CHECK(mask == argmax_labels(patch.scores));
}

TEST_CASE("equal overlapping logits do not change the cropped mask") {
    std::mt19937 rng(32);
    ScoredPatch a;
    a.record.wsi_id = "w";
    a.record.x = 0;
    a.record.y = 0;
    a.record.size = 32;
    a.scores = testutil::random_scores(rng, 2, 32, 32);

    // Neighbour shifted half a patch with scores equal on the overlap.
    ScoredPatch b = a;
    b.record.x = 16;
    for (int c = 0; c < 2; ++c) {
        for (std::int64_t y = 0; y < 32; ++y) {
            for (std::int64_t x = 0; x < 32; ++x) {
                b.scores.at(c, y, x) = (x < 16) ? a.scores.at(c, y, x + 16)
                                                : b.scores.at(c, y, x);
            }
        }
    }

    const LabelMask alone = argmax_labels(a.scores);
    const LabelMask stitched = reassemble_patches({a, b}, a.record);
    // On the overlap both contribute identical logits; the sum rescales but
    // the argmax stays put.
    CHECK(stitched == alone);
}

TEST_CASE("random patch sets match a dense bounding-box oracle") {
    std::mt19937 rng(33);
    for (int round = 0; round < 10; ++round) {
        std::uniform_int_distribution<std::int64_t> origin(0, 300);
        std::uniform_int_distribution<int> count_dist(2, 7);
        const std::int64_t size = 32;
        const int n = count_dist(rng);

        std::vector<ScoredPatch> patches;
        for (int i = 0; i < n; ++i) {
            ScoredPatch p;
            p.record.wsi_id = "w";
            p.record.x = origin(rng);
            p.record.y = origin(rng);
            p.record.size = size;
            p.scores = testutil::random_scores(rng, 2, size, size);
            patches.push_back(std::move(p));
        }

        std::int64_t min_x = patches[0].record.x, min_y = patches[0].record.y;
        std::int64_t max_x = 0, max_y = 0;
        for (const auto& p : patches) {
            min_x = std::min(min_x, p.record.x);
            min_y = std::min(min_y, p.record.y);
            max_x = std::max(max_x, p.record.x + size);
            max_y = std::max(max_y, p.record.y + size);
        }
        DenseOracle oracle({max_x - min_x, max_y - min_y}, 2);
        for (const auto& p : patches) {
            oracle.add({p.record.x - min_x, p.record.y - min_y, size}, p.scores);
        }
        const LabelMask dense = oracle.argmax();

        const std::size_t target = static_cast<std::size_t>(round) % patches.size();
        const LabelMask got = reassemble_patches(patches, patches[target].record);
        for (std::int64_t y = 0; y < size; ++y) {
            for (std::int64_t x = 0; x < size; ++x) {
                CHECK(got.at(y, x) == dense.at(patches[target].record.y - min_y + y,
                                               patches[target].record.x - min_x + x));
            }
        }
    }
}

TEST_CASE("reassembly rejects mixed slides and missing targets") {
    std::mt19937 rng(34);
    ScoredPatch a;
    a.record.wsi_id = "w1";
    a.record.size = 8;
    a.scores = testutil::random_scores(rng, 2, 8, 8);
    ScoredPatch b = a;
    b.record.wsi_id = "w2";
    CHECK_THROWS_AS(reassemble_patches({a, b}, a.record), MixedSlide);

    PatchRecord other = a.record;
    other.x = 999;
    CHECK_THROWS_AS(reassemble_patches({a}, other), MissingTarget);
}
