#include <doctest.h>

#include <fstream>
#include <set>

#include "slidepipe/errors.hpp"
#include "slidepipe/ingest.hpp"
#include "slidepipe/raster_io.hpp"
#include "slidepipe/synth.hpp"
#include "test_util.hpp"

using namespace slidepipe;

namespace {

// Writes a synthetic slide pair and returns the manifest entry.
ManifestEntry write_slide(const std::filesystem::path& dir, const std::string& wsi_id,
                          const std::string& group, const SynthSlideSpec& spec) {
    const SynthSlide slide = generate_slide(spec);
    ManifestEntry entry;
    entry.wsi_id = wsi_id;
    entry.group = group;
    entry.image_path = dir / (wsi_id + ".png");
    entry.truth_path = dir / (wsi_id + "_truth.png");
    entry.extent = spec.extent;
    write_image(entry.image_path, slide.image);
    write_mask(entry.truth_path, slide.truth);
    return entry;
}

}  // namespace

TEST_CASE("manifest round-trips through JSON") {
    testutil::TempDir dir("manifest");
    DatasetManifest manifest;
    manifest.patch_size = 64;
    manifest.convention = "canonical";
    ManifestEntry e;
    e.wsi_id = "w1";
    e.group = "g1";
    e.image_path = dir.path() / "w1.png";
    e.truth_path = dir.path() / "w1_truth.png";
    e.exclude_wsi_eval = true;
    e.extent = {100, 80};
    manifest.entries.push_back(e);

    save_manifest(manifest, dir.path() / "m.json");
    const DatasetManifest back = load_manifest(dir.path() / "m.json");
    REQUIRE(back.entries.size() == 1);
    CHECK(back.patch_size == 64);
    CHECK(back.entries[0].wsi_id == "w1");
    CHECK(back.entries[0].group == "g1");
    CHECK(back.entries[0].exclude_wsi_eval);
    CHECK(back.entries[0].extent == RasterExtent{100, 80});
    CHECK(back.entries[0].image_path == e.image_path);
}

TEST_CASE("manifests reject duplicate slide ids") {
    testutil::TempDir dir("dup");
    std::ofstream(dir.path() / "m.json")
        << R"({"patch_size": 64, "slides": [
             {"wsi_id": "a", "image": "a.png", "truth": "t.png"},
             {"wsi_id": "a", "image": "b.png", "truth": "t2.png"}]})";
    CHECK_THROWS_AS(load_manifest(dir.path() / "m.json"), ConfigError);
}

TEST_CASE("an all-background slide emits no patches") {
    testutil::TempDir dir("nobg");
    SynthSlideSpec spec;
    spec.extent = {128, 128};
    spec.object_count = 0;
    spec.seed = 1;

    DatasetManifest manifest;
    manifest.patch_size = 64;
    manifest.entries.push_back(write_slide(dir.path(), "w1", "g", spec));

    const ExtractionResult result =
        extract_annotated_patches(manifest, dir.path() / "out");
    CHECK(result.records.empty());
    CHECK(result.failures.empty());
    CHECK(result.tiles_scanned == 4);
}

TEST_CASE("one object inside one tile keeps exactly that patch") {
    testutil::TempDir dir("onetile");

    // Hand-built: a small blob inside the top-left 64x64 tile.
    PixelBlock image(128, 128, 3);
    LabelMask truth(128, 128);
    for (std::int64_t y = 10; y < 20; ++y) {
        for (std::int64_t x = 10; x < 20; ++x) truth.at(y, x) = 1;
    }
    write_image(dir.path() / "w1.png", image);
    write_mask(dir.path() / "w1_truth.png", truth);

    DatasetManifest manifest;
    manifest.patch_size = 64;
    ManifestEntry e;
    e.wsi_id = "w1";
    e.group = "g";
    e.image_path = dir.path() / "w1.png";
    e.truth_path = dir.path() / "w1_truth.png";
    manifest.entries.push_back(e);

    const ExtractionResult result =
        extract_annotated_patches(manifest, dir.path() / "out");
    REQUIRE(result.records.size() == 1);
    CHECK(result.records[0].x == 0);
    CHECK(result.records[0].y == 0);
    CHECK(result.records[0].size == 64);
    CHECK(std::filesystem::exists(dir.path() / "out/images/w1__x0_y0_s64.png"));
    CHECK(std::filesystem::exists(dir.path() / "out/masks/w1__x0_y0_s64.png"));
}

TEST_CASE("kept patches match a brute-force window scan") {
    testutil::TempDir dir("brute");
    SynthSlideSpec spec;
    spec.extent = {256, 192};
    spec.object_count = 7;
    spec.radius_min = 6;
    spec.radius_max = 18;
    spec.seed = 21;
    const SynthSlide slide = generate_slide(spec);

    DatasetManifest manifest;
    manifest.patch_size = 64;
    manifest.entries.push_back(write_slide(dir.path(), "w1", "g", spec));

    const ExtractionResult result =
        extract_annotated_patches(manifest, dir.path() / "out");

    // Brute force over the same clamped grid.
    std::set<std::pair<std::int64_t, std::int64_t>> expect;
    const TileGrid grid = make_grid(spec.extent, 64, 64);
    for (const TileSpec& t : grid.tiles) {
        bool any = false;
        for (std::int64_t y = t.y; y < std::min<std::int64_t>(t.y + 64, 192) && !any; ++y) {
            for (std::int64_t x = t.x; x < std::min<std::int64_t>(t.x + 64, 256) && !any; ++x) {
                any = slide.truth.at(y, x) != 0;
            }
        }
        if (any) expect.insert({t.x, t.y});
    }

    std::set<std::pair<std::int64_t, std::int64_t>> got;
    for (const auto& rec : result.records) got.insert({rec.x, rec.y});
    CHECK(got == expect);

    // Emitted filenames parse back to their records, and every emitted
    // truth window really contains foreground.
    for (const auto& rec : result.records) {
        const PatchRecord parsed =
            parse_patch_filename(rec.payload_path.filename().string(), "canonical");
        CHECK(parsed.x == rec.x);
        CHECK(parsed.y == rec.y);
        const LabelMask patch_truth = load_mask(
            dir.path() / "out/masks" / rec.payload_path.filename());
        std::int64_t fg = 0;
        for (auto v : patch_truth.labels) fg += v != 0;
        CHECK(fg >= 1);
    }
}

TEST_CASE("unreadable slides are skipped and reported") {
    testutil::TempDir dir("skip");
    SynthSlideSpec spec;
    spec.extent = {128, 128};
    spec.object_count = 3;
    spec.radius_min = 8;
    spec.radius_max = 16;
    spec.seed = 4;

    DatasetManifest manifest;
    manifest.patch_size = 64;
    manifest.entries.push_back(write_slide(dir.path(), "good", "g", spec));
    ManifestEntry broken;
    broken.wsi_id = "broken";
    broken.group = "g";
    broken.image_path = dir.path() / "missing.png";
    broken.truth_path = dir.path() / "missing_truth.png";
    manifest.entries.push_back(broken);

    const ExtractionResult result =
        extract_annotated_patches(manifest, dir.path() / "out");
    CHECK(!result.records.empty());
    REQUIRE(result.failures.size() == 1);
    CHECK(result.failures[0].wsi_id == "broken");
}

TEST_CASE("extraction is deterministic") {
    testutil::TempDir dir("det");
    SynthSlideSpec spec;
    spec.extent = {192, 192};
    spec.object_count = 5;
    spec.radius_min = 8;
    spec.radius_max = 20;
    spec.seed = 12;

    DatasetManifest manifest;
    manifest.patch_size = 64;
    manifest.entries.push_back(write_slide(dir.path(), "w1", "g", spec));

    const ExtractionResult a = extract_annotated_patches(manifest, dir.path() / "out_a");
    const ExtractionResult b = extract_annotated_patches(manifest, dir.path() / "out_b");
    REQUIRE(a.records.size() == b.records.size());
    for (std::size_t i = 0; i < a.records.size(); ++i) {
        CHECK(a.records[i] == b.records[i]);
    }
}

TEST_CASE("split_by_group partitions by the manifest") {
    DatasetManifest manifest;
    manifest.patch_size = 64;
    for (int i = 0; i < 3; ++i) {
        ManifestEntry e;
        e.wsi_id = "w" + std::to_string(i);
        e.group = i == 0 ? "g1" : "g2";
        manifest.entries.push_back(e);
    }

    std::vector<PatchRecord> records;
    for (int i = 0; i < 100; ++i) {
        PatchRecord r;
        r.wsi_id = "w" + std::to_string(i % 3);
        r.x = i;
        r.y = i;
        r.size = 64;
        records.push_back(r);
    }

    const auto partition = split_by_group(records, manifest);
    REQUIRE(partition.size() == 2);
    CHECK(partition.at("g1").size() == 34);
    CHECK(partition.at("g2").size() == 66);

    std::size_t total = 0;
    for (const auto& [group, recs] : partition) total += recs.size();
    CHECK(total == 100);
}

TEST_CASE("split_by_group on a single group and on empty input") {
    DatasetManifest manifest;
    manifest.patch_size = 64;
    ManifestEntry e;
    e.wsi_id = "w";
    e.group = "only";
    manifest.entries.push_back(e);

    std::vector<PatchRecord> records(5);
    for (auto& r : records) {
        r.wsi_id = "w";
        r.size = 64;
    }
    const auto partition = split_by_group(records, manifest);
    REQUIRE(partition.size() == 1);
    CHECK(partition.at("only").size() == 5);

    CHECK(split_by_group({}, manifest).empty());
}

TEST_CASE("split_by_group rejects unknown slides") {
    DatasetManifest manifest;
    manifest.patch_size = 64;
    PatchRecord r;
    r.wsi_id = "ghost";
    r.size = 64;
    CHECK_THROWS_AS(split_by_group({r}, manifest), UnknownSlide);
}
