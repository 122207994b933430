#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "slidepipe/geometry.hpp"
#include "slidepipe/patch_codec.hpp"

namespace slidepipe {

struct ManifestEntry {
    std::string wsi_id;
    std::string group;
    std::filesystem::path image_path;
    std::filesystem::path truth_path;
    bool exclude_wsi_eval = false;
    RasterExtent extent;  // filled from the image when absent
};

// Dataset description: one entry per slide plus the patching parameters.
// Stored as a UTF-8 JSON file; see the README for the schema.
struct DatasetManifest {
    std::vector<ManifestEntry> entries;
    std::int64_t patch_size = 0;
    std::string convention = "canonical";
};

DatasetManifest load_manifest(const std::filesystem::path& path);
void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);

struct SlideFailure {
    std::string wsi_id;
    std::string message;
};

struct ExtractionResult {
    std::vector<PatchRecord> records;  // one per kept (annotated) patch
    std::vector<SlideFailure> failures;
    std::int64_t tiles_scanned = 0;
};

struct ExtractOptions {
    std::int64_t stride = 0;  // 0 = patch_size (non-overlapping)
    unsigned workers = 1;
};

// Walks every slide with stride = patch_size (non-overlapping unless
// overridden), keeps only tiles whose truth window contains at least one
// foreground pixel, and writes image/truth patch pairs named by the
// manifest codec under out_dir/images and out_dir/masks. Slides whose
// files cannot be read are skipped and reported.
ExtractionResult extract_annotated_patches(const DatasetManifest& manifest,
                                           const std::filesystem::path& out_dir,
                                           const ExtractOptions& options = {});

// Partition records by the manifest's group field, preserving record order
// within a group. Throws UnknownSlide for records whose wsi_id is not in
// the manifest.
std::map<std::string, std::vector<PatchRecord>> split_by_group(
    const std::vector<PatchRecord>& records, const DatasetManifest& manifest);

}  // namespace slidepipe
