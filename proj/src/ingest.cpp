#include "slidepipe/ingest.hpp"

#include <fstream>
#include <set>

#include <json.hpp>

#include "slidepipe/errors.hpp"
#include "slidepipe/parallel.hpp"
#include "slidepipe/raster_io.hpp"

namespace slidepipe {

DatasetManifest load_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open manifest '" + path.string() + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("manifest '" + path.string() + "': " + e.what());
    }

    DatasetManifest manifest;
    manifest.patch_size = j.value("patch_size", std::int64_t{0});
    manifest.convention = j.value("convention", std::string{"canonical"});
    if (manifest.patch_size < 1) {
        throw ConfigError("manifest '" + path.string() + "': patch_size must be >= 1");
    }

    std::set<std::string> seen;
    const auto base = path.parent_path();
    for (const auto& e : j.at("slides")) {
        ManifestEntry entry;
        entry.wsi_id = e.at("wsi_id").get<std::string>();
        entry.group = e.value("group", std::string{"all"});
        entry.image_path = base / e.at("image").get<std::string>();
        entry.truth_path = base / e.value("truth", std::string{});
        entry.exclude_wsi_eval = e.value("exclude_wsi_eval", false);
        if (e.contains("width") && e.contains("height")) {
            entry.extent = RasterExtent{e.at("width").get<std::int64_t>(),
                                        e.at("height").get<std::int64_t>()};
        }
        if (!seen.insert(entry.wsi_id).second) {
            throw ConfigError("manifest '" + path.string() + "': duplicate wsi_id '" +
                              entry.wsi_id + "'");
        }
        manifest.entries.push_back(std::move(entry));
    }
    return manifest;
}

void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path) {
    nlohmann::json j;
    j["patch_size"] = manifest.patch_size;
    j["convention"] = manifest.convention;
    j["slides"] = nlohmann::json::array();
    const auto base = path.parent_path();
    for (const auto& e : manifest.entries) {
        nlohmann::json entry;
        entry["wsi_id"] = e.wsi_id;
        entry["group"] = e.group;
        entry["image"] = std::filesystem::relative(e.image_path, base).string();
        if (!e.truth_path.empty()) {
            entry["truth"] = std::filesystem::relative(e.truth_path, base).string();
        }
        if (e.exclude_wsi_eval) entry["exclude_wsi_eval"] = true;
        if (e.extent.width > 0) {
            entry["width"] = e.extent.width;
            entry["height"] = e.extent.height;
        }
        j["slides"].push_back(std::move(entry));
    }
    std::ofstream out(path);
    if (!out) throw IoError("cannot create manifest '" + path.string() + "'");
    out << j.dump(2) << '\n';
}

ExtractionResult extract_annotated_patches(const DatasetManifest& manifest,
                                           const std::filesystem::path& out_dir,
                                           const ExtractOptions& options) {
    if (manifest.patch_size < 1) throw ConfigError("extract: manifest patch_size must be >= 1");
    const std::int64_t stride = options.stride > 0 ? options.stride : manifest.patch_size;
    if (stride > manifest.patch_size) {
        throw ConfigError("extract: stride must not exceed patch_size");
    }
    const PatchCodec& codec = codec_by_id(manifest.convention);

    const auto images_dir = out_dir / "images";
    const auto masks_dir = out_dir / "masks";
    std::filesystem::create_directories(images_dir);
    std::filesystem::create_directories(masks_dir);

    struct SlideOutcome {
        std::vector<PatchRecord> records;
        std::int64_t tiles_scanned = 0;
        std::string error;
    };

    std::vector<SlideOutcome> outcomes(manifest.entries.size());
    ordered_parallel_for(
        manifest.entries.size(), options.workers,
        [&](std::size_t i) -> SlideOutcome {
            const ManifestEntry& entry = manifest.entries[i];
            SlideOutcome out;
            try {
                const auto image = open_raster(entry.image_path);
                const auto truth = open_raster(entry.truth_path);
                if (!(image->extent() == truth->extent())) {
                    throw ShapeMismatch("truth extent does not match image extent");
                }
                if (truth->channels() != 1) {
                    throw UnsupportedFormat("truth raster must be single-channel");
                }
                if (entry.extent.width > 0 && !(entry.extent == image->extent())) {
                    throw ShapeMismatch("manifest extent does not match the image file");
                }

                const TileGrid grid = make_grid(image->extent(), manifest.patch_size, stride);
                for (const TileSpec& tile : grid.tiles) {
                    ++out.tiles_scanned;
                    const PixelBlock truth_win =
                        truth->read_window(tile.x, tile.y, tile.size, tile.size);
                    bool any_foreground = false;
                    for (std::uint8_t v : truth_win.pixels) {
                        if (v != 0) {
                            any_foreground = true;
                            break;
                        }
                    }
                    if (!any_foreground) continue;

                    PatchRecord rec;
                    rec.wsi_id = entry.wsi_id;
                    rec.x = tile.x;
                    rec.y = tile.y;
                    rec.size = tile.size;
                    const std::string stem = codec.format(rec);

                    const PixelBlock image_win =
                        image->read_window(tile.x, tile.y, tile.size, tile.size);
                    write_image(images_dir / (stem + ".png"), image_win);

                    LabelMask truth_mask(tile.size, tile.size);
                    std::copy(truth_win.pixels.begin(), truth_win.pixels.end(),
                              truth_mask.labels.begin());
                    write_mask(masks_dir / (stem + ".png"), truth_mask);

                    rec.payload_path = images_dir / (stem + ".png");
                    out.records.push_back(std::move(rec));
                }
            } catch (const std::exception& e) {
                out.error = e.what();
            }
            return out;
        },
        [&](std::size_t i, SlideOutcome out) { outcomes[i] = std::move(out); });

    ExtractionResult result;
    for (std::size_t i = 0; i < outcomes.size(); ++i) {
        result.tiles_scanned += outcomes[i].tiles_scanned;
        if (!outcomes[i].error.empty()) {
            result.failures.push_back(SlideFailure{manifest.entries[i].wsi_id, outcomes[i].error});
            continue;
        }
        for (auto& rec : outcomes[i].records) result.records.push_back(std::move(rec));
    }
    return result;
}

std::map<std::string, std::vector<PatchRecord>> split_by_group(
    const std::vector<PatchRecord>& records, const DatasetManifest& manifest) {
    std::map<std::string, std::string> group_of;
    for (const auto& entry : manifest.entries) group_of[entry.wsi_id] = entry.group;

    std::map<std::string, std::vector<PatchRecord>> partition;
    for (const auto& rec : records) {
        auto it = group_of.find(rec.wsi_id);
        if (it == group_of.end()) {
            throw UnknownSlide("split_by_group: wsi_id '" + rec.wsi_id +
                               "' is not in the manifest");
        }
        partition[it->second].push_back(rec);
    }
    return partition;
}

}  // namespace slidepipe
