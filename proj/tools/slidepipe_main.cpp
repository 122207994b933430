// slidepipe: sliding-window inference over whole-slide rasters with
// overlap-summed stitching, coordinate-based patch reassembly, Dice
// evaluation and a synthetic with/without-overlap benchmark.

#include <zlib.h>

#include <CLI11.hpp>
#include <algorithm>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>

#include "slidepipe/config.hpp"
#include "slidepipe/errors.hpp"
#include "slidepipe/eval.hpp"
#include "slidepipe/ingest.hpp"
#include "slidepipe/parallel.hpp"
#include "slidepipe/patch_codec.hpp"
#include "slidepipe/predictor.hpp"
#include "slidepipe/raster_io.hpp"
#include "slidepipe/remote.hpp"
#include "slidepipe/stitcher.hpp"
#include "slidepipe/synth.hpp"
#include "slidepipe/version.hpp"

using namespace slidepipe;
namespace fs = std::filesystem;

namespace {

// Exit codes: 0 success, 1 partial failure, 2 configuration error,
// 3 protocol error.
constexpr int kExitOk = 0;
constexpr int kExitPartial = 1;
constexpr int kExitConfig = 2;
constexpr int kExitProtocol = 3;

std::string version_line() {
    return std::string("slidepipe ") + kVersion + " (protocol " +
           std::to_string(kProtocolVersion) + ")";
}

std::uint32_t crc32_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "'");
    std::uint32_t crc = static_cast<std::uint32_t>(::crc32(0, nullptr, 0));
    char buffer[1 << 16];
    while (in.read(buffer, sizeof(buffer)) || in.gcount() > 0) {
        crc = static_cast<std::uint32_t>(::crc32(
            crc, reinterpret_cast<const Bytef*>(buffer), static_cast<uInt>(in.gcount())));
    }
    return crc;
}

// ---------------------------------------------------------------------------
// Predictor specs: "pixel[:threshold=N]", "oracle[:noise=X,seed=N]",
// "border[:frac=X,flip=X,seed=N,noise=X]", "external:tcp:host:port",
// "external:unix:/path".

std::map<std::string, std::string> parse_params(const std::string& text) {
    std::map<std::string, std::string> params;
    std::istringstream in(text);
    std::string item;
    while (std::getline(in, item, ',')) {
        if (item.empty()) continue;
        const auto eq = item.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("predictor parameter '" + item + "' is not k=v");
        }
        params[item.substr(0, eq)] = item.substr(eq + 1);
    }
    return params;
}

double param_double(const std::map<std::string, std::string>& params, const std::string& key,
                    double fallback) {
    auto it = params.find(key);
    if (it == params.end()) return fallback;
    try {
        return std::stod(it->second);
    } catch (const std::exception&) {
        throw ConfigError("predictor parameter '" + key + "': bad number '" + it->second + "'");
    }
}

struct PredictorHandle {
    std::unique_ptr<Predictor> owned;
    Predictor* predictor = nullptr;
    bool needs_truth = false;
};

PredictorHandle make_predictor(const std::string& spec, int classes, const LabelMask* truth,
                               std::int64_t timeout_ms) {
    PredictorHandle handle;
    const auto colon = spec.find(':');
    const std::string name = spec.substr(0, colon == std::string::npos ? spec.size() : colon);
    const std::string rest = colon == std::string::npos ? "" : spec.substr(colon + 1);

    if (name == "pixel") {
        const auto params = parse_params(rest);
        handle.owned = std::make_unique<PixelThresholdPredictor>(
            classes, static_cast<int>(param_double(params, "threshold", 128)));
    } else if (name == "oracle" || name == "border") {
        if (truth == nullptr) {
            throw ConfigError("predictor '" + name + "' needs ground truth (--truth or manifest)");
        }
        const auto params = parse_params(rest);
        const double noise = param_double(params, "noise", 0.0);
        const auto seed = static_cast<std::uint64_t>(param_double(params, "seed", 0));
        if (name == "oracle") {
            handle.owned =
                std::make_unique<ThresholdOraclePredictor>(*truth, classes, noise, seed);
        } else {
            handle.owned = std::make_unique<BorderDegradedPredictor>(
                *truth, classes, param_double(params, "frac", 0.125),
                param_double(params, "flip", 0.8), seed, noise);
        }
        handle.needs_truth = true;
    } else if (name == "external") {
        RemotePredictor::Options options;
        options.timeout = std::chrono::milliseconds(timeout_ms);
        handle.owned = std::make_unique<RemotePredictor>(rest, options);
    } else {
        throw ConfigError("unknown predictor '" + name +
                          "' (expected pixel, oracle, border or external)");
    }
    handle.predictor = handle.owned.get();
    return handle;
}

bool spec_needs_truth(const std::string& spec) {
    return spec.rfind("oracle", 0) == 0 || spec.rfind("border", 0) == 0;
}

// Syntax-only validation so bad specs fail before any slide work starts.
void validate_predictor_spec(const std::string& spec) {
    const auto colon = spec.find(':');
    const std::string name = spec.substr(0, colon == std::string::npos ? spec.size() : colon);
    const std::string rest = colon == std::string::npos ? "" : spec.substr(colon + 1);
    if (name == "pixel" || name == "oracle" || name == "border") {
        parse_params(rest);
        return;
    }
    if (name == "external") {
        parse_endpoint(rest);
        return;
    }
    throw ConfigError("unknown predictor '" + name +
                      "' (expected pixel, oracle, border or external)");
}

// ---------------------------------------------------------------------------
// Shared run settings (infer/reassemble), overridable by --config and
// SLIDEPIPE_* environment variables.

struct RunSettings {
    std::string preset;
    std::int64_t tile = 0;    // 0 = from preset
    std::int64_t stride = 0;  // 0 = tile / 2
    int classes = 2;
    unsigned workers = 1;
    std::string predictor = "pixel";
    std::string codec = "canonical";
    std::int64_t timeout_ms = 60000;
    bool overlay = false;
    bool prob = false;
    int foreground = 1;

    void apply_preset() {
        if (preset.empty()) {
        } else if (preset == "kpis") {
            if (tile == 0) tile = 2048;
        } else if (preset == "mice") {
            if (tile == 0) tile = 1024;
        } else {
            throw ConfigError("unknown preset '" + preset + "' (expected kpis or mice)");
        }
        if (tile == 0) tile = 2048;
        if (stride == 0) stride = tile / 2;
    }

    std::vector<std::string> manifest_inputs;  // filled when loading a run manifest
    std::string manifest_truth;
    std::string truth_for_manifest;  // echoed into the run manifest

    void load_config_file(const std::string& path) {
        KeyValueConfig kv;
        std::ifstream probe(path);
        if (!probe) throw IoError("cannot open config '" + path + "'");
        char first = 0;
        probe >> first;
        if (first == '{') {
            // A run manifest: reuse its embedded config block.
            std::ifstream in(path);
            nlohmann::json j;
            in >> j;
            if (!j.contains("config")) {
                throw ConfigError("'" + path + "' has no config block");
            }
            for (const auto& [key, value] : j.at("config").items()) {
                kv.set(key, value.get<std::string>());
            }
            if (j.contains("inputs")) {
                for (const auto& input : j.at("inputs")) {
                    manifest_inputs.push_back(input.at("path").get<std::string>());
                }
            }
        } else {
            kv = KeyValueConfig::load(path);
        }
        manifest_truth = kv.get_string("truth", "");
        preset = kv.get_string("preset", preset);
        tile = kv.get_int("tile", tile);
        stride = kv.get_int("stride", stride);
        classes = static_cast<int>(kv.get_int("classes", classes));
        workers = static_cast<unsigned>(kv.get_int("workers", static_cast<std::int64_t>(workers)));
        predictor = kv.get_string("predictor", predictor);
        codec = kv.get_string("codec", codec);
        timeout_ms = kv.get_int("timeout_ms", timeout_ms);
        overlay = kv.get_bool("overlay", overlay);
        prob = kv.get_bool("prob", prob);
        foreground = static_cast<int>(kv.get_int("foreground", foreground));
    }

    KeyValueConfig effective() const {
        KeyValueConfig kv;
        if (!truth_for_manifest.empty()) kv.set("truth", truth_for_manifest);
        if (!preset.empty()) kv.set("preset", preset);
        kv.set("tile", std::to_string(tile));
        kv.set("stride", std::to_string(stride));
        kv.set("classes", std::to_string(classes));
        kv.set("workers", std::to_string(workers));
        kv.set("predictor", predictor);
        kv.set("codec", codec);
        kv.set("timeout_ms", std::to_string(timeout_ms));
        kv.set("overlay", overlay ? "true" : "false");
        kv.set("prob", prob ? "true" : "false");
        kv.set("foreground", std::to_string(foreground));
        return kv;
    }
};

void add_run_options(CLI::App* cmd, RunSettings& settings, std::string& config_path) {
    cmd->add_option("--config", config_path, "key=value config file or a prior run manifest");
    cmd->add_option("--preset", settings.preset, "kpis (tile 2048) or mice (tile 1024)")
        ->envname("SLIDEPIPE_PRESET");
    cmd->add_option("--tile", settings.tile, "tile size N")->envname("SLIDEPIPE_TILE");
    cmd->add_option("--stride", settings.stride, "stride (default N/2)")
        ->envname("SLIDEPIPE_STRIDE");
    cmd->add_option("--classes", settings.classes, "class count")->envname("SLIDEPIPE_CLASSES");
    cmd->add_option("--workers", settings.workers, "predictor worker threads")
        ->envname("SLIDEPIPE_WORKERS");
    cmd->add_option("--predictor", settings.predictor,
                    "pixel[:threshold=N] | oracle[:noise=X,seed=N] | "
                    "border[:frac=X,flip=X,seed=N] | external:tcp:host:port | external:unix:path")
        ->envname("SLIDEPIPE_PREDICTOR");
    cmd->add_option("--codec", settings.codec, "patch filename convention")
        ->envname("SLIDEPIPE_CODEC");
    cmd->add_option("--timeout-ms", settings.timeout_ms, "external predictor timeout");
}

// ---------------------------------------------------------------------------
// infer

struct InferArgs {
    RunSettings settings;
    std::string config_path;
    std::vector<std::string> images;
    std::string truth_path;
    std::string manifest_path;
    std::string out_dir = ".";
};

struct SlideJob {
    std::string wsi_id;
    fs::path image;
    fs::path truth;  // optional
};

int cmd_infer(InferArgs& args) {
    if (!args.config_path.empty()) args.settings.load_config_file(args.config_path);
    if (args.images.empty() && args.manifest_path.empty()) {
        args.images = args.settings.manifest_inputs;
        if (args.truth_path.empty()) args.truth_path = args.settings.manifest_truth;
    }
    args.settings.apply_preset();
    if (args.settings.stride > args.settings.tile) {
        throw ConfigError("stride exceeds tile size");
    }
    if (args.settings.workers < 1) throw ConfigError("workers must be >= 1");
    validate_predictor_spec(args.settings.predictor);

    std::vector<SlideJob> jobs;
    if (!args.manifest_path.empty()) {
        const DatasetManifest manifest = load_manifest(args.manifest_path);
        for (const auto& entry : manifest.entries) {
            jobs.push_back(SlideJob{entry.wsi_id, entry.image_path, entry.truth_path});
        }
    }
    for (const std::string& image : args.images) {
        SlideJob job;
        job.image = image;
        job.wsi_id = fs::path(image).stem().string();
        job.truth = args.truth_path;
        jobs.push_back(job);
    }
    if (jobs.empty()) throw ConfigError("infer: no inputs (--image or --manifest)");

    fs::create_directories(args.out_dir);

    args.settings.truth_for_manifest = args.truth_path;

    nlohmann::json manifest_json;
    manifest_json["tool"] = version_line();
    {
        const KeyValueConfig effective = args.settings.effective();
        nlohmann::json cfg;
        for (const auto& [k, v] : effective.values()) cfg[k] = v;
        manifest_json["config"] = cfg;
    }
    manifest_json["inputs"] = nlohmann::json::array();
    manifest_json["outputs"] = nlohmann::json::array();
    manifest_json["slides"] = nlohmann::json::array();

    int failures = 0;
    for (const SlideJob& job : jobs) {
        try {
            const auto reader = open_raster(job.image);
            LabelMask truth;
            const bool have_truth = !job.truth.empty();
            if (spec_needs_truth(args.settings.predictor) && !have_truth) {
                throw ConfigError("predictor '" + args.settings.predictor +
                                  "' needs --truth (or a manifest with truth paths)");
            }
            if (have_truth) truth = load_mask(job.truth);

            PredictorHandle predictor =
                make_predictor(args.settings.predictor, args.settings.classes,
                               have_truth ? &truth : nullptr, args.settings.timeout_ms);

            const TileGrid grid =
                make_grid(reader->extent(), args.settings.tile, args.settings.stride);

            const fs::path mask_path = fs::path(args.out_dir) / (job.wsi_id + "_mask.png");
            PngMaskSink mask_sink(mask_path, reader->extent());

            StitchOptions options;
            options.workers = args.settings.workers;
            std::optional<MemoryPlaneSink> prob_sink;
            if (args.settings.prob) {
                prob_sink.emplace(reader->extent(), predictor.predictor->classes());
                options.prob_sink = &*prob_sink;
            }

            const StitchReport report =
                stitch_full(grid, *predictor.predictor, *reader, mask_sink, options);

            nlohmann::json slide_json;
            slide_json["wsi_id"] = job.wsi_id;
            slide_json["tiles_applied"] = report.tiles_applied;
            slide_json["pixels_finalized"] = report.pixels_finalized;
            slide_json["max_contributors_seen"] = report.max_contributors_seen;
            slide_json["peak_band_bytes"] = report.peak_band_bytes;
            manifest_json["slides"].push_back(slide_json);

            manifest_json["inputs"].push_back(
                {{"path", job.image.string()}, {"crc32", crc32_file(job.image)}});
            manifest_json["outputs"].push_back(
                {{"path", mask_path.string()}, {"crc32", crc32_file(mask_path)}});

            if (args.settings.prob) {
                const fs::path prob_path = fs::path(args.out_dir) / (job.wsi_id + "_prob.wssh");
                write_score_shard(prob_path, prob_sink->map());
                manifest_json["outputs"].push_back(
                    {{"path", prob_path.string()}, {"crc32", crc32_file(prob_path)}});
            }
            if (args.settings.overlay) {
                const PixelBlock image = reader->read_window(0, 0, reader->extent().width,
                                                             reader->extent().height);
                const LabelMask mask = load_mask(mask_path);
                const fs::path overlay_path =
                    fs::path(args.out_dir) / (job.wsi_id + "_overlay.png");
                write_image(overlay_path,
                            render_overlay(image, mask, have_truth ? &truth : nullptr, 0.25));
                manifest_json["outputs"].push_back(
                    {{"path", overlay_path.string()}, {"crc32", crc32_file(overlay_path)}});
            }

            std::cout << job.wsi_id << ": " << report.tiles_applied << " tiles, "
                      << report.pixels_finalized << " pixels, band peak "
                      << report.peak_band_bytes << " bytes -> " << mask_path.string() << "\n";
        } catch (const ProtocolError&) {
            throw;
        } catch (const TimeoutError&) {
            throw;
        } catch (const std::exception& e) {
            ++failures;
            std::cerr << "error: slide '" << job.wsi_id << "': " << e.what() << "\n";
        }
    }

    std::ofstream manifest_out(fs::path(args.out_dir) / "run_manifest.json");
    manifest_out << manifest_json.dump(2) << "\n";

    if (failures == static_cast<int>(jobs.size())) return kExitPartial;
    return failures > 0 ? kExitPartial : kExitOk;
}

// ---------------------------------------------------------------------------
// tile

struct TileArgs {
    RunSettings settings;
    std::string config_path;
    std::string extent_text;
    std::string image_path;
    std::string manifest_path;
    std::string out_dir;
    bool extract = false;
    bool annotated = false;
    bool json = false;
    std::int64_t extract_stride = 0;
};

int cmd_tile(TileArgs& args) {
    if (!args.config_path.empty()) args.settings.load_config_file(args.config_path);

    if (args.annotated) {
        if (args.manifest_path.empty() || args.out_dir.empty()) {
            throw ConfigError("tile --annotated needs --manifest and --out");
        }
        const DatasetManifest manifest = load_manifest(args.manifest_path);
        ExtractOptions options;
        options.stride = args.extract_stride;
        options.workers = args.settings.workers;
        const ExtractionResult result =
            extract_annotated_patches(manifest, args.out_dir, options);
        std::cout << result.records.size() << " annotated patches kept from "
                  << result.tiles_scanned << " tiles\n";
        for (const auto& failure : result.failures) {
            std::cerr << "error: slide '" << failure.wsi_id << "': " << failure.message << "\n";
        }
        return result.failures.empty() ? kExitOk : kExitPartial;
    }

    args.settings.apply_preset();
    RasterExtent extent;
    std::unique_ptr<RasterReader> reader;
    if (!args.extent_text.empty()) {
        const auto x = args.extent_text.find('x');
        if (x == std::string::npos) throw ConfigError("--extent must be WIDTHxHEIGHT");
        try {
            extent.width = std::stoll(args.extent_text.substr(0, x));
            extent.height = std::stoll(args.extent_text.substr(x + 1));
        } catch (const std::exception&) {
            throw ConfigError("--extent must be WIDTHxHEIGHT");
        }
    } else if (!args.image_path.empty()) {
        reader = open_raster(args.image_path);
        extent = reader->extent();
    } else {
        throw ConfigError("tile: need --extent or --image");
    }

    const TileGrid grid = make_grid(extent, args.settings.tile, args.settings.stride);

    if (args.extract) {
        if (!reader) throw ConfigError("tile --extract needs --image");
        if (args.out_dir.empty()) throw ConfigError("tile --extract needs --out");
        fs::create_directories(args.out_dir);
        const PatchCodec& codec = codec_by_id(args.settings.codec);
        const std::string wsi_id = fs::path(args.image_path).stem().string();
        for (const TileSpec& tile : grid.tiles) {
            PatchRecord record;
            record.wsi_id = wsi_id;
            record.x = tile.x;
            record.y = tile.y;
            record.size = tile.size;
            const PixelBlock window = reader->read_window(tile.x, tile.y, tile.size, tile.size);
            write_image(fs::path(args.out_dir) / (codec.format(record) + ".png"), window);
        }
        std::cout << grid.tiles.size() << " tiles written to " << args.out_dir << "\n";
        return kExitOk;
    }

    if (args.json) {
        nlohmann::json j;
        j["extent"] = {{"width", extent.width}, {"height", extent.height}};
        j["tile_size"] = grid.tile_size;
        j["stride"] = grid.stride;
        j["tiles"] = nlohmann::json::array();
        for (const TileSpec& tile : grid.tiles) {
            j["tiles"].push_back({{"x", tile.x}, {"y", tile.y}, {"size", tile.size}});
        }
        std::cout << j.dump(2) << "\n";
    } else {
        std::cout << "x,y,size\n";
        for (const TileSpec& tile : grid.tiles) {
            std::cout << tile.x << ',' << tile.y << ',' << tile.size << "\n";
        }
    }
    return kExitOk;
}

// ---------------------------------------------------------------------------
// reassemble

struct ReassembleArgs {
    RunSettings settings;
    std::string config_path;
    std::string shards_dir;
    std::string patches_dir;
    std::string truth_manifest;
    std::string out_dir = ".";
};

// Streams stitched rows of one slide's bounding box into one mask file per
// patch window.
class PatchCropSink final : public MaskRowSink {
public:
    PatchCropSink(std::vector<PatchRecord> records, std::int64_t min_x, std::int64_t min_y,
                  const fs::path& out_dir)
        : records_(std::move(records)), min_x_(min_x), min_y_(min_y), out_dir_(out_dir) {
        std::sort(records_.begin(), records_.end(),
                  [](const PatchRecord& a, const PatchRecord& b) {
                      return std::tie(a.y, a.x) < std::tie(b.y, b.x);
                  });
    }

    void accept_rows(std::int64_t row_start, const LabelMask& rows) override {
        const std::int64_t row_end = row_start + rows.height;
        while (next_ < records_.size() && records_[next_].y - min_y_ < row_end) {
            const PatchRecord& r = records_[next_];
            open_.push_back(Open{&r, std::make_unique<PngMaskSink>(
                                         out_dir_ / (format_patch_filename(r) + "_mask.png"),
                                         RasterExtent{r.size, r.size})});
            ++next_;
        }
        for (auto it = open_.begin(); it != open_.end();) {
            const PatchRecord& r = *it->record;
            const std::int64_t py0 = r.y - min_y_;
            const std::int64_t lo = std::max(row_start, py0);
            const std::int64_t hi = std::min(row_end, py0 + r.size);
            if (lo < hi) {
                LabelMask block(hi - lo, r.size);
                for (std::int64_t y = lo; y < hi; ++y) {
                    for (std::int64_t x = 0; x < r.size; ++x) {
                        block.at(y - lo, x) = rows.at(y - row_start, r.x - min_x_ + x);
                    }
                }
                it->sink->accept_rows(lo - py0, block);
            }
            if (py0 + r.size <= row_end) {
                it->sink->finish();
                ++written_;
                it = open_.erase(it);
            } else {
                ++it;
            }
        }
    }

    std::size_t written() const { return written_; }

private:
    struct Open {
        const PatchRecord* record;
        std::unique_ptr<PngMaskSink> sink;
    };

    std::vector<PatchRecord> records_;
    std::int64_t min_x_, min_y_;
    fs::path out_dir_;
    std::size_t next_ = 0;
    std::vector<Open> open_;
    std::size_t written_ = 0;
};

int cmd_reassemble(ReassembleArgs& args) {
    if (!args.config_path.empty()) args.settings.load_config_file(args.config_path);
    if (args.shards_dir.empty() == args.patches_dir.empty()) {
        throw ConfigError("reassemble: exactly one of --shards or --patches");
    }
    const fs::path in_dir = args.shards_dir.empty() ? args.patches_dir : args.shards_dir;
    const bool from_shards = !args.shards_dir.empty();
    if (!from_shards) validate_predictor_spec(args.settings.predictor);
    fs::create_directories(args.out_dir);

    // Collect parseable inputs, list the rest.
    std::map<std::string, std::vector<PatchRecord>> by_slide;
    int unparseable = 0;
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(in_dir)) {
        if (!entry.is_regular_file()) continue;
        files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& path : files) {
        try {
            PatchRecord record = parse_patch_filename(path.filename().string(),
                                                      args.settings.codec);
            record.payload_path = path;
            by_slide[record.wsi_id].push_back(std::move(record));
        } catch (const Error& e) {
            ++unparseable;
            std::cerr << "skipping '" << path.filename().string() << "': " << e.what() << "\n";
        }
    }
    if (by_slide.empty()) throw ConfigError("reassemble: no parseable inputs in " + in_dir.string());

    // Truth (for oracle predictors) comes from a dataset manifest.
    std::map<std::string, LabelMask> truths;
    if (spec_needs_truth(args.settings.predictor)) {
        if (args.truth_manifest.empty()) {
            throw ConfigError("predictor '" + args.settings.predictor +
                              "' needs --truth-manifest");
        }
        const DatasetManifest manifest = load_manifest(args.truth_manifest);
        for (const auto& entry : manifest.entries) {
            if (by_slide.count(entry.wsi_id) != 0) {
                truths.emplace(entry.wsi_id, load_mask(entry.truth_path));
            }
        }
    }

    std::size_t total_written = 0;
    for (auto& [wsi_id, records] : by_slide) {
        // Load or predict every patch's scores.
        std::vector<ScoredPatch> scored(records.size());
        PredictorHandle predictor;
        if (!from_shards) {
            const LabelMask* truth = nullptr;
            auto it = truths.find(wsi_id);
            if (it != truths.end()) truth = &it->second;
            predictor = make_predictor(args.settings.predictor, args.settings.classes, truth,
                                       args.settings.timeout_ms);
        }
        ordered_parallel_for(
            records.size(), args.settings.workers,
            [&](std::size_t i) -> ScoredPatch {
                ScoredPatch patch;
                patch.record = records[i];
                if (from_shards) {
                    patch.scores = read_score_shard(records[i].payload_path);
                } else {
                    const auto reader = open_raster(records[i].payload_path);
                    const PixelBlock pixels = reader->read_window(
                        0, 0, records[i].size, records[i].size);
                    patch.scores = predictor.predictor->predict(
                        pixels, TileSpec{records[i].x, records[i].y, records[i].size});
                }
                if (patch.scores.height != records[i].size ||
                    patch.scores.width != records[i].size) {
                    throw ShapeMismatch("scores for '" + records[i].payload_path.string() +
                                        "' do not match the record size");
                }
                return patch;
            },
            [&](std::size_t i, ScoredPatch patch) { scored[i] = std::move(patch); });

        // One banded pass over the slide's bounding box; crop every patch.
        std::int64_t min_x = scored[0].record.x, min_y = scored[0].record.y;
        std::int64_t max_x = 0, max_y = 0;
        for (const auto& p : scored) {
            min_x = std::min(min_x, p.record.x);
            min_y = std::min(min_y, p.record.y);
            max_x = std::max(max_x, p.record.x + p.record.size);
            max_y = std::max(max_y, p.record.y + p.record.size);
        }
        std::vector<std::size_t> order(scored.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            return std::tie(scored[a].record.y, scored[a].record.x) <
                   std::tie(scored[b].record.y, scored[b].record.x);
        });

        PatchCropSink sink(records, min_x, min_y, args.out_dir);
        StitchAccumulator acc({max_x - min_x, max_y - min_y}, scored[0].scores.classes, &sink);
        for (std::size_t i : order) {
            acc.advance(scored[i].record.y - min_y);
            acc.accumulate_block(scored[i].record.x - min_x, scored[i].record.y - min_y,
                                 scored[i].scores);
        }
        acc.finish();
        total_written += sink.written();
        std::cout << wsi_id << ": " << sink.written() << " patch masks\n";
    }

    std::cout << total_written << " masks written to " << args.out_dir << "\n";
    return unparseable > 0 ? kExitPartial : kExitOk;
}

// ---------------------------------------------------------------------------
// eval / compare

struct EvalArgs {
    std::string pairs_path;
    std::string pred_dir;
    std::string truth_dir;
    std::string manifest_path;
    std::string codec = "canonical";
    std::string json_path;
    std::string csv_path;
    unsigned workers = 1;
    bool micro = false;
    int foreground = 1;
};

std::vector<UnitJob> pairs_from_csv(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path.string() + "'");
    std::vector<UnitJob> jobs;
    std::string line;
    const fs::path base = path.parent_path();
    while (std::getline(in, line)) {
        if (line.empty() || line == "unit_id,group,pred,truth") continue;
        std::istringstream row(line);
        UnitJob job;
        std::string pred, truth;
        if (!std::getline(row, job.unit_id, ',') || !std::getline(row, job.group, ',') ||
            !std::getline(row, pred, ',') || !std::getline(row, truth)) {
            throw ConfigError("pairs file: bad line '" + line + "'");
        }
        job.pred_path = fs::path(pred).is_absolute() ? fs::path(pred) : base / pred;
        job.truth_path = fs::path(truth).is_absolute() ? fs::path(truth) : base / truth;
        jobs.push_back(std::move(job));
    }
    return jobs;
}

std::vector<UnitJob> pairs_from_dirs(const EvalArgs& args) {
    std::map<std::string, std::string> group_of;
    std::set<std::string> excluded;
    if (!args.manifest_path.empty()) {
        const DatasetManifest manifest = load_manifest(args.manifest_path);
        for (const auto& entry : manifest.entries) {
            group_of[entry.wsi_id] = entry.group;
            if (entry.exclude_wsi_eval) excluded.insert(entry.wsi_id);
        }
    }

    std::vector<UnitJob> jobs;
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(args.pred_dir)) {
        if (entry.is_regular_file()) files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& pred : files) {
        const fs::path truth = fs::path(args.truth_dir) / pred.filename();
        if (!fs::exists(truth)) continue;
        UnitJob job;
        job.unit_id = pred.stem().string();
        job.group = "all";
        if (!group_of.empty()) {
            // Patch-style names resolve through the codec; slide-level
            // masks match the manifest id directly (with or without a
            // trailing "_mask").
            std::string slide = job.unit_id;
            if (slide.size() > 5 && slide.ends_with("_mask")) {
                slide = slide.substr(0, slide.size() - 5);
            }
            try {
                slide = parse_patch_filename(pred.filename().string(), args.codec).wsi_id;
            } catch (const Error&) {
            }
            if (excluded.count(slide) != 0) continue;  // flagged incomplete labeling
            auto it = group_of.find(slide);
            if (it != group_of.end()) job.group = it->second;
        }
        job.pred_path = pred;
        job.truth_path = truth;
        jobs.push_back(std::move(job));
    }
    return jobs;
}

int cmd_eval(EvalArgs& args) {
    std::vector<UnitJob> jobs;
    if (!args.pairs_path.empty()) {
        jobs = pairs_from_csv(args.pairs_path);
    } else if (!args.pred_dir.empty() && !args.truth_dir.empty()) {
        jobs = pairs_from_dirs(args);
    } else {
        throw ConfigError("eval: need --pairs or both --pred-dir and --truth-dir");
    }
    if (jobs.empty()) throw ConfigError("eval: no units to evaluate");

    const int fg = args.foreground;
    const MaskLoader loader = [fg](const fs::path& path) {
        return binarize(load_mask(path), fg, 256);
    };
    const DiceReport report = evaluate_units(jobs, loader, args.workers, args.micro);

    std::cout << report_table(report);
    if (!args.json_path.empty()) {
        std::ofstream(args.json_path) << report_to_json(report);
    }
    if (!args.csv_path.empty()) {
        std::ofstream(args.csv_path) << report_to_csv(report);
    }
    return report.errors.empty() ? kExitOk : kExitPartial;
}

struct CompareArgs {
    std::string a_path;
    std::string b_path;
    std::string json_path;
    std::string csv_path;
};

int cmd_compare(CompareArgs& args) {
    auto slurp = [](const std::string& path) {
        std::ifstream in(path);
        if (!in) throw IoError("cannot open '" + path + "'");
        std::ostringstream buffer;
        buffer << in.rdbuf();
        return buffer.str();
    };
    const DiceReport a = report_from_json(slurp(args.a_path));
    const DiceReport b = report_from_json(slurp(args.b_path));
    const CompareTable table = compare_reports(a, b);

    std::cout << compare_table_text(table);
    if (!args.json_path.empty()) std::ofstream(args.json_path) << compare_to_json(table);
    if (!args.csv_path.empty()) std::ofstream(args.csv_path) << compare_to_csv(table);
    return kExitOk;
}

// ---------------------------------------------------------------------------
// synth

struct SynthArgs {
    std::string preset;
    std::string config_path;
    std::string out_dir;
    unsigned workers = 1;
    bool emit_slides = false;
    bool json = false;
};

ExperimentConfig synth_config(const SynthArgs& args) {
    ExperimentConfig config = desk_preset();
    if (!args.preset.empty() && args.preset != "paper-desk") {
        throw ConfigError("unknown synth preset '" + args.preset + "'");
    }
    if (!args.config_path.empty()) {
        const KeyValueConfig kv = KeyValueConfig::load(args.config_path);
        const auto slides = kv.get_int("slides", static_cast<std::int64_t>(config.slides.size()));
        const auto extent = kv.get_int("extent", config.slides[0].extent.width);
        const auto objects = kv.get_int("objects", config.slides[0].object_count);
        const auto radius_min = kv.get_int("radius_min", config.slides[0].radius_min);
        const auto radius_max = kv.get_int("radius_max", config.slides[0].radius_max);
        const auto seed = static_cast<std::uint64_t>(kv.get_int("seed", 1000));
        const std::string group = kv.get_string("group", config.slides[0].group);

        config.tile_size = kv.get_int("tile", config.tile_size);
        config.stride_overlap = kv.get_int("stride_overlap", config.tile_size / 2);
        config.stride_control = kv.get_int("stride_control", config.tile_size);
        config.predictor.border_frac =
            kv.get_double("border_frac", config.predictor.border_frac);
        config.predictor.flip_prob = kv.get_double("flip_prob", config.predictor.flip_prob);
        config.predictor.seed =
            static_cast<std::uint64_t>(kv.get_int("predictor_seed", 4242));
        config.predictor.noise = kv.get_double("noise", 0.0);

        config.slides.clear();
        for (std::int64_t i = 0; i < slides; ++i) {
            SynthSlideSpec spec;
            spec.extent = {extent, extent};
            spec.object_count = static_cast<int>(objects);
            spec.radius_min = radius_min;
            spec.radius_max = radius_max;
            spec.seed = seed + static_cast<std::uint64_t>(i);
            spec.group = group;
            config.slides.push_back(spec);
        }
    }
    config.workers = args.workers;
    return config;
}

int cmd_synth(SynthArgs& args) {
    const ExperimentConfig config = synth_config(args);
    const ExperimentResult result = run_experiment(config);

    std::cout << "control (stride = tile):\n" << report_table(result.control) << "\n";
    std::cout << "stitched (overlapping stride):\n" << report_table(result.stitched) << "\n";
    std::cout << "delta (stitched - control):\n" << compare_table_text(result.delta) << "\n";

    double straddle_sum = 0.0;
    for (double f : result.border_straddle_frac) straddle_sum += f;
    const double straddle_mean =
        result.border_straddle_frac.empty()
            ? 0.0
            : straddle_sum / static_cast<double>(result.border_straddle_frac.size());

    const bool direction_ok = result.mean_delta > 0.0 && result.frac_not_worse >= 0.9;
    std::cout << "mean stitching delta: " << (result.mean_delta >= 0 ? "+" : "")
              << result.mean_delta << " points over " << result.delta.rows.size()
              << " slides; not-worse on " << result.frac_not_worse * 100.0 << "%\n";
    std::cout << "objects straddling control-tile borders: " << straddle_mean * 100.0
              << "% (mean over slides)\n";
    std::cout << "direction " << (direction_ok ? "PASS" : "FAIL")
              << " (expected: stitched >= control on >= 90% of slides, positive mean)\n";

    if (!args.out_dir.empty()) {
        fs::create_directories(args.out_dir);
        std::ofstream(fs::path(args.out_dir) / "control_report.json")
            << report_to_json(result.control);
        std::ofstream(fs::path(args.out_dir) / "stitched_report.json")
            << report_to_json(result.stitched);
        std::ofstream(fs::path(args.out_dir) / "control_report.csv")
            << report_to_csv(result.control);
        std::ofstream(fs::path(args.out_dir) / "stitched_report.csv")
            << report_to_csv(result.stitched);
        std::ofstream(fs::path(args.out_dir) / "delta.csv") << compare_to_csv(result.delta);
        std::ofstream(fs::path(args.out_dir) / "delta.json") << compare_to_json(result.delta);

        if (args.emit_slides) {
            for (std::size_t i = 0; i < config.slides.size(); ++i) {
                const SynthSlide slide = generate_slide(config.slides[i]);
                char name[32];
                std::snprintf(name, sizeof(name), "slide%02zu", i);
                write_image(fs::path(args.out_dir) / (std::string(name) + ".png"), slide.image);
                write_mask(fs::path(args.out_dir) / (std::string(name) + "_truth.png"),
                           slide.truth);
            }
        }
    }
    if (args.json) {
        nlohmann::json j;
        j["mean_delta"] = result.mean_delta;
        j["frac_not_worse"] = result.frac_not_worse;
        j["direction_ok"] = direction_ok;
        j["border_straddle_frac"] = result.border_straddle_frac;
        std::cout << j.dump(2) << "\n";
    }
    return direction_ok ? kExitOk : kExitPartial;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{version_line()};
    app.set_version_flag("--version", version_line());
    app.require_subcommand(1);

    InferArgs infer_args;
    CLI::App* infer = app.add_subcommand("infer", "stitch full slides into mask files");
    add_run_options(infer, infer_args.settings, infer_args.config_path);
    infer->add_option("--image", infer_args.images, "slide raster(s) (PNG or TIFF)");
    infer->add_option("--truth", infer_args.truth_path, "truth mask (for oracle predictors)");
    infer->add_option("--manifest", infer_args.manifest_path, "dataset manifest JSON");
    infer->add_option("--out", infer_args.out_dir, "output directory")->required();
    infer->add_flag("--overlay", infer_args.settings.overlay, "write boundary overlays");
    infer->add_flag("--prob", infer_args.settings.prob, "write probability shards");

    TileArgs tile_args;
    CLI::App* tile = app.add_subcommand("tile", "compute grids and extract patches");
    add_run_options(tile, tile_args.settings, tile_args.config_path);
    tile->add_option("--extent", tile_args.extent_text, "raster extent WIDTHxHEIGHT");
    tile->add_option("--image", tile_args.image_path, "slide raster");
    tile->add_option("--manifest", tile_args.manifest_path, "dataset manifest JSON");
    tile->add_option("--out", tile_args.out_dir, "output directory");
    tile->add_flag("--extract", tile_args.extract, "write tile images");
    tile->add_flag("--annotated", tile_args.annotated,
                   "keep only tiles with truth foreground (needs --manifest)");
    tile->add_flag("--json", tile_args.json, "emit the grid as JSON");
    tile->add_option("--extract-stride", tile_args.extract_stride,
                     "extraction stride (default: patch size, non-overlapping)");

    ReassembleArgs reassemble_args;
    CLI::App* reassemble =
        app.add_subcommand("reassemble", "stitch patch predictions and crop back per patch");
    add_run_options(reassemble, reassemble_args.settings, reassemble_args.config_path);
    reassemble->add_option("--shards", reassemble_args.shards_dir,
                           "directory of .wssh score shards named by the codec");
    reassemble->add_option("--patches", reassemble_args.patches_dir,
                           "directory of patch images named by the codec");
    reassemble->add_option("--truth-manifest", reassemble_args.truth_manifest,
                           "manifest with truth paths (oracle predictors)");
    reassemble->add_option("--out", reassemble_args.out_dir, "output directory")->required();

    EvalArgs eval_args;
    CLI::App* eval = app.add_subcommand("eval", "Dice scores per unit, group and overall");
    eval->add_option("--pairs", eval_args.pairs_path,
                     "CSV of unit_id,group,pred,truth (paths relative to the file)");
    eval->add_option("--pred-dir", eval_args.pred_dir, "predictions directory");
    eval->add_option("--truth-dir", eval_args.truth_dir, "truth directory (matched by filename)");
    eval->add_option("--manifest", eval_args.manifest_path, "manifest for filename->group mapping");
    eval->add_option("--codec", eval_args.codec, "filename convention for grouping");
    eval->add_option("--json", eval_args.json_path, "write the report as JSON");
    eval->add_option("--csv", eval_args.csv_path, "write the report as CSV");
    eval->add_option("--workers", eval_args.workers, "evaluation worker threads");
    eval->add_flag("--micro", eval_args.micro, "unit-weighted overall average");
    eval->add_option("--foreground", eval_args.foreground, "foreground class index");

    CompareArgs compare_args;
    CLI::App* compare = app.add_subcommand("compare", "delta table between two eval reports");
    compare->add_option("--a", compare_args.a_path, "baseline report JSON")->required();
    compare->add_option("--b", compare_args.b_path, "comparison report JSON")->required();
    compare->add_option("--json", compare_args.json_path, "write deltas as JSON");
    compare->add_option("--csv", compare_args.csv_path, "write deltas as CSV");

    SynthArgs synth_args;
    CLI::App* synth =
        app.add_subcommand("synth", "synthetic with/without-overlap stitching experiment");
    synth->add_option("--preset", synth_args.preset, "paper-desk (the default)");
    synth->add_option("--config", synth_args.config_path, "key=value experiment config");
    synth->add_option("--out", synth_args.out_dir, "write reports (and slides) here");
    synth->add_option("--workers", synth_args.workers, "slide-level worker threads");
    synth->add_flag("--emit-slides", synth_args.emit_slides, "write slide/truth PNGs");
    synth->add_flag("--json", synth_args.json, "emit a JSON summary");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitConfig;
    }

    try {
        if (*infer) return cmd_infer(infer_args);
        if (*tile) return cmd_tile(tile_args);
        if (*reassemble) return cmd_reassemble(reassemble_args);
        if (*eval) return cmd_eval(eval_args);
        if (*compare) return cmd_compare(compare_args);
        if (*synth) return cmd_synth(synth_args);
    } catch (const ProtocolError& e) {
        std::cerr << "protocol error: " << e.what() << "\n";
        return kExitProtocol;
    } catch (const TimeoutError& e) {
        std::cerr << "protocol error: " << e.what() << "\n";
        return kExitProtocol;
    } catch (const RemoteError& e) {
        std::cerr << "protocol error: " << e.what() << "\n";
        return kExitProtocol;
    } catch (const ConfigError& e) {
        std::cerr << "configuration error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const UnitSetMismatch& e) {
        std::cerr << "configuration error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitPartial;
    }
    return kExitOk;
}
