#include "slidepipe/patch_codec.hpp"

#include <charconv>
#include <memory>
#include <regex>

#include "slidepipe/errors.hpp"

namespace slidepipe {

namespace {

std::string strip_dir_and_ext(const std::string& name) {
    std::filesystem::path p(name);
    return p.stem().string();
}

std::int64_t parse_coord(const std::string& field, const std::string& name) {
    std::int64_t v = 0;
    auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
    if (ec != std::errc() || ptr != field.data() + field.size()) {
        throw MalformedCoordinate("non-numeric coordinate '" + field + "' in '" + name + "'");
    }
    if (v < 0) {
        throw MalformedCoordinate("negative coordinate in '" + name + "'");
    }
    return v;
}

// <wsi_id>__x<X>_y<Y>_s<S>
class CanonicalCodec final : public PatchCodec {
public:
    std::string id() const override { return "canonical"; }

    bool try_parse(const std::string& name, PatchRecord& out) const override {
        static const std::regex re(R"(^(.+)__x(-?\d+)_y(-?\d+)_s(-?\d+)$)");
        const std::string stem = strip_dir_and_ext(name);
        std::smatch m;
        if (!std::regex_match(stem, m, re)) return false;
        out.wsi_id = m[1];
        out.x = parse_coord(m[2], name);
        out.y = parse_coord(m[3], name);
        out.size = parse_coord(m[4], name);
        if (out.size < 1) throw MalformedCoordinate("patch size must be >= 1 in '" + name + "'");
        out.payload_path = name;
        return true;
    }

    std::string format(const PatchRecord& r) const override {
        return r.wsi_id + "__x" + std::to_string(r.x) + "_y" + std::to_string(r.y) + "_s" +
               std::to_string(r.size);
    }
};

// Dataset-style convention with the coordinates as the trailing numeric
// fields and no size in the name: <wsi_id>_<X>_<Y>[_img|_mask]. The patch
// size is fixed per dataset.
class TrailingXyCodec final : public PatchCodec {
public:
    TrailingXyCodec(std::string codec_id, std::int64_t fixed_size)
        : id_(std::move(codec_id)), fixed_size_(fixed_size) {}

    std::string id() const override { return id_; }

    bool try_parse(const std::string& name, PatchRecord& out) const override {
        static const std::regex re(R"(^(.+?)_(-?\d+)_(-?\d+)(?:_(?:img|mask))?$)");
        const std::string stem = strip_dir_and_ext(name);
        std::smatch m;
        if (!std::regex_match(stem, m, re)) return false;
        out.wsi_id = m[1];
        out.x = parse_coord(m[2], name);
        out.y = parse_coord(m[3], name);
        out.size = fixed_size_;
        out.payload_path = name;
        return true;
    }

    std::string format(const PatchRecord& r) const override {
        return r.wsi_id + "_" + std::to_string(r.x) + "_" + std::to_string(r.y);
    }

private:
    std::string id_;
    std::int64_t fixed_size_;
};

const std::vector<std::unique_ptr<PatchCodec>>& registry() {
    static const std::vector<std::unique_ptr<PatchCodec>> codecs = [] {
        std::vector<std::unique_ptr<PatchCodec>> v;
        v.push_back(std::make_unique<CanonicalCodec>());
        // The two public datasets embed top-left coordinates as trailing
        // fields and use fixed patch sizes (2048 and 1024 respectively).
        v.push_back(std::make_unique<TrailingXyCodec>("kpis", 2048));
        v.push_back(std::make_unique<TrailingXyCodec>("mice", 1024));
        return v;
    }();
    return codecs;
}

}  // namespace

const PatchCodec& codec_by_id(const std::string& id) {
    for (const auto& c : registry()) {
        if (c->id() == id) return *c;
    }
    throw UnrecognizedConvention("unknown filename convention '" + id + "'");
}

std::vector<std::string> registered_codecs() {
    std::vector<std::string> ids;
    for (const auto& c : registry()) ids.push_back(c->id());
    return ids;
}

PatchRecord parse_patch_filename(const std::string& name, const std::string& convention) {
    PatchRecord out;
    if (convention == "auto") {
        for (const auto& c : registry()) {
            if (c->try_parse(name, out)) return out;
        }
        throw UnrecognizedConvention("no registered convention matches '" + name + "'");
    }
    const PatchCodec& codec = codec_by_id(convention);
    if (!codec.try_parse(name, out)) {
        throw UnrecognizedConvention("'" + name + "' does not match convention '" + convention + "'");
    }
    return out;
}

std::string format_patch_filename(const PatchRecord& record) {
    if (record.wsi_id.empty()) throw ConfigError("format_patch_filename: empty wsi_id");
    if (record.x < 0 || record.y < 0) throw ConfigError("format_patch_filename: negative coordinates");
    if (record.size < 1) throw ConfigError("format_patch_filename: size must be >= 1");
    return CanonicalCodec().format(record);
}

}  // namespace slidepipe
