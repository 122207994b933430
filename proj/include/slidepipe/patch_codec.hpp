#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace slidepipe {

// A coordinate-bearing patch: (x, y) is the top-left corner of the patch
// within the source slide's raster.
struct PatchRecord {
    std::string wsi_id;
    std::int64_t x = 0;
    std::int64_t y = 0;
    std::int64_t size = 0;
    std::filesystem::path payload_path;

    bool operator==(const PatchRecord& o) const {
        return wsi_id == o.wsi_id && x == o.x && y == o.y && size == o.size;
    }
};

// Filename conventions differ per dataset; each is registered under a codec
// id and selected by CLI flag. The canonical convention is
//   <wsi_id>__x<X>_y<Y>_s<S>.<ext>
// with decimal, unpadded coordinates. Dataset codecs that do not carry the
// patch size in the name use a fixed size configured at registration.
class PatchCodec {
public:
    virtual ~PatchCodec() = default;
    virtual std::string id() const = 0;
    // Parses name (with or without directory and extension). Throws
    // MalformedCoordinate on bad fields; returns false when the name does
    // not match this convention at all.
    virtual bool try_parse(const std::string& name, PatchRecord& out) const = 0;
    // Stem only; the caller appends an extension.
    virtual std::string format(const PatchRecord& record) const = 0;
};

// Parses with the named codec, or with every registered codec when
// convention is "auto". Throws UnrecognizedConvention when nothing matches.
PatchRecord parse_patch_filename(const std::string& name, const std::string& convention = "canonical");

// Canonical-codec stem for a record, e.g. "a__x0_y0_s1".
std::string format_patch_filename(const PatchRecord& record);

// Registered codec ids, canonical first.
std::vector<std::string> registered_codecs();

const PatchCodec& codec_by_id(const std::string& id);

}  // namespace slidepipe
