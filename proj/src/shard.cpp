#include <zlib.h>

#include <cstdio>
#include <vector>

#include "slidepipe/binio.hpp"
#include "slidepipe/errors.hpp"
#include "slidepipe/raster_io.hpp"

namespace slidepipe {

// Score shard layout: magic "WSSH", version u16, classes u16, height u32,
// width u32, then classes*height*width little-endian f32, then CRC32 of the
// payload bytes. All integers little-endian.

namespace {

constexpr char kMagic[4] = {'W', 'S', 'S', 'H'};
constexpr std::uint16_t kVersion = 1;
constexpr std::size_t kHeaderBytes = 4 + 2 + 2 + 4 + 4;

std::uint32_t crc32_of(const std::uint8_t* data, std::size_t n) {
    return static_cast<std::uint32_t>(
        ::crc32(0, reinterpret_cast<const Bytef*>(data), static_cast<uInt>(n)));
}

}  // namespace

void write_score_shard(const std::filesystem::path& path, const ScoreMap& scores) {
    if (scores.classes < 2 || scores.height < 1 || scores.width < 1) {
        throw ConfigError("write_score_shard: invalid score map shape");
    }

    std::vector<std::uint8_t> payload(scores.scores.size() * 4);
    for (std::size_t i = 0; i < scores.scores.size(); ++i) {
        binio::put_f32(payload.data() + i * 4, scores.scores[i]);
    }

    std::uint8_t header[kHeaderBytes];
    std::copy(kMagic, kMagic + 4, header);
    binio::put_u16(header + 4, kVersion);
    binio::put_u16(header + 6, static_cast<std::uint16_t>(scores.classes));
    binio::put_u32(header + 8, static_cast<std::uint32_t>(scores.height));
    binio::put_u32(header + 12, static_cast<std::uint32_t>(scores.width));

    std::uint8_t trailer[4];
    binio::put_u32(trailer, crc32_of(payload.data(), payload.size()));

    std::FILE* f = std::fopen(path.string().c_str(), "wb");
    if (f == nullptr) throw IoError("cannot create '" + path.string() + "'");
    const bool ok = std::fwrite(header, 1, kHeaderBytes, f) == kHeaderBytes &&
                    std::fwrite(payload.data(), 1, payload.size(), f) == payload.size() &&
                    std::fwrite(trailer, 1, 4, f) == 4;
    const bool closed = std::fclose(f) == 0;
    if (!ok || !closed) {
        std::error_code ec;
        std::filesystem::remove(path, ec);
        throw IoError("write failed for '" + path.string() + "'");
    }
}

ScoreMap read_score_shard(const std::filesystem::path& path) {
    std::FILE* f = std::fopen(path.string().c_str(), "rb");
    if (f == nullptr) throw IoError("cannot open '" + path.string() + "'");
    struct Closer {
        std::FILE* f;
        ~Closer() { std::fclose(f); }
    } closer{f};

    std::uint8_t header[kHeaderBytes];
    if (std::fread(header, 1, kHeaderBytes, f) != kHeaderBytes) {
        throw CorruptFile("shard '" + path.string() + "': truncated header");
    }
    if (!std::equal(kMagic, kMagic + 4, header)) {
        throw CorruptFile("shard '" + path.string() + "': bad magic");
    }
    if (binio::get_u16(header + 4) != kVersion) {
        throw CorruptFile("shard '" + path.string() + "': unsupported version");
    }
    const int classes = binio::get_u16(header + 6);
    const std::int64_t height = binio::get_u32(header + 8);
    const std::int64_t width = binio::get_u32(header + 12);
    if (classes < 2 || height < 1 || width < 1) {
        throw CorruptFile("shard '" + path.string() + "': bad shape");
    }

    ScoreMap out(classes, height, width);
    std::vector<std::uint8_t> payload(out.scores.size() * 4);
    if (std::fread(payload.data(), 1, payload.size(), f) != payload.size()) {
        throw CorruptFile("shard '" + path.string() + "': truncated payload");
    }
    std::uint8_t trailer[4];
    if (std::fread(trailer, 1, 4, f) != 4) {
        throw CorruptFile("shard '" + path.string() + "': missing checksum");
    }
    if (binio::get_u32(trailer) != crc32_of(payload.data(), payload.size())) {
        throw CorruptFile("shard '" + path.string() + "': checksum mismatch");
    }
    for (std::size_t i = 0; i < out.scores.size(); ++i) {
        out.scores[i] = binio::get_f32(payload.data() + i * 4);
    }
    return out;
}

}  // namespace slidepipe
