#include "slidepipe/wire.hpp"

#include <zlib.h>

#include <algorithm>

#include "slidepipe/binio.hpp"
#include "slidepipe/errors.hpp"

namespace slidepipe::wire {

namespace {

std::uint32_t crc32_of(const std::vector<std::uint8_t>& data) {
    return static_cast<std::uint32_t>(
        ::crc32(0, reinterpret_cast<const Bytef*>(data.data()), static_cast<uInt>(data.size())));
}

std::size_t expected_payload(Kind kind, std::uint16_t classes, std::uint16_t height,
                             std::uint16_t width) {
    const std::size_t pixels = static_cast<std::size_t>(height) * static_cast<std::size_t>(width);
    switch (kind) {
        case Kind::Request:
            return pixels * static_cast<std::size_t>(classes);
        case Kind::Response:
            return pixels * static_cast<std::size_t>(classes) * 4;
        case Kind::Error:
            return 0;  // free-form
    }
    return 0;
}

}  // namespace

void validate(const Header& header) {
    if (header.kind != Kind::Request && header.kind != Kind::Response &&
        header.kind != Kind::Error) {
        throw ProtocolError("frame: unknown kind " +
                            std::to_string(static_cast<int>(header.kind)));
    }
    if (header.payload_len > kMaxPayloadBytes) {
        throw ProtocolError("frame: payload length " + std::to_string(header.payload_len) +
                            " exceeds the limit");
    }
    if (header.kind != Kind::Error) {
        if (header.classes == 0 || header.height == 0 || header.width == 0) {
            throw ProtocolError("frame: zero dimension");
        }
        if (header.kind == Kind::Response && header.classes < 2) {
            throw ProtocolError("frame: responses need at least 2 classes");
        }
        const std::size_t want =
            expected_payload(header.kind, header.classes, header.height, header.width);
        if (header.payload_len != want) {
            throw ProtocolError("frame: payload length " + std::to_string(header.payload_len) +
                                " does not match declared dimensions (expected " +
                                std::to_string(want) + ")");
        }
    }
}

void validate_payload(const Frame& frame) {
    Header header;
    header.kind = frame.kind;
    header.patch_id = frame.patch_id;
    header.classes = frame.classes;
    header.height = frame.height;
    header.width = frame.width;
    header.payload_len = static_cast<std::uint32_t>(frame.payload.size());
    validate(header);
}

std::vector<std::uint8_t> encode(const Frame& frame) {
    validate_payload(frame);
    std::vector<std::uint8_t> out(kHeaderBytes + frame.payload.size() + kTrailerBytes);
    std::copy(kMagic, kMagic + 4, out.data());
    binio::put_u16(out.data() + 4, kVersion);
    out[6] = static_cast<std::uint8_t>(frame.kind);
    binio::put_u64(out.data() + 7, frame.patch_id);
    binio::put_u16(out.data() + 15, frame.classes);
    binio::put_u16(out.data() + 17, frame.height);
    binio::put_u16(out.data() + 19, frame.width);
    binio::put_u32(out.data() + 21, static_cast<std::uint32_t>(frame.payload.size()));
    std::copy(frame.payload.begin(), frame.payload.end(), out.begin() + kHeaderBytes);
    binio::put_u32(out.data() + kHeaderBytes + frame.payload.size(), crc32_of(frame.payload));
    return out;
}

Header decode_header(std::span<const std::uint8_t, kHeaderBytes> bytes) {
    if (!std::equal(kMagic, kMagic + 4, bytes.data())) {
        throw ProtocolError("frame: bad magic");
    }
    const std::uint16_t version = binio::get_u16(bytes.data() + 4);
    if (version != kVersion) {
        throw ProtocolError("frame: unsupported version " + std::to_string(version));
    }
    Header h;
    h.kind = static_cast<Kind>(bytes[6]);
    h.patch_id = binio::get_u64(bytes.data() + 7);
    h.classes = binio::get_u16(bytes.data() + 15);
    h.height = binio::get_u16(bytes.data() + 17);
    h.width = binio::get_u16(bytes.data() + 19);
    h.payload_len = binio::get_u32(bytes.data() + 21);
    validate(h);
    return h;
}

Frame decode(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < kHeaderBytes + kTrailerBytes) {
        throw ProtocolError("frame: truncated (got " + std::to_string(bytes.size()) + " bytes)");
    }
    const Header h = decode_header(bytes.first<kHeaderBytes>());
    if (bytes.size() != kHeaderBytes + h.payload_len + kTrailerBytes) {
        throw ProtocolError("frame: buffer size does not match the declared payload length");
    }

    Frame frame;
    frame.kind = h.kind;
    frame.patch_id = h.patch_id;
    frame.classes = h.classes;
    frame.height = h.height;
    frame.width = h.width;
    frame.payload.assign(bytes.begin() + kHeaderBytes,
                         bytes.begin() + kHeaderBytes + h.payload_len);
    const std::uint32_t declared = binio::get_u32(bytes.data() + kHeaderBytes + h.payload_len);
    if (declared != crc32_of(frame.payload)) {
        throw ProtocolError("frame: checksum mismatch");
    }
    return frame;
}

Frame make_request(std::uint64_t patch_id, const PixelBlock& patch) {
    if (patch.width > 0xffff || patch.height > 0xffff) {
        throw ProtocolError("request: patch dimensions exceed the wire format");
    }
    Frame frame;
    frame.kind = Kind::Request;
    frame.patch_id = patch_id;
    frame.classes = static_cast<std::uint16_t>(patch.channels);
    frame.height = static_cast<std::uint16_t>(patch.height);
    frame.width = static_cast<std::uint16_t>(patch.width);
    frame.payload = patch.pixels;
    return frame;
}

Frame make_response(std::uint64_t patch_id, const ScoreMap& scores) {
    if (scores.width > 0xffff || scores.height > 0xffff || scores.classes > 0xffff) {
        throw ProtocolError("response: score dimensions exceed the wire format");
    }
    Frame frame;
    frame.kind = Kind::Response;
    frame.patch_id = patch_id;
    frame.classes = static_cast<std::uint16_t>(scores.classes);
    frame.height = static_cast<std::uint16_t>(scores.height);
    frame.width = static_cast<std::uint16_t>(scores.width);
    frame.payload.resize(scores.scores.size() * 4);
    for (std::size_t i = 0; i < scores.scores.size(); ++i) {
        binio::put_f32(frame.payload.data() + i * 4, scores.scores[i]);
    }
    return frame;
}

Frame make_error(std::uint64_t patch_id, const std::string& message) {
    Frame frame;
    frame.kind = Kind::Error;
    frame.patch_id = patch_id;
    frame.payload.assign(message.begin(), message.end());
    return frame;
}

PixelBlock request_patch(const Frame& frame) {
    if (frame.kind != Kind::Request) throw ProtocolError("not a request frame");
    validate_payload(frame);
    PixelBlock patch(frame.width, frame.height, frame.classes);
    std::copy(frame.payload.begin(), frame.payload.end(), patch.pixels.begin());
    return patch;
}

ScoreMap response_scores(const Frame& frame) {
    if (frame.kind != Kind::Response) throw ProtocolError("not a response frame");
    validate_payload(frame);
    ScoreMap scores(frame.classes, frame.height, frame.width);
    for (std::size_t i = 0; i < scores.scores.size(); ++i) {
        scores.scores[i] = binio::get_f32(frame.payload.data() + i * 4);
    }
    return scores;
}

std::string error_message(const Frame& frame) {
    if (frame.kind != Kind::Error) throw ProtocolError("not an error frame");
    return std::string(frame.payload.begin(), frame.payload.end());
}

}  // namespace slidepipe::wire
