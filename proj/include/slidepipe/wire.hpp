#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "slidepipe/raster_reader.hpp"
#include "slidepipe/scoremap.hpp"

namespace slidepipe::wire {

// Framed binary byte stream between the pipeline and an external predictor.
// Layout (all integers little-endian):
//
//   offset  size  field
//   0       4     magic "WSPR"
//   4       2     version (currently 1)
//   6       1     kind: 0 = request, 1 = response, 2 = error
//   7       8     patch_id
//   15      2     classes   (request: patch channels; response: predictor C)
//   17      2     height
//   19      2     width
//   21      4     payload length in bytes
//   25      ...   payload
//   +len    4     CRC32 of the payload
//
// Request payload: height*width*classes interleaved 8-bit pixels.
// Response payload: classes*height*width little-endian 32-bit floats,
// plane-major. Error payload: UTF-8 message.

constexpr char kMagic[4] = {'W', 'S', 'P', 'R'};
constexpr std::uint16_t kVersion = 1;
constexpr std::size_t kHeaderBytes = 25;
constexpr std::size_t kTrailerBytes = 4;
constexpr std::uint32_t kMaxPayloadBytes = 1u << 30;

enum class Kind : std::uint8_t { Request = 0, Response = 1, Error = 2 };

struct Frame {
    Kind kind = Kind::Request;
    std::uint64_t patch_id = 0;
    std::uint16_t classes = 0;
    std::uint16_t height = 0;
    std::uint16_t width = 0;
    std::vector<std::uint8_t> payload;

    bool operator==(const Frame&) const = default;
};

struct Header {
    Kind kind = Kind::Request;
    std::uint64_t patch_id = 0;
    std::uint16_t classes = 0;
    std::uint16_t height = 0;
    std::uint16_t width = 0;
    std::uint32_t payload_len = 0;
};

// Full wire image of a frame, checksum included.
std::vector<std::uint8_t> encode(const Frame& frame);

// Header parse + validation (magic, version, kind, length sanity).
Header decode_header(std::span<const std::uint8_t, kHeaderBytes> bytes);

// Whole-buffer decode including checksum verification and the
// per-kind payload-length rules.
Frame decode(std::span<const std::uint8_t> bytes);

// Validates the dimension/payload consistency rules for a decoded frame.
void validate(const Header& header);
void validate_payload(const Frame& frame);

Frame make_request(std::uint64_t patch_id, const PixelBlock& patch);
Frame make_response(std::uint64_t patch_id, const ScoreMap& scores);
Frame make_error(std::uint64_t patch_id, const std::string& message);

PixelBlock request_patch(const Frame& frame);
ScoreMap response_scores(const Frame& frame);
std::string error_message(const Frame& frame);

}  // namespace slidepipe::wire
