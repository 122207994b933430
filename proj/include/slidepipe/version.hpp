#pragma once

namespace slidepipe {

constexpr const char* kVersion = "0.1.0";
constexpr int kProtocolVersion = 1;

}  // namespace slidepipe
