#pragma once

#include <cstdint>
#include <initializer_list>

// Counter-based deterministic randomness. Every draw is a pure function of
// the key words fed in, so results are reproducible across platforms, runs
// and worker counts. Callers key streams by (seed, entity ids, counter).

namespace slidepipe::detrand {

constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ull;

// SplitMix64 finalizer; full avalanche on 64 bits.
constexpr std::uint64_t mix64(std::uint64_t z) {
    z ^= z >> 30;
    z *= 0xbf58476d1ce4e5b9ull;
    z ^= z >> 27;
    z *= 0x94d049bb133111ebull;
    z ^= z >> 31;
    return z;
}

// Absorb a sequence of key words into one well-mixed 64-bit value.
constexpr std::uint64_t hash(std::initializer_list<std::uint64_t> words) {
    std::uint64_t h = 0x6a09e667f3bcc909ull;
    for (std::uint64_t w : words) {
        h += kGolden;
        h = mix64(h ^ w);
    }
    return mix64(h ^ (0x2545f4914f6cdd1dull + static_cast<std::uint64_t>(words.size())));
}

// Uniform double in [0, 1) using the top 53 bits.
constexpr double uniform01(std::uint64_t h) {
    return static_cast<double>(h >> 11) * 0x1.0p-53;
}

constexpr double uniform01(std::initializer_list<std::uint64_t> words) {
    return uniform01(hash(words));
}

// Uniform double in [lo, hi).
constexpr double uniform_in(double lo, double hi, std::initializer_list<std::uint64_t> words) {
    return lo + (hi - lo) * uniform01(words);
}

constexpr bool bernoulli(double p, std::initializer_list<std::uint64_t> words) {
    return uniform01(words) < p;
}

// Unbiased-enough index draw via the multiply-shift trick (n is tiny
// relative to 2^64 everywhere this is used).
constexpr std::uint64_t uniform_index(std::uint64_t n, std::initializer_list<std::uint64_t> words) {
    using u128 = unsigned __int128;
    return static_cast<std::uint64_t>((static_cast<u128>(hash(words)) * n) >> 64);
}

}  // namespace slidepipe::detrand
