#pragma once

#include <cstdint>
#include <random>

namespace ham::rng {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Replicate key reserved for draws that are frozen per cell.
inline constexpr std::uint64_t kFrozen = ~0ULL;

/// Seed for the stream owned by (master, cell, replicate). Streams do not
/// depend on evaluation order, so thread count cannot change results.
inline std::uint64_t stream_seed(std::uint64_t master, std::uint64_t cell, std::uint64_t replicate) {
    std::uint64_t h = splitmix64(master);
    h = splitmix64(h ^ cell);
    h = splitmix64(h ^ replicate);
    return h;
}

inline std::mt19937_64 stream(std::uint64_t master, std::uint64_t cell, std::uint64_t replicate) {
    return std::mt19937_64(stream_seed(master, cell, replicate));
}

/// Stable 64-bit hash of a label (FNV-1a), used to key cells by name.
inline std::uint64_t label_hash(const char* s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (; *s; ++s) {
        h ^= static_cast<unsigned char>(*s);
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace ham::rng
