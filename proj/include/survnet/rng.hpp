#pragma once

#include <cstdint>

namespace survnet {

/// Finalizer from the splitmix64 generator. Used to decorrelate seeds that
/// differ in only a few bits before they reach mt19937_64.
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Deterministic derived seed for a (seed, salt) pair.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
    return splitmix64(seed ^ splitmix64(salt));
}

} // namespace survnet
