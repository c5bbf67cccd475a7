#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace gap::rng {

using Engine = std::mt19937_64;

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// FNV-1a over a purpose tag, so call sites can name their streams.
constexpr std::uint64_t tag(std::string_view s) noexcept {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : s) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return h;
}

constexpr std::uint64_t hash64(std::uint64_t a, std::uint64_t b) noexcept {
    return splitmix64(splitmix64(a) ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2)));
}

constexpr std::uint64_t hash64(std::uint64_t a, std::uint64_t b, std::uint64_t c) noexcept {
    return hash64(hash64(a, b), c);
}

/// Derives a child seed. Streams are keyed by (seed, purpose, index), so
/// growing an ensemble never changes the draws of existing members.
constexpr std::uint64_t derive(std::uint64_t seed, std::string_view purpose,
                               std::uint64_t index = 0) noexcept {
    return hash64(seed, tag(purpose), index);
}

inline Engine stream(std::uint64_t seed, std::string_view purpose, std::uint64_t index = 0) {
    return Engine(derive(seed, purpose, index));
}

inline double normal(Engine& g) {
    std::normal_distribution<double> n(0.0, 1.0);
    return n(g);
}

}  // namespace gap::rng
