#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace stemlink {

using Rng = std::mt19937_64;

// splitmix64 mixer, used to derive independent seeds for named substreams
// so that stage reordering never changes any stream's draws.
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t fnv1a64(const void* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ULL) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::uint64_t hash_text(std::string_view s) { return fnv1a64(s.data(), s.size()); }

inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t salt) {
    return splitmix64(base ^ splitmix64(salt));
}

inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b) {
    return derive_seed(derive_seed(base, a), b);
}

inline std::uint64_t derive_seed(std::uint64_t base, std::string_view name) {
    return derive_seed(base, hash_text(name));
}

inline std::uint64_t derive_seed(std::uint64_t base, std::string_view name, std::uint64_t a, std::uint64_t b = 0) {
    return derive_seed(derive_seed(base, hash_text(name)), a, b);
}

} // namespace stemlink
