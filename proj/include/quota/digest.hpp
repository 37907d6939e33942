#pragma once

#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <vector>

namespace quota {

// FNV-1a over raw bytes; used for determinism checks and report headers.
inline uint64_t fnv1a64(const void* data, size_t len, uint64_t seed = 0xcbf29ce484222325ULL) {
    const unsigned char* p = static_cast<const unsigned char*>(data);
    uint64_t h = seed;
    for (size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline uint64_t fnv1a64(std::span<const double> values, uint64_t seed = 0xcbf29ce484222325ULL) {
    return fnv1a64(values.data(), values.size() * sizeof(double), seed);
}

inline std::string to_hex(uint64_t h) {
    static const char* digits = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i) {
        s[i] = digits[h & 0xf];
        h >>= 4;
    }
    return s;
}

inline std::string hex_digest(std::span<const double> values) {
    return to_hex(fnv1a64(values));
}

inline std::string hex_digest(const std::string& text) {
    return to_hex(fnv1a64(text.data(), text.size()));
}

}  // namespace quota
