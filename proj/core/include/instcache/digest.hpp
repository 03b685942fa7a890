#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace instcache {

// FNV-1a 64-bit. Used for artifact provenance digests, not security.
inline uint64_t fnv1a64(std::string_view data, uint64_t seed = 14695981039346656037ull) {
    uint64_t h = seed;
    for (unsigned char c : data) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

inline std::string hex64(uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<size_t>(i)] = digits[v & 0xF];
        v >>= 4;
    }
    return out;
}

inline std::string digest_hex(std::string_view data) { return hex64(fnv1a64(data)); }

// Digest of a file's contents; throws on unreadable path.
std::string digest_file(const std::string& path);

} // namespace instcache
