#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>
#include <vector>

#include "instcache/digest.hpp"

namespace instcache {

// Deterministic RNG with explicitly pinned derivations. std::shuffle and the
// std distributions are implementation-defined, so everything that must
// reproduce byte-identically across builds goes through this class.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed ? seed : 0x9E3779B97F4A7C15ull) {}

    // Derive an independent stream for a named stage.
    Rng fork(std::string_view tag) const {
        return Rng(fnv1a64(tag, state_ ^ 0xA5A5A5A5A5A5A5A5ull));
    }

    // splitmix64
    uint64_t next_u64() {
        uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1).
    double next_double() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // Uniform integer in [0, bound). bound must be > 0.
    uint64_t next_below(uint64_t bound) {
        // Rejection sampling keeps the draw exactly uniform.
        const uint64_t threshold = (0 - bound) % bound;
        for (;;) {
            const uint64_t r = next_u64();
            if (r >= threshold) return r % bound;
        }
    }

    // Exponential with the given rate (mean 1/rate).
    double next_exponential(double rate) {
        double u;
        do {
            u = next_double();
        } while (u <= 0.0);
        return -std::log(u) / rate;
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            const size_t j = static_cast<size_t>(next_below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    uint64_t state_;
};

} // namespace instcache
