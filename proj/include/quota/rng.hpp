#pragma once

#include <cstdint>

namespace quota {

// splitmix64: tiny deterministic generator used for weight init and sample
// synthesis. Chosen over std::mt19937 + distributions because distribution
// output is implementation-defined; this stream is bit-stable everywhere.
struct SplitMix64 {
    uint64_t state = 0;

    explicit SplitMix64(uint64_t seed) : state(seed) {}

    uint64_t next() {
        uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // uniform in [0, 1) with 53 bits of mantissa
    double next_double() {
        return static_cast<double>(next() >> 11) * 0x1.0p-53;
    }

    // uniform in [lo, hi)
    double next_uniform(double lo, double hi) {
        return lo + (hi - lo) * next_double();
    }

    // uniform integer in [lo, hi] inclusive
    int next_int(int lo, int hi) {
        uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
        return lo + static_cast<int>(next() % span);
    }
};

// Derives an independent stream for (seed, index) pairs, e.g. one per sample.
inline uint64_t mix_seed(uint64_t seed, uint64_t index) {
    SplitMix64 g(seed ^ (0x632be59bd9b4e019ULL + index * 0xff51afd7ed558ccdULL));
    return g.next();
}

}  // namespace quota
