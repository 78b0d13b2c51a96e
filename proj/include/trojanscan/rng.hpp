#pragma once

#include <cstdint>
#include <vector>

namespace tscan {

// SplitMix64. Every seeded operation in the project draws from this
// generator so that results are identical across platforms and standard
// libraries (std::uniform_int_distribution is implementation-defined).
class SplitMix64 {
public:
    explicit SplitMix64(uint64_t seed) : state_(seed) {}

    uint64_t next() {
        state_ += 0x9E3779B97F4A7C15ull;
        uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    // Unbiased integer in [0, n). n must be > 0.
    uint64_t next_below(uint64_t n) {
        // Rejection sampling: discard the low sliver that would bias x % n.
        const uint64_t threshold = (0ull - n) % n; // 2^64 mod n
        for (;;) {
            uint64_t x = next();
            if (x >= threshold) return x % n;
        }
    }

    // Uniform in [0, 1) with 53 bits of precision.
    double next_double() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    // Uniform in [lo, hi).
    double next_double(double lo, double hi) { return lo + (hi - lo) * next_double(); }

private:
    uint64_t state_;
};

// In-place Fisher-Yates shuffle.
template <typename T>
void shuffle(std::vector<T>& v, SplitMix64& rng) {
    for (size_t i = v.size(); i > 1; --i) {
        size_t j = static_cast<size_t>(rng.next_below(i));
        std::swap(v[i - 1], v[j]);
    }
}

// k distinct indices drawn uniformly from [0, n), in selection order.
std::vector<size_t> sample_without_replacement(size_t n, size_t k, SplitMix64& rng);

} // namespace tscan
