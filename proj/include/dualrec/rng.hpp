#pragma once

// Deterministic random streams. Every stream is derived from a single
// 64-bit seed plus a stream counter via splitmix64, so sub-components
// (world generation, per-request sampling, dropout, ...) get independent
// reproducible streams:  child = Rng(seed, stream_id).

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

namespace dualrec {

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

class Rng {
public:
    explicit Rng(uint64_t seed, uint64_t stream = 0)
        : eng_(mix(seed, stream)) {}

    static uint64_t mix(uint64_t seed, uint64_t stream) {
        return splitmix64(seed ^ (0x9E3779B97F4A7C15ULL * (stream + 1)));
    }

    uint64_t next_u64() { return eng_(); }

    // [0, 1), 53-bit resolution, engine-defined bits only (portable).
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    // Uniform integer in [0, n).
    int uniform_int(int n) {
        if (n <= 0) throw std::invalid_argument("uniform_int: n must be positive");
        return static_cast<int>(next_u64() % static_cast<uint64_t>(n));
    }

    bool bernoulli(double p) { return uniform() < p; }

    // Index drawn with the given (normalized) probabilities.
    int categorical(std::span<const double> probs) {
        double u = uniform();
        double acc = 0.0;
        for (size_t i = 0; i < probs.size(); ++i) {
            acc += probs[i];
            if (u < acc) return static_cast<int>(i);
        }
        return static_cast<int>(probs.size()) - 1;
    }

private:
    std::mt19937_64 eng_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace dualrec
