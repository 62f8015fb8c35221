#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace nreft {

// All randomness in the project flows through this header. The generators and
// the sampling arithmetic are fully specified (mt19937_64 + explicit bit
// manipulation), so a run is byte-reproducible from its master seed on any
// platform. std::uniform_*_distribution and std::normal_distribution are
// deliberately avoided: their algorithms are implementation-defined.

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

// Scope tags for deriving per-phase random streams from one master seed.
enum class SeedScope : uint64_t {
    kParamInit = 1,
    kDataset = 2,
    kSftShuffle = 3,
    kReftBatch = 4,
    kSkipMask = 5,
    kRollout = 6,
    kEval = 7,
    kThroughput = 8,
    kTheory = 9,
};

// Counter-based derivation: master seed + (scope, step, index) -> stream seed.
inline uint64_t derive_seed(uint64_t master, SeedScope scope, uint64_t step = 0, uint64_t index = 0) {
    uint64_t s = splitmix64(master ^ splitmix64(static_cast<uint64_t>(scope) * 0x9e3779b97f4a7c15ull));
    s = splitmix64(s ^ splitmix64(step + 0x2545f4914f6cdd1dull));
    return splitmix64(s ^ splitmix64(index + 0xd1342543de82ef95ull));
}

class Rng {
public:
    explicit Rng(uint64_t seed) : gen_(seed) {}

    uint64_t next_u64() { return gen_(); }

    // uniform in [0, 1) with 53 random bits
    double next_double() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    // uniform integer in [0, n) via rejection sampling (no modulo bias)
    uint64_t below(uint64_t n) {
        if (n == 0) return 0;
        const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        uint64_t r;
        do {
            r = gen_();
        } while (r >= limit);
        return r % n;
    }

    // standard normal via Box-Muller with a cached spare
    double gaussian() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = next_double();
        double u2 = next_double();
        while (u1 <= 0.0) u1 = next_double();
        const double mag = std::sqrt(-2.0 * std::log(u1));
        const double two_pi = 6.283185307179586476925286766559;
        spare_ = mag * std::sin(two_pi * u2);
        has_spare_ = true;
        return mag * std::cos(two_pi * u2);
    }

private:
    std::mt19937_64 gen_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace nreft
