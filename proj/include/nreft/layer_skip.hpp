#pragma once

#include <cstdint>
#include <vector>

#include "nreft/rng.hpp"

namespace nreft {

// Layer-skipping policy for nested behavior models. A skip mask flags which
// transformer blocks are bypassed (identity on the residual stream) when the
// model generates rollouts. Masks are sampled once per gradient step and
// shared by every prompt in that step's batch.

struct SkipConfig {
    double ratio = 0.0;  // fraction of layers to skip, in [0, 1)
    int border = 0;      // layers protected at each end of the stack
    int num_layers = 0;

    void validate() const;  // throws ConfigError
};

struct SkipMask {
    std::vector<uint8_t> sigma;  // 1 = skip this layer
    int skip_count = 0;

    static SkipMask none(int num_layers) { return SkipMask{std::vector<uint8_t>(static_cast<size_t>(num_layers), 0), 0}; }
    bool is_identity() const { return skip_count == 0; }
    std::vector<int> skipped_indices() const;
};

// Indices eligible for skipping: {border, ..., num_layers - 1 - border}.
// Throws ConfigError when the window is empty.
std::vector<int> valid_set(const SkipConfig& cfg);

// Number of layers to skip: 0 when ratio is 0, otherwise
// max(1, round-half-up(num_layers * ratio)). Throws ConfigError when the
// count exceeds the valid set.
int skip_count(const SkipConfig& cfg);

// Draws skip_count distinct indices uniformly without replacement from the
// valid set. Deterministic for a fixed generator state; a zero count consumes
// no randomness and returns the all-zeros mask.
SkipMask sample_mask(const SkipConfig& cfg, Rng& rng);

}  // namespace nreft
