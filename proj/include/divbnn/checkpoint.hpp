#pragma once

#include <optional>
#include <string>
#include <vector>

#include "divbnn/feature_diversity.hpp"
#include "divbnn/trainer.hpp"
#include "divbnn/variational.hpp"

namespace divbnn {

// JSON header plus flat little-endian float64 payload. Save -> load -> save is
// byte-identical; loads check the architecture hash.
struct Checkpoint {
    uint32_t version = 1;
    uint64_t arch_hash = 0;
    ArchSpec arch;
    SamplingMode mode = SamplingMode::BBB;
    scalar_t prior_std = 0.1;
    bool deterministic = false; // point-estimate model: payload holds weights only
    std::vector<scalar_t> model_params;            // flatten_params order, or raw weights
    std::vector<std::vector<scalar_t>> attention;  // per fused pair: w_q, w_k, w_v flats
    std::optional<Adam::State> optimizer;
    uint64_t rng_state = 0;
};

uint64_t arch_hash(const ArchSpec& arch, SamplingMode mode, bool deterministic);

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

Checkpoint checkpoint_of(const BnnModel& model, const FeatureFuser& fuser, uint64_t rng_state);

// Per-layer [w0, b0, w1, b1, ...] mean arrays for peer initialization. Works
// for both variational (uses mu) and deterministic checkpoints.
std::vector<std::vector<scalar_t>> checkpoint_means(const Checkpoint& ckpt);

} // namespace divbnn
