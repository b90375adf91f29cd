#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "divbnn/datasets.hpp"
#include "divbnn/trainer.hpp"

namespace divbnn {

struct TrainConfig {
    ArchSpec arch{{2, 64, 64, 2}, {1, 2, 3}};
    SamplingMode mode = SamplingMode::Radial;
    scalar_t prior_std = 0.1;
    Hyperparams hyper;
    DatasetSpec dataset{.kind = "two_moons", .n = 1000, .noise = 0.1};
    std::vector<uint64_t> seeds{1, 2, 3};
    size_t eval_samples = 50;
    std::vector<scalar_t> retention_fractions{0.2, 0.4, 0.6, 0.8};
    size_t ece_bins = 20;
    std::string out_dir = "runs";
    std::string pretrained_checkpoint; // empty = both peers from scratch
    size_t pretrain_epochs = 30;
};

// Parse + validate; validation errors name the offending key.
TrainConfig parse_config(const nlohmann::json& j);
TrainConfig load_config(const std::string& path);
nlohmann::json to_json(const TrainConfig& cfg);
void validate(const TrainConfig& cfg);

uint64_t fnv1a64(const std::string& bytes);
uint64_t config_hash(const TrainConfig& cfg);

std::string sampling_mode_name(SamplingMode m);
SamplingMode sampling_mode_from(const std::string& name);
std::string metric_name(ParamMetric m);
ParamMetric metric_from(const std::string& name);

} // namespace divbnn
