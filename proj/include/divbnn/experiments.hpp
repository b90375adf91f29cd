#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "divbnn/checkpoint.hpp"
#include "divbnn/config.hpp"
#include "divbnn/metrics.hpp"
#include "divbnn/trainer.hpp"

namespace divbnn {

std::string method_name(TrainMethod m);
TrainMethod method_from(const std::string& name);

// Point-estimate MLP trained on softmax cross-entropy with Adam; the result
// seeds one peer's posterior means via `pretrained_checkpoint`.
Checkpoint pretrain_deterministic(const TrainConfig& cfg, uint64_t seed);

// Variational model rebuilt from a (non-deterministic) checkpoint.
BnnModel model_from_checkpoint(const Checkpoint& ckpt);

struct SeedRun {
    uint64_t seed = 0;
    TrainHistory history;
    MetricsReport b1, b2;
};

struct MethodResult {
    TrainMethod method = TrainMethod::Ours;
    std::vector<SeedRun> runs;
};

// Train one peer pair end to end and evaluate both peers on the validation
// split. With a non-empty out_dir, checkpoints and a per-epoch loss CSV are
// written there.
SeedRun run_seed(const TrainConfig& cfg, TrainMethod method, uint64_t seed,
                 const std::string& out_dir);

void write_history_csv(const std::string& path, const std::string& method, uint64_t seed,
                       uint64_t cfg_hash, const TrainHistory& hist);

nlohmann::json results_json(const TrainConfig& cfg, const std::vector<MethodResult>& results);
void write_results_csv(const std::string& path, const std::vector<MethodResult>& results);

// Seed-averaged ACC/NLL/ECE per method and peer, plus an Average row per method.
std::string summary_table(const std::vector<MethodResult>& results);
// Seed-averaged retained-subset accuracy per retention fraction.
std::string retention_table(const std::vector<MethodResult>& results);

int cmd_train(const TrainConfig& cfg, bool dry_run, std::ostream& log);
int cmd_compare(const TrainConfig& cfg, bool dry_run, std::ostream& log);
int cmd_eval(const std::string& ckpt_path, const TrainConfig& cfg, size_t samples, uint64_t seed,
             std::ostream& log);
int cmd_pretrain(const TrainConfig& cfg, const std::string& out_path, std::ostream& log);
int cmd_make_data(const TrainConfig& cfg, const std::string& out_prefix, std::ostream& log);
// Finite-difference checks of the four loss heads on small models; returns
// nonzero when any check fails.
int cmd_gradcheck(std::ostream& log);

} // namespace divbnn
