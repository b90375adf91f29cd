#include <cstdlib>
#include <iostream>
#include <streambuf>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "divbnn/experiments.hpp"

namespace {

// Swallows everything; used when DIVBNN_LOG=quiet.
struct NullBuf : std::streambuf {
    int overflow(int c) override { return c; }
};

divbnn::TrainConfig resolve_config(const std::string& config_path,
                                   const std::vector<uint64_t>& seeds, const std::string& out_dir,
                                   const std::string& metric, const std::string& pretrained) {
    divbnn::TrainConfig cfg =
        config_path.empty() ? divbnn::TrainConfig{} : divbnn::load_config(config_path);
    if (!seeds.empty()) cfg.seeds = seeds;
    if (!out_dir.empty()) cfg.out_dir = out_dir;
    if (!metric.empty()) cfg.hyper.metric = divbnn::metric_from(metric);
    if (!pretrained.empty()) cfg.pretrained_checkpoint = pretrained;
    divbnn::validate(cfg);
    return cfg;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Mutual training of diversified Bayesian neural network peers"};
    app.require_subcommand(1);

    std::string config_path, out_dir, metric, checkpoint, out_path, pretrained;
    std::vector<uint64_t> seeds;
    size_t samples = 50;
    uint64_t eval_seed = 1;
    bool dry_run = false;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_path, "JSON config file");
        cmd->add_option("--seed", seeds, "override the config's seed list");
        cmd->add_option("--out", out_dir, "output directory for checkpoints and reports");
        cmd->add_option("--metric", metric, "parameter-space metric: w2 or kl");
    };

    CLI::App* train = app.add_subcommand("train", "train a diversified peer pair per seed");
    add_common(train);
    train->add_option("--pretrained", pretrained, "checkpoint whose means seed the second peer");
    train->add_flag("--dry-run", dry_run, "print the resolved plan without training");

    CLI::App* compare =
        app.add_subcommand("compare", "train independent, mutual and diversified baselines");
    add_common(compare);
    compare->add_flag("--dry-run", dry_run, "print the resolved plan without training");

    CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint on the config's dataset");
    eval->add_option("checkpoint", checkpoint, "checkpoint file")->required();
    eval->add_option("--config", config_path, "JSON config file");
    eval->add_option("--samples", samples, "posterior samples in the ensemble");
    eval->add_option("--seed", eval_seed, "dataset and sampling seed");

    CLI::App* gradcheck =
        app.add_subcommand("gradcheck", "finite-difference checks of every loss head");

    CLI::App* pretrain = app.add_subcommand("pretrain-deterministic",
                                            "train a point-estimate network for peer warm starts");
    pretrain->add_option("--config", config_path, "JSON config file");
    pretrain->add_option("--out", out_path, "checkpoint output path")->required();

    CLI::App* make_data = app.add_subcommand("make-data", "write the config's dataset to CSV");
    make_data->add_option("--config", config_path, "JSON config file");
    make_data->add_option("--out", out_path, "output path prefix")->required();

    CLI11_PARSE(app, argc, argv);

    NullBuf null_buf;
    std::ostream null_stream(&null_buf);
    const char* log_env = std::getenv("DIVBNN_LOG");
    std::ostream& log = (log_env && std::string(log_env) == "quiet") ? null_stream : std::cout;

    try {
        if (gradcheck->parsed()) return divbnn::cmd_gradcheck(log);
        if (eval->parsed()) {
            divbnn::TrainConfig cfg = resolve_config(config_path, {}, "", "", "");
            return divbnn::cmd_eval(checkpoint, cfg, samples, eval_seed, log);
        }
        divbnn::TrainConfig cfg = resolve_config(config_path, seeds, out_dir, metric, pretrained);
        if (train->parsed()) return divbnn::cmd_train(cfg, dry_run, log);
        if (compare->parsed()) return divbnn::cmd_compare(cfg, dry_run, log);
        if (pretrain->parsed()) return divbnn::cmd_pretrain(cfg, out_path, log);
        if (make_data->parsed()) return divbnn::cmd_make_data(cfg, out_path, log);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
