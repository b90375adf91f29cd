#include "divbnn/config.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

namespace divbnn {

using nlohmann::json;

std::string sampling_mode_name(SamplingMode m) {
    return m == SamplingMode::BBB ? "bbb" : "radial";
}

SamplingMode sampling_mode_from(const std::string& name) {
    if (name == "bbb") return SamplingMode::BBB;
    if (name == "radial") return SamplingMode::Radial;
    throw std::invalid_argument("sampling_mode: expected 'bbb' or 'radial', got '" + name + "'");
}

std::string metric_name(ParamMetric m) { return m == ParamMetric::W2 ? "w2" : "kl"; }

ParamMetric metric_from(const std::string& name) {
    if (name == "w2") return ParamMetric::W2;
    if (name == "kl") return ParamMetric::KL;
    throw std::invalid_argument("metric: expected 'w2' or 'kl', got '" + name + "'");
}

namespace {

[[noreturn]] void bad_key(const std::string& key, const std::string& why) {
    throw std::invalid_argument("config: " + key + ": " + why);
}

template <typename T>
T get_or(const json& j, const std::string& key, T fallback) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        bad_key(key, e.what());
    }
}

// Default decay points at fixed fractions of the stage length.
std::vector<size_t> scaled_decays(size_t epochs, std::initializer_list<double> fractions) {
    std::vector<size_t> out;
    for (double f : fractions) {
        size_t e = static_cast<size_t>(std::llround(f * epochs));
        if (e > 0 && e < epochs) out.push_back(e);
    }
    return out;
}

} // namespace

TrainConfig parse_config(const json& j) {
    TrainConfig cfg;

    if (j.contains("architecture")) {
        const json& a = j.at("architecture");
        cfg.arch.layer_widths = get_or<std::vector<size_t>>(a, "layer_widths", cfg.arch.layer_widths);
        if (a.contains("block_boundaries"))
            cfg.arch.block_boundaries = get_or<std::vector<size_t>>(a, "block_boundaries", {});
        else
            cfg.arch.block_boundaries.clear();
    }
    if (cfg.arch.block_boundaries.empty()) {
        cfg.arch.block_boundaries.resize(cfg.arch.layer_widths.size() > 1
                                             ? cfg.arch.layer_widths.size() - 1
                                             : 0);
        for (size_t i = 0; i < cfg.arch.block_boundaries.size(); ++i)
            cfg.arch.block_boundaries[i] = i + 1;
    }

    cfg.mode = sampling_mode_from(get_or<std::string>(j, "sampling_mode", "radial"));
    cfg.prior_std = get_or<scalar_t>(j, "prior_std", 0.1);

    // preset "small": T=3, alpha=1, beta=2; preset "large": all 1
    std::string preset = get_or<std::string>(j, "preset", "small");
    if (preset == "large") {
        cfg.hyper.temperature = 1.0;
        cfg.hyper.alpha = 1.0;
        cfg.hyper.beta = 1.0;
    } else if (preset != "small") {
        bad_key("preset", "expected 'small' or 'large'");
    }
    if (j.contains("hyper")) {
        const json& h = j.at("hyper");
        cfg.hyper.temperature = get_or<scalar_t>(h, "temperature", cfg.hyper.temperature);
        cfg.hyper.alpha = get_or<scalar_t>(h, "alpha", cfg.hyper.alpha);
        cfg.hyper.beta = get_or<scalar_t>(h, "beta", cfg.hyper.beta);
    }

    if (j.contains("schedule")) {
        const json& s = j.at("schedule");
        if (s.contains("stage1_epochs") && s.at("stage1_epochs").is_number() &&
            s.at("stage1_epochs").get<double>() < 0)
            bad_key("schedule.stage1_epochs", "must be >= 0");
        if (s.contains("stage2_epochs") && s.at("stage2_epochs").is_number() &&
            s.at("stage2_epochs").get<double>() < 0)
            bad_key("schedule.stage2_epochs", "must be >= 0");
        cfg.hyper.stage1_epochs = get_or<size_t>(s, "stage1_epochs", cfg.hyper.stage1_epochs);
        cfg.hyper.stage2_epochs = get_or<size_t>(s, "stage2_epochs", cfg.hyper.stage2_epochs);
        cfg.hyper.lr.initial = get_or<scalar_t>(s, "lr", cfg.hyper.lr.initial);
        cfg.hyper.lr.decay_factor = get_or<scalar_t>(s, "decay_factor", cfg.hyper.lr.decay_factor);
        cfg.hyper.batch_size = get_or<size_t>(s, "batch_size", cfg.hyper.batch_size);
        if (s.contains("stage1_decay_epochs"))
            cfg.hyper.lr.stage1_decay_epochs =
                get_or<std::vector<size_t>>(s, "stage1_decay_epochs", {});
        else
            cfg.hyper.lr.stage1_decay_epochs =
                scaled_decays(cfg.hyper.stage1_epochs, {0.4, 0.6, 0.8, 0.9});
        if (s.contains("stage2_decay_epochs"))
            cfg.hyper.lr.stage2_decay_epochs =
                get_or<std::vector<size_t>>(s, "stage2_decay_epochs", {});
        else
            cfg.hyper.lr.stage2_decay_epochs =
                scaled_decays(cfg.hyper.stage2_epochs, {0.3, 0.6, 0.9});
    } else {
        cfg.hyper.lr.stage1_decay_epochs = scaled_decays(cfg.hyper.stage1_epochs, {0.4, 0.6, 0.8, 0.9});
        cfg.hyper.lr.stage2_decay_epochs = scaled_decays(cfg.hyper.stage2_epochs, {0.3, 0.6, 0.9});
    }

    cfg.hyper.grad_clip = get_or<scalar_t>(j, "grad_clip", 0.0);
    cfg.hyper.metric = metric_from(get_or<std::string>(j, "metric", "w2"));

    if (j.contains("attention")) {
        const json& a = j.at("attention");
        cfg.hyper.attention_dim = get_or<size_t>(a, "dim", cfg.hyper.attention_dim);
        cfg.hyper.preferred_tokens = get_or<size_t>(a, "tokens", cfg.hyper.preferred_tokens);
        cfg.hyper.attention_scale = get_or<bool>(a, "scale", cfg.hyper.attention_scale);
    }

    if (j.contains("dataset")) {
        const json& d = j.at("dataset");
        cfg.dataset.kind = get_or<std::string>(d, "kind", cfg.dataset.kind);
        cfg.dataset.n = get_or<size_t>(d, "n", cfg.dataset.n);
        cfg.dataset.classes = get_or<size_t>(d, "classes", cfg.dataset.classes);
        cfg.dataset.noise = get_or<scalar_t>(d, "noise", cfg.dataset.noise);
        cfg.dataset.label_noise = get_or<scalar_t>(d, "label_noise", cfg.dataset.label_noise);
        cfg.dataset.path = get_or<std::string>(d, "path", "");
        cfg.dataset.images_path = get_or<std::string>(d, "images_path", "");
        cfg.dataset.labels_path = get_or<std::string>(d, "labels_path", "");
        cfg.dataset.subset_size = get_or<size_t>(d, "subset_size", 0);
        cfg.dataset.val_fraction = get_or<scalar_t>(d, "val_fraction", cfg.dataset.val_fraction);
    }

    cfg.seeds = get_or<std::vector<uint64_t>>(j, "seeds", cfg.seeds);
    cfg.eval_samples = get_or<size_t>(j, "eval_samples", cfg.eval_samples);
    cfg.retention_fractions =
        get_or<std::vector<scalar_t>>(j, "retention_fractions", cfg.retention_fractions);
    cfg.ece_bins = get_or<size_t>(j, "ece_bins", cfg.ece_bins);
    cfg.out_dir = get_or<std::string>(j, "out", cfg.out_dir);
    cfg.pretrained_checkpoint = get_or<std::string>(j, "pretrained_checkpoint", "");
    cfg.pretrain_epochs = get_or<size_t>(j, "pretrain_epochs", cfg.pretrain_epochs);

    validate(cfg);
    return cfg;
}

void validate(const TrainConfig& cfg) {
    if (cfg.arch.layer_widths.size() < 2)
        bad_key("architecture.layer_widths", "need input and output widths");
    for (size_t w : cfg.arch.layer_widths)
        if (w == 0) bad_key("architecture.layer_widths", "widths must be positive");
    size_t layers = cfg.arch.layer_widths.size() - 1;
    if (cfg.arch.block_boundaries.empty() || cfg.arch.block_boundaries.back() != layers)
        bad_key("architecture.block_boundaries", "must end at layer count " + std::to_string(layers));
    for (size_t i = 1; i < cfg.arch.block_boundaries.size(); ++i)
        if (cfg.arch.block_boundaries[i] <= cfg.arch.block_boundaries[i - 1])
            bad_key("architecture.block_boundaries", "must be strictly increasing");
    if (cfg.prior_std <= 0) bad_key("prior_std", "must be positive");
    if (cfg.hyper.temperature <= 0) bad_key("hyper.temperature", "must be positive");
    if (cfg.hyper.alpha < 0) bad_key("hyper.alpha", "must be >= 0");
    if (cfg.hyper.beta < 0) bad_key("hyper.beta", "must be >= 0");
    if (cfg.hyper.lr.initial <= 0) bad_key("schedule.lr", "must be positive");
    if (cfg.hyper.batch_size == 0) bad_key("schedule.batch_size", "must be positive");
    if (cfg.hyper.attention_dim == 0) bad_key("attention.dim", "must be positive");
    if (cfg.hyper.preferred_tokens == 0) bad_key("attention.tokens", "must be positive");
    if (cfg.seeds.empty()) bad_key("seeds", "need at least one seed");
    if (cfg.eval_samples == 0) bad_key("eval_samples", "must be positive");
    if (cfg.ece_bins == 0) bad_key("ece_bins", "must be positive");
    for (scalar_t f : cfg.retention_fractions)
        if (!(f > 0 && f <= 1)) bad_key("retention_fractions", "fractions must lie in (0, 1]");
    if (cfg.dataset.val_fraction <= 0 || cfg.dataset.val_fraction >= 1)
        bad_key("dataset.val_fraction", "must lie in (0, 1)");
    if (cfg.dataset.label_noise < 0 || cfg.dataset.label_noise > 1)
        bad_key("dataset.label_noise", "must lie in [0, 1]");
}

TrainConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("config: cannot open " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw std::runtime_error("config: parse error in " + path + ": " + e.what());
    }
    return parse_config(j);
}

json to_json(const TrainConfig& cfg) {
    json j;
    j["architecture"]["layer_widths"] = cfg.arch.layer_widths;
    j["architecture"]["block_boundaries"] = cfg.arch.block_boundaries;
    j["sampling_mode"] = sampling_mode_name(cfg.mode);
    j["prior_std"] = cfg.prior_std;
    j["hyper"]["temperature"] = cfg.hyper.temperature;
    j["hyper"]["alpha"] = cfg.hyper.alpha;
    j["hyper"]["beta"] = cfg.hyper.beta;
    j["schedule"]["stage1_epochs"] = cfg.hyper.stage1_epochs;
    j["schedule"]["stage2_epochs"] = cfg.hyper.stage2_epochs;
    j["schedule"]["lr"] = cfg.hyper.lr.initial;
    j["schedule"]["decay_factor"] = cfg.hyper.lr.decay_factor;
    j["schedule"]["stage1_decay_epochs"] = cfg.hyper.lr.stage1_decay_epochs;
    j["schedule"]["stage2_decay_epochs"] = cfg.hyper.lr.stage2_decay_epochs;
    j["schedule"]["batch_size"] = cfg.hyper.batch_size;
    j["grad_clip"] = cfg.hyper.grad_clip;
    j["metric"] = metric_name(cfg.hyper.metric);
    j["attention"]["dim"] = cfg.hyper.attention_dim;
    j["attention"]["tokens"] = cfg.hyper.preferred_tokens;
    j["attention"]["scale"] = cfg.hyper.attention_scale;
    j["dataset"]["kind"] = cfg.dataset.kind;
    j["dataset"]["n"] = cfg.dataset.n;
    j["dataset"]["classes"] = cfg.dataset.classes;
    j["dataset"]["noise"] = cfg.dataset.noise;
    j["dataset"]["label_noise"] = cfg.dataset.label_noise;
    j["dataset"]["path"] = cfg.dataset.path;
    j["dataset"]["images_path"] = cfg.dataset.images_path;
    j["dataset"]["labels_path"] = cfg.dataset.labels_path;
    j["dataset"]["subset_size"] = cfg.dataset.subset_size;
    j["dataset"]["val_fraction"] = cfg.dataset.val_fraction;
    j["seeds"] = cfg.seeds;
    j["eval_samples"] = cfg.eval_samples;
    j["retention_fractions"] = cfg.retention_fractions;
    j["ece_bins"] = cfg.ece_bins;
    j["out"] = cfg.out_dir;
    j["pretrained_checkpoint"] = cfg.pretrained_checkpoint;
    j["pretrain_epochs"] = cfg.pretrain_epochs;
    return j;
}

uint64_t fnv1a64(const std::string& bytes) {
    uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

uint64_t config_hash(const TrainConfig& cfg) { return fnv1a64(to_json(cfg).dump()); }

} // namespace divbnn
