#include "divbnn/experiments.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "divbnn/datasets.hpp"
#include "divbnn/feature_diversity.hpp"
#include "divbnn/posterior_geometry.hpp"

namespace divbnn {

namespace fs = std::filesystem;
using nlohmann::json;

std::string method_name(TrainMethod m) {
    switch (m) {
        case TrainMethod::Vanilla: return "vanilla";
        case TrainMethod::DML: return "dml";
        case TrainMethod::Ours: return "diverse";
    }
    throw std::logic_error("unknown training method");
}

TrainMethod method_from(const std::string& name) {
    if (name == "vanilla") return TrainMethod::Vanilla;
    if (name == "dml") return TrainMethod::DML;
    if (name == "diverse") return TrainMethod::Ours;
    throw std::runtime_error("method: expected vanilla, dml or diverse, got '" + name + "'");
}

// --- deterministic pre-training ---------------------------------------------

Checkpoint pretrain_deterministic(const TrainConfig& cfg, uint64_t seed) {
    SplitData data = make_dataset(cfg.dataset, seed);
    const auto& widths = cfg.arch.layer_widths;
    if (widths.size() < 2) throw std::runtime_error("pretrain: need at least one layer");

    Rng init = Rng(seed).fork(9);
    std::vector<Tensor> weights, biases;
    for (size_t i = 0; i + 1 < widths.size(); ++i) {
        size_t in = widths[i], out = widths[i + 1];
        scalar_t bound = 1.0 / std::sqrt(static_cast<scalar_t>(in));
        std::vector<scalar_t> w(in * out);
        for (auto& v : w) v = init.uniform(-bound, bound);
        weights.push_back(Tensor::from({in, out}, std::move(w), true));
        biases.push_back(Tensor::zeros({out}, true));
    }

    std::vector<Tensor> params;
    for (size_t i = 0; i < weights.size(); ++i) {
        params.push_back(weights[i]);
        params.push_back(biases[i]);
    }
    Adam opt(params);

    auto forward_det = [&](const Tensor& x) {
        Tensor h = x;
        for (size_t i = 0; i < weights.size(); ++i) {
            h = add_rows(matmul(h, weights[i]), biases[i]);
            if (i + 1 < weights.size()) h = relu(h);
        }
        return h;
    };

    Rng shuffle = Rng(seed).fork(10);
    const size_t n = data.train.size();
    std::vector<size_t> order(n);
    for (size_t i = 0; i < n; ++i) order[i] = i;

    for (size_t epoch = 0; epoch < cfg.pretrain_epochs; ++epoch) {
        for (size_t i = n; i > 1; --i) {
            size_t j = shuffle.next_u64() % i;
            std::swap(order[i - 1], order[j]);
        }
        for (size_t start = 0; start < n; start += cfg.hyper.batch_size) {
            size_t end = std::min(n, start + cfg.hyper.batch_size);
            size_t dim = data.train.x.front().size();
            std::vector<scalar_t> xb;
            std::vector<int> yb;
            xb.reserve((end - start) * dim);
            for (size_t k = start; k < end; ++k) {
                const auto& row = data.train.x[order[k]];
                xb.insert(xb.end(), row.begin(), row.end());
                yb.push_back(data.train.y[order[k]]);
            }
            Tensor x = Tensor::from({end - start, dim}, std::move(xb));
            opt.zero_grad();
            Tensor loss = softmax_cross_entropy(forward_det(x), yb);
            loss.backward();
            opt.step(cfg.hyper.lr.initial);
        }
    }

    Checkpoint ckpt;
    ckpt.arch = cfg.arch;
    ckpt.mode = cfg.mode;
    ckpt.prior_std = cfg.prior_std;
    ckpt.deterministic = true;
    ckpt.arch_hash = arch_hash(ckpt.arch, ckpt.mode, true);
    for (size_t i = 0; i < weights.size(); ++i) {
        const auto& w = weights[i].values();
        const auto& b = biases[i].values();
        ckpt.model_params.insert(ckpt.model_params.end(), w.begin(), w.end());
        ckpt.model_params.insert(ckpt.model_params.end(), b.begin(), b.end());
    }
    ckpt.rng_state = shuffle.state();
    return ckpt;
}

BnnModel model_from_checkpoint(const Checkpoint& ckpt) {
    if (ckpt.deterministic)
        throw std::runtime_error(
            "checkpoint holds a point-estimate model; use it as a pretrained "
            "initializer, not for ensemble evaluation");
    Rng dummy(0);
    BnnModel model = make_model(ckpt.arch, ckpt.mode, PriorSpec{0.0, ckpt.prior_std}, dummy);
    unflatten_params(model, ckpt.model_params);
    return model;
}

// --- per-seed training runs ---------------------------------------------------

SeedRun run_seed(const TrainConfig& cfg, TrainMethod method, uint64_t seed,
                 const std::string& out_dir) {
    SplitData data = make_dataset(cfg.dataset, seed);

    std::optional<std::vector<std::vector<scalar_t>>> pretrained;
    if (!cfg.pretrained_checkpoint.empty())
        pretrained = checkpoint_means(load_checkpoint(cfg.pretrained_checkpoint));

    PeerPair pair = init_peers(cfg.arch, cfg.mode, PriorSpec{0.0, cfg.prior_std}, cfg.hyper,
                               pretrained, seed);

    SeedRun run;
    run.seed = seed;
    run.history = run_training(pair, data.train.x, data.train.y, cfg.hyper, method, seed);

    Tensor xv = data.val.features();
    Rng ev1 = Rng(seed).fork(20);
    Rng ev2 = Rng(seed).fork(21);
    run.b1 = evaluate(pair.b1.model, xv, data.val.y, cfg.eval_samples, ev1,
                      cfg.retention_fractions, cfg.ece_bins);
    run.b2 = evaluate(pair.b2.model, xv, data.val.y, cfg.eval_samples, ev2,
                      cfg.retention_fractions, cfg.ece_bins);
    run.b1.seed = run.b2.seed = seed;
    run.b1.config_hash = run.b2.config_hash = config_hash(cfg);

    if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        std::string stem = method_name(method) + "_seed" + std::to_string(seed);
        save_checkpoint(out_dir + "/" + stem + "_b1.ckpt",
                        checkpoint_of(pair.b1.model, pair.b1.fuser, pair.b1.rng.state()));
        save_checkpoint(out_dir + "/" + stem + "_b2.ckpt",
                        checkpoint_of(pair.b2.model, pair.b2.fuser, pair.b2.rng.state()));
        write_history_csv(out_dir + "/history_" + stem + ".csv", method_name(method), seed,
                          config_hash(cfg), run.history);
    }
    return run;
}

void write_history_csv(const std::string& path, const std::string& method, uint64_t seed,
                       uint64_t cfg_hash, const TrainHistory& hist) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << "method,seed,config_hash,epoch,stage,lr,elbo_b1,elbo_b2,kl_logit_b1,kl_logit_b2,"
           "d_param_loss,d_param_distance,d_feat_b1,d_feat_b2\n";
    out << std::setprecision(17);
    for (const auto& e : hist.epochs) {
        const auto& m = e.mean_losses;
        out << method << ',' << seed << ',' << cfg_hash << ',' << e.epoch << ',' << e.stage << ','
            << e.lr << ',' << m.elbo_b1 << ',' << m.elbo_b2 << ',' << m.kl_logit_b1 << ','
            << m.kl_logit_b2 << ',' << m.d_param_loss << ',' << m.d_param_distance << ','
            << m.d_feat_b1 << ',' << m.d_feat_b2 << '\n';
    }
    if (!out) throw std::runtime_error("write failed for " + path);
}

// --- reporting ------------------------------------------------------------------

namespace {

json report_to_json(const MetricsReport& r) {
    json j;
    j["acc"] = r.acc;
    j["nll"] = r.nll;
    j["ece"] = r.ece;
    json ret = json::object();
    for (const auto& [f, a] : r.retention) {
        std::ostringstream key;
        key << f;
        ret[key.str()] = a;
    }
    j["retention"] = ret;
    return j;
}

struct PeerAvg {
    scalar_t acc = 0, nll = 0, ece = 0;
    std::map<scalar_t, scalar_t> retention;
};

PeerAvg average_over_seeds(const MethodResult& res, bool second_peer) {
    PeerAvg avg;
    if (res.runs.empty()) return avg;
    for (const auto& run : res.runs) {
        const MetricsReport& r = second_peer ? run.b2 : run.b1;
        avg.acc += r.acc;
        avg.nll += r.nll;
        avg.ece += r.ece;
        for (const auto& [f, a] : r.retention) avg.retention[f] += a;
    }
    scalar_t k = static_cast<scalar_t>(res.runs.size());
    avg.acc /= k;
    avg.nll /= k;
    avg.ece /= k;
    for (auto& [f, a] : avg.retention) a /= k;
    return avg;
}

} // namespace

json results_json(const TrainConfig& cfg, const std::vector<MethodResult>& results) {
    json j;
    j["config"] = to_json(cfg);
    j["config_hash"] = config_hash(cfg);
    json methods = json::object();
    for (const auto& res : results) {
        json m;
        json runs = json::array();
        for (const auto& run : res.runs) {
            json r;
            r["seed"] = run.seed;
            r["b1"] = report_to_json(run.b1);
            r["b2"] = report_to_json(run.b2);
            r["train_failed"] = run.history.failed;
            if (run.history.failed) r["failure"] = run.history.failure;
            runs.push_back(std::move(r));
        }
        m["runs"] = std::move(runs);
        PeerAvg a1 = average_over_seeds(res, false);
        PeerAvg a2 = average_over_seeds(res, true);
        m["average"] = {{"acc", (a1.acc + a2.acc) / 2}, {"nll", (a1.nll + a2.nll) / 2},
                        {"ece", (a1.ece + a2.ece) / 2}};
        methods[method_name(res.method)] = std::move(m);
    }
    j["methods"] = std::move(methods);
    return j;
}

void write_results_csv(const std::string& path, const std::vector<MethodResult>& results) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << "method,net,seed,acc,nll,ece";
    if (!results.empty() && !results.front().runs.empty())
        for (const auto& [f, a] : results.front().runs.front().b1.retention) {
            (void)a;
            out << ",ret_" << f;
        }
    out << '\n';
    out << std::setprecision(12);
    for (const auto& res : results)
        for (const auto& run : res.runs)
            for (int peer = 0; peer < 2; ++peer) {
                const MetricsReport& r = peer ? run.b2 : run.b1;
                out << method_name(res.method) << ",B" << (peer + 1) << ',' << run.seed << ','
                    << r.acc << ',' << r.nll << ',' << r.ece;
                for (const auto& [f, a] : r.retention) {
                    (void)f;
                    out << ',' << a;
                }
                out << '\n';
            }
    if (!out) throw std::runtime_error("write failed for " + path);
}

std::string summary_table(const std::vector<MethodResult>& results) {
    std::ostringstream out;
    out << std::left << std::setw(10) << "Method" << std::setw(10) << "Net" << std::right
        << std::setw(10) << "ACC(%)" << std::setw(10) << "NLL" << std::setw(10) << "ECE" << '\n';
    out << std::string(50, '-') << '\n';
    out << std::fixed << std::setprecision(4);
    for (const auto& res : results) {
        PeerAvg a1 = average_over_seeds(res, false);
        PeerAvg a2 = average_over_seeds(res, true);
        auto row = [&](const std::string& net, scalar_t acc, scalar_t nll_v, scalar_t ece_v) {
            out << std::left << std::setw(10) << method_name(res.method) << std::setw(10) << net
                << std::right << std::setw(10) << 100.0 * acc << std::setw(10) << nll_v
                << std::setw(10) << ece_v << '\n';
        };
        row("B1", a1.acc, a1.nll, a1.ece);
        row("B2", a2.acc, a2.nll, a2.ece);
        row("Average", (a1.acc + a2.acc) / 2, (a1.nll + a2.nll) / 2, (a1.ece + a2.ece) / 2);
    }
    return out.str();
}

std::string retention_table(const std::vector<MethodResult>& results) {
    std::ostringstream out;
    if (results.empty() || results.front().runs.empty()) return out.str();
    out << std::left << std::setw(10) << "Method" << std::setw(10) << "Net";
    for (const auto& [f, a] : results.front().runs.front().b1.retention) {
        (void)a;
        std::ostringstream key;
        key << "keep " << f;
        out << std::right << std::setw(10) << key.str();
    }
    out << '\n' << std::string(20 + 10 * results.front().runs.front().b1.retention.size(), '-')
        << '\n';
    out << std::fixed << std::setprecision(4);
    for (const auto& res : results)
        for (int peer = 0; peer < 2; ++peer) {
            PeerAvg avg = average_over_seeds(res, peer == 1);
            out << std::left << std::setw(10) << method_name(res.method) << std::setw(10)
                << (peer ? "B2" : "B1");
            for (const auto& [f, a] : avg.retention) {
                (void)f;
                out << std::right << std::setw(10) << 100.0 * a;
            }
            out << '\n';
        }
    return out.str();
}

// --- commands --------------------------------------------------------------------

namespace {

void print_plan(const TrainConfig& cfg, const std::vector<TrainMethod>& methods,
                std::ostream& log) {
    log << "dry run: no files will be written\n";
    log << "resolved config (hash " << config_hash(cfg) << "):\n"
        << to_json(cfg).dump(2) << '\n';
    log << "planned runs:\n";
    for (TrainMethod m : methods)
        for (uint64_t s : cfg.seeds)
            log << "  " << method_name(m) << " seed " << s << " -> " << cfg.out_dir << '\n';
}

int run_methods(const TrainConfig& cfg, const std::vector<TrainMethod>& methods, bool dry_run,
                const std::string& report_stem, std::ostream& log) {
    validate(cfg);
    if (dry_run) {
        print_plan(cfg, methods, log);
        return 0;
    }
    fs::create_directories(cfg.out_dir);
    std::vector<MethodResult> results;
    for (TrainMethod m : methods) {
        MethodResult res;
        res.method = m;
        for (uint64_t seed : cfg.seeds) {
            log << "training " << method_name(m) << " seed " << seed << "...\n";
            SeedRun run = run_seed(cfg, m, seed, cfg.out_dir);
            if (run.history.failed)
                log << "  warning: training aborted early: " << run.history.failure << '\n';
            log << "  B1 acc " << run.b1.acc << "  B2 acc " << run.b2.acc << '\n';
            res.runs.push_back(std::move(run));
        }
        results.push_back(std::move(res));
    }
    std::string json_path = cfg.out_dir + "/" + report_stem + ".json";
    std::ofstream jout(json_path);
    if (!jout) throw std::runtime_error("cannot write " + json_path);
    jout << results_json(cfg, results).dump(2) << '\n';
    write_results_csv(cfg.out_dir + "/" + report_stem + ".csv", results);

    log << '\n' << summary_table(results) << '\n' << retention_table(results);
    log << "\nreports: " << json_path << ", " << cfg.out_dir << "/" << report_stem << ".csv\n";
    return 0;
}

} // namespace

int cmd_train(const TrainConfig& cfg, bool dry_run, std::ostream& log) {
    return run_methods(cfg, {TrainMethod::Ours}, dry_run, "report", log);
}

int cmd_compare(const TrainConfig& cfg, bool dry_run, std::ostream& log) {
    return run_methods(cfg, {TrainMethod::Vanilla, TrainMethod::DML, TrainMethod::Ours}, dry_run,
                       "comparison", log);
}

int cmd_eval(const std::string& ckpt_path, const TrainConfig& cfg, size_t samples, uint64_t seed,
             std::ostream& log) {
    Checkpoint ckpt = load_checkpoint(ckpt_path);
    BnnModel model = model_from_checkpoint(ckpt);
    SplitData data = make_dataset(cfg.dataset, seed);
    if (data.val.x.front().size() != model.in_dim())
        throw std::runtime_error("eval: dataset feature dimension does not match the checkpoint");
    Rng rng = Rng(seed).fork(20);
    MetricsReport r = evaluate(model, data.val.features(), data.val.y, samples, rng,
                               cfg.retention_fractions, cfg.ece_bins);
    r.seed = seed;
    r.config_hash = config_hash(cfg);
    json j = report_to_json(r);
    j["seed"] = seed;
    j["checkpoint"] = ckpt_path;
    j["samples"] = samples;
    log << j.dump(2) << '\n';
    return 0;
}

int cmd_pretrain(const TrainConfig& cfg, const std::string& out_path, std::ostream& log) {
    validate(cfg);
    uint64_t seed = cfg.seeds.front();
    Checkpoint ckpt = pretrain_deterministic(cfg, seed);
    if (!out_path.empty()) {
        if (fs::path(out_path).has_parent_path())
            fs::create_directories(fs::path(out_path).parent_path());
        save_checkpoint(out_path, ckpt);
        log << "wrote point-estimate checkpoint to " << out_path << " ("
            << ckpt.model_params.size() << " weights, seed " << seed << ")\n";
    }
    return 0;
}

int cmd_make_data(const TrainConfig& cfg, const std::string& out_prefix, std::ostream& log) {
    SplitData data = make_dataset(cfg.dataset, cfg.seeds.front());
    std::string train_path = out_prefix + "_train.csv";
    std::string val_path = out_prefix + "_val.csv";
    write_csv_vectors(data.train, train_path);
    write_csv_vectors(data.val, val_path);
    log << "wrote " << data.train.size() << " train rows to " << train_path << " and "
        << data.val.size() << " val rows to " << val_path << '\n';
    return 0;
}

// --- gradient checking of the loss heads ------------------------------------------

namespace {

Tensor random_batch(size_t n, size_t dim, Rng& rng) {
    std::vector<scalar_t> v(n * dim);
    for (auto& x : v) x = rng.normal();
    return Tensor::from({n, dim}, std::move(v));
}

Tensor random_leaf(Shape shape, Rng& rng, scalar_t scale = 1.0, scalar_t offset = 0.0) {
    std::vector<scalar_t> v(shape_numel(shape));
    for (auto& x : v) x = offset + scale * rng.normal();
    return Tensor::from(std::move(shape), std::move(v), true);
}

} // namespace

int cmd_gradcheck(std::ostream& log) {
    struct Row {
        std::string name;
        GradCheckReport report;
    };
    std::vector<Row> rows;

    { // variational objective: scaled KL-to-prior plus sampled cross-entropy
        Rng rng(5);
        BnnModel model = make_model({{3, 6, 6, 4}, {1, 2, 3}}, SamplingMode::BBB,
                                    PriorSpec{0.0, 0.1}, rng);
        Rng data_rng(17);
        Tensor x = random_batch(4, 3, data_rng);
        std::vector<int> y = {0, 1, 2, 3};
        auto f = [&]() {
            Rng r(123);
            return elbo_loss(model, x, y, r, 40);
        };
        rows.push_back({"variational objective", grad_check(f, model.trainable())});
    }

    for (scalar_t T : {1.0, 3.0}) { // distillation-augmented logit loss
        Rng rng(6);
        BnnModel model = make_model({{2, 5, 3}, {1, 2}}, SamplingMode::Radial,
                                    PriorSpec{0.0, 0.1}, rng);
        Rng data_rng(18);
        Tensor x = random_batch(4, 2, data_rng);
        std::vector<int> y = {0, 1, 2, 0};
        std::vector<std::vector<scalar_t>> peer_soft;
        for (size_t i = 0; i < 4; ++i) {
            std::vector<scalar_t> p(3);
            scalar_t total = 0;
            for (auto& v : p) total += (v = data_rng.uniform(0.05, 1.0));
            for (auto& v : p) v /= total;
            peer_soft.push_back(std::move(p));
        }
        auto f = [&]() {
            Rng r(77);
            ForwardResult fr = forward(model, x, r);
            Tensor kl_term = scale(kl_to_prior(model), 1.0 / 40.0);
            return logit_loss(fr.logits, kl_term, peer_soft, y, T);
        };
        std::ostringstream name;
        name << "logit loss (T=" << T << ")";
        rows.push_back({name.str(), grad_check(f, model.trainable())});
    }

    { // parameter-space diversity on both metrics
        Rng rng(7);
        Tensor mu1 = random_leaf({8}, rng);
        Tensor s1 = random_leaf({8}, rng, 0.2, 0.8);
        Tensor mu2 = random_leaf({8}, rng);
        Tensor s2 = random_leaf({8}, rng, 0.2, 0.8);
        auto f_w2 = [&]() { return diverse_param_loss(w2_squared(mu1, s1, mu2, s2)); };
        rows.push_back({"parameter diversity (W2)", grad_check(f_w2, {mu1, s1, mu2, s2})});
        auto f_kl = [&]() { return diverse_param_loss(kl_diag_gaussian(mu1, s1, mu2, s2)); };
        rows.push_back({"parameter diversity (KL)", grad_check(f_kl, {mu1, s1, mu2, s2})});
    }

    { // fused-feature diversity: attention, kernel and conditional KL end to end
        Rng rng(8);
        Tensor fa = random_leaf({3, 8}, rng);
        Tensor fa1 = random_leaf({3, 4}, rng);
        Tensor fb = random_leaf({3, 8}, rng);
        Tensor fb1 = random_leaf({3, 4}, rng);
        size_t tok_lo = token_count(8, 4), tok_hi = token_count(4, 4);
        Rng attn_rng(21);
        AttentionParams attn_a = make_attention(8 / tok_lo, 4 / tok_hi, 3, attn_rng);
        AttentionParams attn_b = make_attention(8 / tok_lo, 4 / tok_hi, 3, attn_rng);
        auto f = [&]() {
            Tensor g_self = fuse_cross_attention(fa, fa1, attn_a, tok_lo, tok_hi);
            Tensor g_peer = fuse_cross_attention(fb, fb1, attn_b, tok_lo, tok_hi);
            return diverse_feat_loss(feature_kl(g_peer, g_self));
        };
        std::vector<Tensor> leaves = {fa, fa1, fb, fb1};
        for (auto t : attn_a.trainable()) leaves.push_back(t);
        for (auto t : attn_b.trainable()) leaves.push_back(t);
        rows.push_back({"feature diversity pipeline", grad_check(f, leaves)});
    }

    bool all_ok = true;
    log << std::left << std::setw(32) << "check" << std::right << std::setw(14) << "max rel err"
        << std::setw(8) << "status" << '\n';
    log << std::string(54, '-') << '\n';
    for (const auto& row : rows) {
        all_ok = all_ok && row.report.passed;
        log << std::left << std::setw(32) << row.name << std::right << std::setw(14)
            << std::scientific << std::setprecision(2) << row.report.worst << std::setw(8)
            << (row.report.passed ? "ok" : "FAIL") << '\n';
    }
    log.flush();
    return all_ok ? 0 : 1;
}

} // namespace divbnn
