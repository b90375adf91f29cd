#include "divbnn/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace divbnn {

scalar_t LrSchedule::rate_at(size_t epoch_in_stage, bool stage2) const {
    scalar_t lr = initial;
    const auto& decays = stage2 ? stage2_decay_epochs : stage1_decay_epochs;
    for (size_t e : decays)
        if (epoch_in_stage >= e) lr *= decay_factor;
    return lr;
}

// --- Adam --------------------------------------------------------------------

Adam::Adam(std::vector<Tensor> params, scalar_t beta1, scalar_t beta2, scalar_t eps)
    : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const auto& p : params_) {
        m_.emplace_back(p.numel(), 0.0);
        v_.emplace_back(p.numel(), 0.0);
    }
}

void Adam::zero_grad() {
    for (auto& p : params_) p.zero_grad();
}

void Adam::reset() {
    t_ = 0;
    for (auto& m : m_) std::fill(m.begin(), m.end(), 0.0);
    for (auto& v : v_) std::fill(v.begin(), v.end(), 0.0);
}

void Adam::restore_state(const State& s) {
    m_ = s.m;
    v_ = s.v;
    t_ = s.t;
}

scalar_t Adam::global_grad_norm() const {
    scalar_t s = 0.0;
    for (const auto& p : params_)
        if (p.has_grad())
            for (scalar_t g : p.grad()) s += g * g;
    return std::sqrt(s);
}

void Adam::clip_grads(scalar_t max_norm) {
    scalar_t norm = global_grad_norm();
    if (norm <= max_norm || norm == 0.0) return;
    scalar_t f = max_norm / norm;
    for (auto& p : params_)
        if (p.has_grad())
            for (auto& g : const_cast<std::vector<scalar_t>&>(p.grad())) g *= f;
}

bool Adam::grads_finite() const {
    for (const auto& p : params_)
        if (p.has_grad() && !p.grad_all_finite()) return false;
    return true;
}

void Adam::step(scalar_t lr) {
    ++t_;
    scalar_t c1 = 1.0 - std::pow(beta1_, static_cast<scalar_t>(t_));
    scalar_t c2 = 1.0 - std::pow(beta2_, static_cast<scalar_t>(t_));
    for (size_t k = 0; k < params_.size(); ++k) {
        if (!params_[k].has_grad()) continue;
        const auto& g = params_[k].grad();
        auto& x = params_[k].mutable_values();
        auto& m = m_[k];
        auto& v = v_[k];
        for (size_t i = 0; i < x.size(); ++i) {
            m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
            v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
            x[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
        }
    }
}

// --- losses --------------------------------------------------------------------

Tensor soft_logits(const Tensor& logits, scalar_t temperature) {
    if (temperature <= 0.0)
        throw std::invalid_argument("soft_logits: temperature must be positive, got " +
                                    std::to_string(temperature));
    return row_softmax(scale(logits, 1.0 / temperature));
}

namespace {

std::vector<std::vector<scalar_t>> soft_probs_values(const Tensor& logits, scalar_t temperature) {
    Tensor p = soft_logits(logits.detach(), temperature);
    size_t n = p.shape()[0], c = p.shape()[1];
    std::vector<std::vector<scalar_t>> out(n, std::vector<scalar_t>(c));
    for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < c; ++j) out[i][j] = p.at(i, j);
    return out;
}

// mean-over-batch KL(peer || self) at temperature T; peer enters as constants.
Tensor distill_kl(const Tensor& self_logits, const std::vector<std::vector<scalar_t>>& peer_soft,
                  scalar_t temperature) {
    size_t n = self_logits.shape()[0], c = self_logits.shape()[1];
    if (peer_soft.size() != n || (n && peer_soft[0].size() != c))
        throw std::invalid_argument("distill_kl: class count mismatch between peers");
    std::vector<scalar_t> flat;
    flat.reserve(n * c);
    scalar_t plogp = 0.0;
    for (const auto& row : peer_soft)
        for (scalar_t p : row) {
            flat.push_back(p);
            if (p > 0) plogp += p * std::log(p);
        }
    Tensor peer = Tensor::from({n, c}, std::move(flat));
    Tensor logq = log_row_softmax(scale(self_logits, 1.0 / temperature));
    Tensor cross = scale(sum(mul(peer, logq)), -1.0 / static_cast<scalar_t>(n));
    return add_scalar(cross, plogp / static_cast<scalar_t>(n));
}

} // namespace

Tensor logit_loss(const Tensor& self_logits, const Tensor& kl_to_prior_term,
                  const std::vector<std::vector<scalar_t>>& peer_soft,
                  const std::vector<int>& labels, scalar_t temperature) {
    Tensor elbo = add(kl_to_prior_term, softmax_cross_entropy(self_logits, labels));
    Tensor kl = distill_kl(self_logits, peer_soft, temperature);
    return add(elbo, scale(kl, temperature * temperature));
}

// --- train step -------------------------------------------------------------------

namespace {

struct PairSnapshot {
    std::vector<scalar_t> p1, p2;
    std::vector<std::vector<scalar_t>> attn1, attn2;
    Adam::State o1, o2;
};

std::vector<std::vector<scalar_t>> attn_values(const FeatureFuser& f) {
    std::vector<std::vector<scalar_t>> out;
    for (auto t : f.trainable()) out.push_back(t.values());
    return out;
}

void restore_attn(FeatureFuser& f, const std::vector<std::vector<scalar_t>>& vals) {
    auto tensors = f.trainable();
    for (size_t i = 0; i < tensors.size(); ++i) tensors[i].mutable_values() = vals[i];
}

PairSnapshot snapshot(const PeerPair& pair) {
    return {flatten_params(pair.b1.model), flatten_params(pair.b2.model),
            attn_values(pair.b1.fuser),    attn_values(pair.b2.fuser),
            pair.b1.opt.save_state(),      pair.b2.opt.save_state()};
}

void restore(PeerPair& pair, const PairSnapshot& s) {
    unflatten_params(pair.b1.model, s.p1);
    unflatten_params(pair.b2.model, s.p2);
    restore_attn(pair.b1.fuser, s.attn1);
    restore_attn(pair.b2.fuser, s.attn2);
    pair.b1.opt.restore_state(s.o1);
    pair.b2.opt.restore_state(s.o2);
}

struct PhaseResult {
    scalar_t elbo = 0.0, kl_logit = 0.0, d_param_loss = 0.0, d_param_distance = 0.0,
             d_feat = 0.0;
};

// One half-iteration: build the loss for `self` against `peer`, backprop and
// update only self's parameters.
PhaseResult run_phase(Peer& self, Peer& peer, const DiagonalGaussian& peer_posterior_snapshot,
                      bool model_first, const Tensor& x, const std::vector<int>& y,
                      const Hyperparams& hyper, size_t dataset_size, scalar_t lr,
                      TrainMethod method, bool feature_stage) {
    PhaseResult res;
    self.opt.zero_grad();

    ForwardResult fwd = forward(self.model, x, self.rng);
    Tensor kl_term = scale(kl_to_prior(self.model), 1.0 / static_cast<scalar_t>(dataset_size));
    Tensor elbo = add(kl_term, softmax_cross_entropy(fwd.logits, y));
    res.elbo = elbo.item();
    Tensor loss = elbo;

    if (method != TrainMethod::Vanilla) {
        ForwardResult peer_fwd = forward(peer.model, x, peer.rng);
        Tensor kl = distill_kl(fwd.logits, soft_probs_values(peer_fwd.logits, hyper.temperature),
                               hyper.temperature);
        Tensor distill = scale(kl, hyper.temperature * hyper.temperature);
        res.kl_logit = distill.item();
        loss = add(loss, distill);

        if (method == TrainMethod::Ours && hyper.alpha > 0.0) {
            Tensor dist =
                param_distance(self.model, peer_posterior_snapshot, hyper.metric, model_first);
            Tensor dpl = diverse_param_loss(dist);
            res.d_param_distance = dist.item();
            res.d_param_loss = dpl.item();
            loss = add(loss, scale(dpl, hyper.alpha));
        }
        if (method == TrainMethod::Ours && hyper.beta > 0.0 && feature_stage &&
            !self.fuser.pairs.empty()) {
            std::vector<Tensor> g_self = fuse_all(self.fuser, fwd.features);
            std::vector<Tensor> g_peer = fuse_all(peer.fuser, peer_fwd.features);
            Tensor dkl = Tensor::scalar(0.0);
            for (size_t i = 0; i < g_self.size(); ++i)
                dkl = add(dkl, feature_kl(g_peer[i].detach(), g_self[i]));
            Tensor dfl = diverse_feat_loss(dkl);
            res.d_feat = dfl.item();
            loss = add(loss, scale(dfl, hyper.beta));
        }
    }

    if (!std::isfinite(loss.item())) throw std::domain_error("non-finite loss");
    loss.backward();
    if (!self.opt.grads_finite()) throw std::domain_error("non-finite gradient");
    if (hyper.grad_clip > 0.0) self.opt.clip_grads(hyper.grad_clip);
    self.opt.step(lr);
    return res;
}

} // namespace

StepMetrics train_step(PeerPair& pair, const Tensor& x, const std::vector<int>& y,
                       const Hyperparams& hyper, size_t dataset_size, scalar_t lr,
                       TrainMethod method, bool feature_stage) {
    StepMetrics metrics;
    PairSnapshot snap = snapshot(pair);
    // Posterior snapshots at iteration start so both peers see the same shared
    // parameter-distance scalar.
    DiagonalGaussian q1 = posterior_of(pair.b1.model);
    DiagonalGaussian q2 = posterior_of(pair.b2.model);
    try {
        PhaseResult r1 = run_phase(pair.b1, pair.b2, q2, /*model_first=*/true, x, y, hyper,
                                   dataset_size, lr, method, feature_stage);
        PhaseResult r2 = run_phase(pair.b2, pair.b1, q1, /*model_first=*/false, x, y, hyper,
                                   dataset_size, lr, method, feature_stage);
        metrics.elbo_b1 = r1.elbo;
        metrics.elbo_b2 = r2.elbo;
        metrics.kl_logit_b1 = r1.kl_logit;
        metrics.kl_logit_b2 = r2.kl_logit;
        metrics.d_param_loss = r1.d_param_loss;
        metrics.d_param_distance = r1.d_param_distance;
        metrics.d_feat_b1 = r1.d_feat;
        metrics.d_feat_b2 = r2.d_feat;
    } catch (const std::domain_error& e) {
        restore(pair, snap);
        metrics.ok = false;
        metrics.error = e.what();
    }
    return metrics;
}

// --- initialization and loop ----------------------------------------------------

namespace {

std::vector<size_t> block_dims(const BnnModel& model) {
    std::vector<size_t> dims;
    for (size_t end : model.block_boundaries) dims.push_back(model.layers[end - 1].out_dim);
    return dims;
}

std::vector<Tensor> peer_trainable(const BnnModel& model, const FeatureFuser& fuser) {
    std::vector<Tensor> all = model.trainable();
    for (auto t : fuser.trainable()) all.push_back(t);
    return all;
}

} // namespace

PeerPair init_peers(const ArchSpec& arch, SamplingMode mode, const PriorSpec& prior,
                    const Hyperparams& hyper,
                    const std::optional<std::vector<std::vector<scalar_t>>>& pretrained_mu,
                    uint64_t seed) {
    Rng base(seed);
    Rng init1 = base.fork(1), init2 = base.fork(2);
    Rng attn1_rng = base.fork(5), attn2_rng = base.fork(6);

    BnnModel m1 = make_model(arch, mode, prior, init1);
    BnnModel m2 = make_model(arch, mode, prior, init2);

    if (pretrained_mu) {
        if (pretrained_mu->size() != 2 * m2.layers.size())
            throw std::invalid_argument("init_peers: checkpoint layer count mismatch");
        for (size_t i = 0; i < m2.layers.size(); ++i) {
            auto& l = m2.layers[i];
            const auto& w = (*pretrained_mu)[2 * i];
            const auto& b = (*pretrained_mu)[2 * i + 1];
            if (w.size() != l.mu_w.numel() || b.size() != l.mu_b.numel())
                throw std::invalid_argument("init_peers: checkpoint shape mismatch at layer " +
                                            std::to_string(i));
            l.mu_w.mutable_values() = w;
            l.mu_b.mutable_values() = b;
        }
    }

    FeatureFuser f1 = make_fuser(block_dims(m1), hyper.attention_dim, hyper.preferred_tokens,
                                 hyper.attention_scale, attn1_rng);
    FeatureFuser f2 = make_fuser(block_dims(m2), hyper.attention_dim, hyper.preferred_tokens,
                                 hyper.attention_scale, attn2_rng);

    Adam o1(peer_trainable(m1, f1));
    Adam o2(peer_trainable(m2, f2));
    return PeerPair{Peer{std::move(m1), std::move(f1), std::move(o1), base.fork(3)},
                    Peer{std::move(m2), std::move(f2), std::move(o2), base.fork(4)}};
}

TrainHistory run_training(PeerPair& pair, const std::vector<std::vector<scalar_t>>& x,
                          const std::vector<int>& y, const Hyperparams& hyper, TrainMethod method,
                          uint64_t seed) {
    if (x.empty()) throw std::invalid_argument("run_training: empty dataset");
    if (x.size() != y.size()) throw std::invalid_argument("run_training: label count mismatch");
    size_t n = x.size();
    size_t in_dim = x.front().size();

    Rng shuffle_rng = Rng(seed).fork(7);
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), 0);

    TrainHistory history;
    size_t total_epochs = hyper.stage1_epochs + hyper.stage2_epochs;
    for (size_t epoch = 0; epoch < total_epochs; ++epoch) {
        bool stage2 = epoch >= hyper.stage1_epochs;
        if (stage2 && epoch == hyper.stage1_epochs) {
            // stage-2 restart: fresh optimizer state, learning rate reset
            pair.b1.opt.reset();
            pair.b2.opt.reset();
        }
        size_t epoch_in_stage = stage2 ? epoch - hyper.stage1_epochs : epoch;
        scalar_t lr = hyper.lr.rate_at(epoch_in_stage, stage2);

        // Fisher-Yates with the dedicated shuffle stream
        for (size_t i = n - 1; i > 0; --i) {
            size_t j = shuffle_rng.next_u64() % (i + 1);
            std::swap(order[i], order[j]);
        }

        StepMetrics acc;
        size_t steps = 0;
        for (size_t start = 0; start < n; start += hyper.batch_size) {
            size_t end = std::min(start + hyper.batch_size, n);
            std::vector<scalar_t> bx;
            std::vector<int> by;
            bx.reserve((end - start) * in_dim);
            for (size_t k = start; k < end; ++k) {
                bx.insert(bx.end(), x[order[k]].begin(), x[order[k]].end());
                by.push_back(y[order[k]]);
            }
            Tensor batch = Tensor::from({end - start, in_dim}, std::move(bx));
            StepMetrics m = train_step(pair, batch, by, hyper, n, lr, method, stage2);
            if (!m.ok) {
                history.failed = true;
                history.failure = "epoch " + std::to_string(epoch) + ": " + m.error;
                return history;
            }
            acc.elbo_b1 += m.elbo_b1;
            acc.elbo_b2 += m.elbo_b2;
            acc.kl_logit_b1 += m.kl_logit_b1;
            acc.kl_logit_b2 += m.kl_logit_b2;
            acc.d_param_loss += m.d_param_loss;
            acc.d_param_distance += m.d_param_distance;
            acc.d_feat_b1 += m.d_feat_b1;
            acc.d_feat_b2 += m.d_feat_b2;
            ++steps;
        }
        scalar_t inv = steps ? 1.0 / static_cast<scalar_t>(steps) : 0.0;
        acc.elbo_b1 *= inv;
        acc.elbo_b2 *= inv;
        acc.kl_logit_b1 *= inv;
        acc.kl_logit_b2 *= inv;
        acc.d_param_loss *= inv;
        acc.d_param_distance *= inv;
        acc.d_feat_b1 *= inv;
        acc.d_feat_b2 *= inv;
        history.epochs.push_back({epoch, stage2 ? size_t(2) : size_t(1), lr, acc});
    }
    return history;
}

} // namespace divbnn
