#pragma once

#include <optional>
#include <string>
#include <vector>

#include "divbnn/feature_diversity.hpp"
#include "divbnn/posterior_geometry.hpp"
#include "divbnn/rng.hpp"
#include "divbnn/variational.hpp"

namespace divbnn {

enum class TrainMethod { Vanilla, DML, Ours };

struct LrSchedule {
    scalar_t initial = 1e-3;
    std::vector<size_t> stage1_decay_epochs; // epochs within stage 1
    std::vector<size_t> stage2_decay_epochs; // epochs within stage 2
    scalar_t decay_factor = 0.1;

    scalar_t rate_at(size_t epoch_in_stage, bool stage2) const;
};

struct Hyperparams {
    scalar_t temperature = 3.0;
    scalar_t alpha = 1.0; // parameter-diversity weight
    scalar_t beta = 2.0;  // feature-diversity weight (forced to 0 in stage 1)
    LrSchedule lr;
    size_t stage1_epochs = 40;
    size_t stage2_epochs = 20;
    size_t batch_size = 64;
    scalar_t grad_clip = 0.0; // global norm; 0 disables
    ParamMetric metric = ParamMetric::W2;
    size_t attention_dim = 16;
    size_t preferred_tokens = 4;
    bool attention_scale = true;
};

// Adam with the conventional (0.9, 0.999, 1e-8) defaults.
class Adam {
public:
    explicit Adam(std::vector<Tensor> params, scalar_t beta1 = 0.9, scalar_t beta2 = 0.999,
                  scalar_t eps = 1e-8);

    void zero_grad();
    void step(scalar_t lr);
    void reset(); // drop moments and step count (stage-2 restart)

    const std::vector<Tensor>& params() const { return params_; }
    scalar_t global_grad_norm() const;
    void clip_grads(scalar_t max_norm);
    bool grads_finite() const;

    struct State {
        std::vector<std::vector<scalar_t>> m, v;
        size_t t;
    };
    State save_state() const { return {m_, v_, t_}; }
    void restore_state(const State& s);

private:
    std::vector<Tensor> params_;
    std::vector<std::vector<scalar_t>> m_, v_;
    size_t t_ = 0;
    scalar_t beta1_, beta2_, eps_;
};

struct Peer {
    BnnModel model;
    FeatureFuser fuser;
    Adam opt;
    Rng rng;
};

struct PeerPair {
    Peer b1;
    Peer b2;
};

// softmax(z / T); T = 1 reduces to plain softmax.
Tensor soft_logits(const Tensor& logits, scalar_t temperature);

// L(theta_i) + T^2 * mean-over-batch KL(peer || self) on T-softened
// probabilities; peer probabilities enter as constants.
Tensor logit_loss(const Tensor& self_logits, const Tensor& kl_to_prior_term,
                  const std::vector<std::vector<scalar_t>>& peer_soft,
                  const std::vector<int>& labels, scalar_t temperature);

struct StepMetrics {
    scalar_t elbo_b1 = 0.0, elbo_b2 = 0.0;
    scalar_t kl_logit_b1 = 0.0, kl_logit_b2 = 0.0;
    scalar_t d_param_loss = 0.0; // alpha-free softplus(-D) value, shared
    scalar_t d_param_distance = 0.0;
    scalar_t d_feat_b1 = 0.0, d_feat_b2 = 0.0; // softplus(-D_KL) values
    bool ok = true;
    std::string error;
};

// One Algorithm-style iteration: B1's loss and update, then B2's against the
// already-updated B1. The shared parameter-diversity scalar is evaluated on
// the iteration-start posteriors for both peers. On a non-finite loss or
// gradient the step is rolled back and reported in `error`.
StepMetrics train_step(PeerPair& pair, const Tensor& x, const std::vector<int>& y,
                       const Hyperparams& hyper, size_t dataset_size, scalar_t lr,
                       TrainMethod method, bool feature_stage);

struct EpochRecord {
    size_t epoch = 0;
    size_t stage = 1;
    scalar_t lr = 0.0;
    StepMetrics mean_losses; // averaged over the epoch's steps
};

struct TrainHistory {
    std::vector<EpochRecord> epochs;
    bool failed = false;
    std::string failure;
};

// b1 from scratch; b2's means copied from `pretrained_mu` (per-layer flat
// weight-then-bias arrays) when provided.
PeerPair init_peers(const ArchSpec& arch, SamplingMode mode, const PriorSpec& prior,
                    const Hyperparams& hyper,
                    const std::optional<std::vector<std::vector<scalar_t>>>& pretrained_mu,
                    uint64_t seed);

TrainHistory run_training(PeerPair& pair, const std::vector<std::vector<scalar_t>>& x,
                          const std::vector<int>& y, const Hyperparams& hyper, TrainMethod method,
                          uint64_t seed);

} // namespace divbnn
