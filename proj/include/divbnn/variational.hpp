#pragma once

#include <vector>

#include "divbnn/rng.hpp"
#include "divbnn/tensor.hpp"

namespace divbnn {

enum class SamplingMode { BBB, Radial };

struct PriorSpec {
    scalar_t mean = 0.0; // fixed at zero in the closed-form KL below
    scalar_t std = 0.1;
};

// One dense layer with a diagonal-Gaussian posterior over weights and biases.
// sigma is never stored; it is always softplus(rho).
struct VariationalLayer {
    Tensor mu_w;  // {in, out}
    Tensor rho_w; // {in, out}
    Tensor mu_b;  // {out}
    Tensor rho_b; // {out}
    size_t in_dim = 0;
    size_t out_dim = 0;

    size_t param_count() const { return 2 * (in_dim * out_dim + out_dim); }
};

struct LayerSample {
    Tensor w; // {in, out}, differentiable w.r.t. mu and rho
    Tensor b; // {out}
};

struct BnnModel {
    std::vector<VariationalLayer> layers;
    // Exclusive end index of each block, strictly increasing, last == layers.size().
    std::vector<size_t> block_boundaries;
    SamplingMode mode = SamplingMode::BBB;
    PriorSpec prior;

    size_t param_count() const;
    size_t in_dim() const { return layers.front().in_dim; }
    size_t num_classes() const { return layers.back().out_dim; }
    std::vector<Tensor> trainable() const; // all mu/rho leaves in layer order
};

struct ForwardResult {
    Tensor logits;                 // {n, num_classes}
    std::vector<Tensor> features;  // per block, {n, block_out_dim}
};

Tensor sigma_from_rho(const Tensor& rho);
scalar_t rho_for_sigma(scalar_t sigma); // inverse softplus

LayerSample sample_layer(const VariationalLayer& layer, SamplingMode mode, Rng& rng);

ForwardResult forward(const BnnModel& model, const Tensor& x, Rng& rng);

// Deterministic forward at the posterior mean (sigma ignored).
Tensor forward_at_mean(const BnnModel& model, const Tensor& x);

Tensor kl_to_prior(const BnnModel& model);

Tensor elbo_loss(const BnnModel& model, const Tensor& x, const std::vector<int>& y, Rng& rng,
                 size_t dataset_size);

// Flattened (mu, sigma) view of the whole posterior, in layer order
// (mu_w, mu_b then the matching sigmas); used by the parameter-space distances.
void flatten_posterior(const BnnModel& model, std::vector<scalar_t>& mu,
                       std::vector<scalar_t>& sigma);

// Raw parameter (mu, rho) round-trip for checkpoints.
std::vector<scalar_t> flatten_params(const BnnModel& model);
void unflatten_params(BnnModel& model, const std::vector<scalar_t>& flat);

struct ArchSpec {
    std::vector<size_t> layer_widths; // input, hidden..., classes
    std::vector<size_t> block_boundaries;
};

BnnModel make_model(const ArchSpec& arch, SamplingMode mode, const PriorSpec& prior, Rng& rng,
                    scalar_t init_sigma = 0.05);

} // namespace divbnn
