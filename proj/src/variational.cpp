#include "divbnn/variational.hpp"

#include <cmath>
#include <stdexcept>

namespace divbnn {

Tensor sigma_from_rho(const Tensor& rho) { return softplus(rho); }

scalar_t rho_for_sigma(scalar_t sigma) {
    // softplus^-1(s) = log(e^s - 1), stable for small s via expm1
    return std::log(std::expm1(sigma));
}

size_t BnnModel::param_count() const {
    size_t n = 0;
    for (const auto& l : layers) n += l.param_count();
    return n;
}

std::vector<Tensor> BnnModel::trainable() const {
    std::vector<Tensor> out;
    for (const auto& l : layers) {
        out.push_back(l.mu_w);
        out.push_back(l.rho_w);
        out.push_back(l.mu_b);
        out.push_back(l.rho_b);
    }
    return out;
}

namespace {

Tensor gaussian_noise(const Shape& shape, Rng& rng) {
    std::vector<scalar_t> eps(shape_numel(shape));
    for (auto& e : eps) e = rng.normal();
    return Tensor::from(shape, std::move(eps));
}

// mu + sigma ⊙ (eps/||eps||) * r with r = |N(0,1)|; noise is constant, the
// sample stays differentiable w.r.t. mu and rho.
Tensor radial_sample(const Tensor& mu, const Tensor& rho, Rng& rng) {
    size_t n = mu.numel();
    std::vector<scalar_t> eps(n);
    scalar_t norm = 0.0;
    do {
        norm = 0.0;
        for (auto& e : eps) {
            e = rng.normal();
            norm += e * e;
        }
        norm = std::sqrt(norm);
    } while (norm == 0.0); // probability-zero resample guard
    scalar_t r = std::abs(rng.normal());
    for (auto& e : eps) e = e / norm * r;
    Tensor direction = Tensor::from(mu.shape(), std::move(eps));
    return add(mu, mul(sigma_from_rho(rho), direction));
}

} // namespace

LayerSample sample_layer(const VariationalLayer& layer, SamplingMode mode, Rng& rng) {
    if (mode == SamplingMode::BBB) {
        Tensor eps_w = gaussian_noise(layer.mu_w.shape(), rng);
        Tensor eps_b = gaussian_noise(layer.mu_b.shape(), rng);
        return {add(layer.mu_w, mul(sigma_from_rho(layer.rho_w), eps_w)),
                add(layer.mu_b, mul(sigma_from_rho(layer.rho_b), eps_b))};
    }
    Tensor w = radial_sample(layer.mu_w, layer.rho_w, rng);
    Tensor b = radial_sample(layer.mu_b, layer.rho_b, rng);
    return {w, b};
}

namespace {

ForwardResult forward_impl(const BnnModel& model, const Tensor& x,
                           const std::vector<LayerSample>& samples) {
    if (x.shape().size() != 2 || x.shape()[1] != model.in_dim())
        throw std::invalid_argument("forward: input " + shape_str(x.shape()) +
                                    " does not match in_dim " + std::to_string(model.in_dim()));
    ForwardResult res;
    Tensor h = x;
    size_t block = 0;
    for (size_t i = 0; i < model.layers.size(); ++i) {
        h = add_rows(matmul(h, samples[i].w), samples[i].b);
        bool last = (i + 1 == model.layers.size());
        if (!last) h = relu(h);
        if (block < model.block_boundaries.size() && i + 1 == model.block_boundaries[block]) {
            res.features.push_back(h);
            ++block;
        }
    }
    res.logits = h;
    return res;
}

} // namespace

ForwardResult forward(const BnnModel& model, const Tensor& x, Rng& rng) {
    std::vector<LayerSample> samples;
    samples.reserve(model.layers.size());
    for (const auto& l : model.layers) samples.push_back(sample_layer(l, model.mode, rng));
    return forward_impl(model, x, samples);
}

Tensor forward_at_mean(const BnnModel& model, const Tensor& x) {
    std::vector<LayerSample> samples;
    for (const auto& l : model.layers) samples.push_back({l.mu_w, l.mu_b});
    return forward_impl(model, x, samples).logits;
}

namespace {

// KL(N(mu, sigma^2) || N(0, s^2)) summed over one parameter tensor:
// sum_j [ log(s/sigma_j) + (sigma_j^2 + mu_j^2) / (2 s^2) - 1/2 ]
Tensor kl_tensor(const Tensor& mu, const Tensor& rho, scalar_t prior_std) {
    Tensor sigma = sigma_from_rho(rho);
    scalar_t d = static_cast<scalar_t>(mu.numel());
    Tensor log_terms = scale(sum(log(sigma)), -1.0);
    Tensor quad = scale(sum(add(mul(sigma, sigma), mul(mu, mu))), 1.0 / (2.0 * prior_std * prior_std));
    scalar_t constant = d * (std::log(prior_std) - 0.5);
    return add_scalar(add(log_terms, quad), constant);
}

} // namespace

Tensor kl_to_prior(const BnnModel& model) {
    Tensor total = Tensor::scalar(0.0);
    for (const auto& l : model.layers) {
        total = add(total, kl_tensor(l.mu_w, l.rho_w, model.prior.std));
        total = add(total, kl_tensor(l.mu_b, l.rho_b, model.prior.std));
    }
    return total;
}

Tensor elbo_loss(const BnnModel& model, const Tensor& x, const std::vector<int>& y, Rng& rng,
                 size_t dataset_size) {
    if (dataset_size == 0) throw std::invalid_argument("elbo_loss: dataset_size must be positive");
    Tensor kl = scale(kl_to_prior(model), 1.0 / static_cast<scalar_t>(dataset_size));
    ForwardResult fwd = forward(model, x, rng);
    return add(kl, softmax_cross_entropy(fwd.logits, y));
}

void flatten_posterior(const BnnModel& model, std::vector<scalar_t>& mu,
                       std::vector<scalar_t>& sigma) {
    mu.clear();
    sigma.clear();
    auto append = [&](const Tensor& m, const Tensor& r) {
        mu.insert(mu.end(), m.values().begin(), m.values().end());
        for (scalar_t x : r.values()) {
            sigma.push_back(x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)));
        }
    };
    for (const auto& l : model.layers) {
        append(l.mu_w, l.rho_w);
        append(l.mu_b, l.rho_b);
    }
}

std::vector<scalar_t> flatten_params(const BnnModel& model) {
    std::vector<scalar_t> flat;
    for (const auto& l : model.layers)
        for (const Tensor* t : {&l.mu_w, &l.rho_w, &l.mu_b, &l.rho_b})
            flat.insert(flat.end(), t->values().begin(), t->values().end());
    return flat;
}

void unflatten_params(BnnModel& model, const std::vector<scalar_t>& flat) {
    if (flat.size() != model.param_count())
        throw std::invalid_argument("unflatten_params: expected " +
                                    std::to_string(model.param_count()) + " values, got " +
                                    std::to_string(flat.size()));
    size_t off = 0;
    for (auto& l : model.layers)
        for (Tensor* t : {&l.mu_w, &l.rho_w, &l.mu_b, &l.rho_b}) {
            auto& vals = t->mutable_values();
            std::copy(flat.begin() + off, flat.begin() + off + vals.size(), vals.begin());
            off += vals.size();
        }
}

BnnModel make_model(const ArchSpec& arch, SamplingMode mode, const PriorSpec& prior, Rng& rng,
                    scalar_t init_sigma) {
    if (arch.layer_widths.size() < 2)
        throw std::invalid_argument("make_model: need at least input and output widths");
    if (arch.block_boundaries.empty() ||
        arch.block_boundaries.back() != arch.layer_widths.size() - 1)
        throw std::invalid_argument("make_model: block_boundaries must end at the last layer");
    for (size_t i = 1; i < arch.block_boundaries.size(); ++i)
        if (arch.block_boundaries[i] <= arch.block_boundaries[i - 1])
            throw std::invalid_argument("make_model: block_boundaries must be strictly increasing");

    BnnModel model;
    model.mode = mode;
    model.prior = prior;
    model.block_boundaries = arch.block_boundaries;
    scalar_t rho0 = rho_for_sigma(init_sigma);
    for (size_t i = 0; i + 1 < arch.layer_widths.size(); ++i) {
        VariationalLayer l;
        l.in_dim = arch.layer_widths[i];
        l.out_dim = arch.layer_widths[i + 1];
        scalar_t bound = 1.0 / std::sqrt(static_cast<scalar_t>(l.in_dim));
        std::vector<scalar_t> w(l.in_dim * l.out_dim), b(l.out_dim);
        for (auto& x : w) x = rng.uniform(-bound, bound);
        for (auto& x : b) x = rng.uniform(-bound, bound);
        l.mu_w = Tensor::from({l.in_dim, l.out_dim}, std::move(w), true);
        l.mu_b = Tensor::from({l.out_dim}, std::move(b), true);
        std::vector<scalar_t> rw(l.in_dim * l.out_dim), rb(l.out_dim);
        for (auto& x : rw) x = rho0 + 0.01 * rng.normal();
        for (auto& x : rb) x = rho0 + 0.01 * rng.normal();
        l.rho_w = Tensor::from({l.in_dim, l.out_dim}, std::move(rw), true);
        l.rho_b = Tensor::from({l.out_dim}, std::move(rb), true);
        model.layers.push_back(std::move(l));
    }
    return model;
}

} // namespace divbnn
