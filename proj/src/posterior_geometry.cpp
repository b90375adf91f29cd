#include "divbnn/posterior_geometry.hpp"

#include <cmath>
#include <stdexcept>

namespace divbnn {

namespace {

void require_same_length(const char* op, size_t a, size_t b) {
    if (a != b)
        throw std::invalid_argument(std::string(op) + ": dimension mismatch, " + std::to_string(a) +
                                    " vs " + std::to_string(b));
}

scalar_t softplus_neg(scalar_t d) {
    // softplus(-d), saturation-safe for large d
    if (d > 0) return std::log1p(std::exp(-d));
    return -d + std::log1p(std::exp(d));
}

} // namespace

scalar_t bures_squared_diag(const std::vector<scalar_t>& sigma1,
                            const std::vector<scalar_t>& sigma2) {
    require_same_length("bures_squared_diag", sigma1.size(), sigma2.size());
    scalar_t s = 0.0;
    for (size_t i = 0; i < sigma1.size(); ++i) {
        scalar_t d = sigma1[i] - sigma2[i];
        s += d * d;
    }
    return s;
}

scalar_t w2_squared(const DiagonalGaussian& q1, const DiagonalGaussian& q2) {
    require_same_length("w2_squared", q1.mu.size(), q2.mu.size());
    scalar_t s = 0.0;
    for (size_t i = 0; i < q1.mu.size(); ++i) {
        scalar_t d = q1.mu[i] - q2.mu[i];
        s += d * d;
    }
    return s + bures_squared_diag(q1.sigma, q2.sigma);
}

scalar_t kl_diag_gaussian(const DiagonalGaussian& q1, const DiagonalGaussian& q2) {
    require_same_length("kl_diag_gaussian", q1.mu.size(), q2.mu.size());
    scalar_t s = 0.0;
    for (size_t i = 0; i < q1.mu.size(); ++i) {
        scalar_t dm = q1.mu[i] - q2.mu[i];
        scalar_t s1 = q1.sigma[i], s2 = q2.sigma[i];
        s += std::log(s2 / s1) + (s1 * s1 + dm * dm) / (2 * s2 * s2) - 0.5;
    }
    return s;
}

scalar_t param_distance(const DiagonalGaussian& q1, const DiagonalGaussian& q2,
                        ParamMetric metric) {
    return metric == ParamMetric::W2 ? w2_squared(q1, q2) : kl_diag_gaussian(q1, q2);
}

scalar_t diverse_param_loss(scalar_t distance) { return softplus_neg(distance); }

DiagonalGaussian posterior_of(const BnnModel& model) {
    DiagonalGaussian q;
    flatten_posterior(model, q.mu, q.sigma);
    return q;
}

// --- differentiable versions ------------------------------------------------

namespace {

Tensor sum_sq_diff(const Tensor& a, const Tensor& b) {
    Tensor d = sub(a, b);
    return sum(mul(d, d));
}

} // namespace

Tensor bures_squared_diag(const Tensor& sigma1, const Tensor& sigma2) {
    require_same_length("bures_squared_diag", sigma1.numel(), sigma2.numel());
    return sum_sq_diff(sigma1, sigma2);
}

Tensor w2_squared(const Tensor& mu1, const Tensor& sigma1, const Tensor& mu2,
                  const Tensor& sigma2) {
    require_same_length("w2_squared", mu1.numel(), mu2.numel());
    return add(sum_sq_diff(mu1, mu2), bures_squared_diag(sigma1, sigma2));
}

Tensor kl_diag_gaussian(const Tensor& mu1, const Tensor& sigma1, const Tensor& mu2,
                        const Tensor& sigma2) {
    require_same_length("kl_diag_gaussian", mu1.numel(), mu2.numel());
    Tensor log_ratio = sub(sum(log(sigma2)), sum(log(sigma1)));
    Tensor dm = sub(mu1, mu2);
    Tensor quad = sum(divide(add(mul(sigma1, sigma1), mul(dm, dm)),
                             scale(mul(sigma2, sigma2), 2.0)));
    return add_scalar(add(log_ratio, quad), -0.5 * static_cast<scalar_t>(mu1.numel()));
}

Tensor diverse_param_loss(const Tensor& distance) { return softplus(neg(distance)); }

Tensor param_distance(const BnnModel& model, const DiagonalGaussian& peer, ParamMetric metric,
                      bool model_first) {
    if (peer.mu.size() != model.param_count() / 2)
        throw std::invalid_argument("param_distance: peer posterior dimension mismatch");
    Tensor total = Tensor::scalar(0.0);
    size_t off = 0;
    for (const auto& l : model.layers) {
        for (auto [mu, rho] : {std::pair{&l.mu_w, &l.rho_w}, std::pair{&l.mu_b, &l.rho_b}}) {
            size_t n = mu->numel();
            Tensor peer_mu = Tensor::from({n}, {peer.mu.begin() + off, peer.mu.begin() + off + n});
            Tensor peer_sigma =
                Tensor::from({n}, {peer.sigma.begin() + off, peer.sigma.begin() + off + n});
            Tensor mu_flat = reshape(*mu, {n});
            Tensor sigma_flat = sigma_from_rho(reshape(*rho, {n}));
            if (metric == ParamMetric::W2)
                total = add(total, w2_squared(mu_flat, sigma_flat, peer_mu, peer_sigma));
            else if (model_first)
                total = add(total, kl_diag_gaussian(mu_flat, sigma_flat, peer_mu, peer_sigma));
            else
                total = add(total, kl_diag_gaussian(peer_mu, peer_sigma, mu_flat, sigma_flat));
            off += n;
        }
    }
    return total;
}

} // namespace divbnn
