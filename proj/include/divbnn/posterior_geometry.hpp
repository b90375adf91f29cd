#pragma once

#include <vector>

#include "divbnn/tensor.hpp"
#include "divbnn/variational.hpp"

namespace divbnn {

enum class ParamMetric { W2, KL };

// Diagonal Gaussian over a flat parameter vector.
struct DiagonalGaussian {
    std::vector<scalar_t> mu;
    std::vector<scalar_t> sigma; // strictly positive
};

// --- plain closed forms -------------------------------------------------------

// tr(S1 + S2 - 2 (S1^{1/2} S2 S1^{1/2})^{1/2}) for diagonal covariances
// collapses to sum_j (sigma1_j - sigma2_j)^2.
scalar_t bures_squared_diag(const std::vector<scalar_t>& sigma1,
                            const std::vector<scalar_t>& sigma2);

// W2^2 = ||mu1 - mu2||^2 + ||sigma1 - sigma2||^2
scalar_t w2_squared(const DiagonalGaussian& q1, const DiagonalGaussian& q2);

// KL(q1 || q2), closed form for diagonal Gaussians.
scalar_t kl_diag_gaussian(const DiagonalGaussian& q1, const DiagonalGaussian& q2);

scalar_t param_distance(const DiagonalGaussian& q1, const DiagonalGaussian& q2, ParamMetric metric);

// log(1 + exp(-D)), computed as softplus(-D); in (0, ln 2] for D >= 0.
scalar_t diverse_param_loss(scalar_t distance);

DiagonalGaussian posterior_of(const BnnModel& model);

// --- differentiable versions (training graph) ----------------------------------

Tensor bures_squared_diag(const Tensor& sigma1, const Tensor& sigma2);
Tensor w2_squared(const Tensor& mu1, const Tensor& sigma1, const Tensor& mu2, const Tensor& sigma2);
Tensor kl_diag_gaussian(const Tensor& mu1, const Tensor& sigma1, const Tensor& mu2,
                        const Tensor& sigma2);
Tensor diverse_param_loss(const Tensor& distance);

// Distance between `model`'s live parameters and a detached snapshot of the
// peer; gradients flow only into `model`. `model_first` selects the argument
// order, which matters for the asymmetric KL metric.
Tensor param_distance(const BnnModel& model, const DiagonalGaussian& peer, ParamMetric metric,
                      bool model_first = true);

} // namespace divbnn
