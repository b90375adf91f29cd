#pragma once

#include <map>
#include <vector>

#include "divbnn/rng.hpp"
#include "divbnn/variational.hpp"

namespace divbnn {

// Mean predictive distribution over S posterior samples plus the individual
// member distributions (kept for BALD).
struct EnsemblePrediction {
    std::vector<std::vector<scalar_t>> mean_probs;                // [n][C]
    std::vector<std::vector<std::vector<scalar_t>>> member_probs; // [S][n][C]

    size_t size() const { return mean_probs.size(); }
    size_t samples() const { return member_probs.size(); }
};

EnsemblePrediction ensemble_predict(const BnnModel& model, const Tensor& x, size_t samples,
                                    Rng& rng);

// Fraction with argmax(mean probs) == label; argmax ties go to the lowest class.
scalar_t accuracy(const EnsemblePrediction& pred, const std::vector<int>& labels);

// Mean of -log(max(mean_prob[true class], 1e-12)).
scalar_t nll(const EnsemblePrediction& pred, const std::vector<int>& labels);

// Equal-width confidence bins over (0, 1]; confidence = max mean probability.
scalar_t ece(const EnsemblePrediction& pred, const std::vector<int>& labels, size_t bins = 20);

// H(mean) - mean member entropy, per sample, in nats.
std::vector<scalar_t> bald(const EnsemblePrediction& pred);

// Accuracy over the floor(f*N) samples with lowest uncertainty, per fraction.
// Ties broken by sample index; fractions must lie in (0, 1].
std::map<scalar_t, scalar_t> retention_curve(const EnsemblePrediction& pred,
                                             const std::vector<int>& labels,
                                             const std::vector<scalar_t>& uncertainties,
                                             const std::vector<scalar_t>& fractions);

struct MetricsReport {
    scalar_t acc = 0.0;
    scalar_t nll = 0.0;
    scalar_t ece = 0.0;
    std::map<scalar_t, scalar_t> retention;
    uint64_t seed = 0;
    uint64_t config_hash = 0;
};

MetricsReport evaluate(const BnnModel& model, const Tensor& x, const std::vector<int>& labels,
                       size_t samples, Rng& rng, const std::vector<scalar_t>& retention_fractions,
                       size_t ece_bins = 20);

} // namespace divbnn
