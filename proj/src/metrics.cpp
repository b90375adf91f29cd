#include "divbnn/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace divbnn {

namespace {

std::vector<std::vector<scalar_t>> softmax_rows(const Tensor& logits) {
    size_t n = logits.shape()[0], c = logits.shape()[1];
    std::vector<std::vector<scalar_t>> out(n, std::vector<scalar_t>(c));
    for (size_t i = 0; i < n; ++i) {
        scalar_t mx = logits.at(i, 0);
        for (size_t j = 1; j < c; ++j) mx = std::max(mx, logits.at(i, j));
        scalar_t z = 0.0;
        for (size_t j = 0; j < c; ++j) z += (out[i][j] = std::exp(logits.at(i, j) - mx));
        for (size_t j = 0; j < c; ++j) out[i][j] /= z;
    }
    return out;
}

size_t argmax_lowest_tie(const std::vector<scalar_t>& v) {
    size_t best = 0;
    for (size_t j = 1; j < v.size(); ++j)
        if (v[j] > v[best]) best = j;
    return best;
}

scalar_t entropy_nats(const std::vector<scalar_t>& p) {
    scalar_t h = 0.0;
    for (scalar_t x : p)
        if (x > 0) h -= x * std::log(x);
    return h;
}

void check_labels(const EnsemblePrediction& pred, const std::vector<int>& labels) {
    if (labels.size() != pred.size())
        throw std::invalid_argument("metrics: label count mismatch");
}

} // namespace

EnsemblePrediction ensemble_predict(const BnnModel& model, const Tensor& x, size_t samples,
                                    Rng& rng) {
    if (samples < 1) throw std::invalid_argument("ensemble_predict: need at least 1 sample");
    EnsemblePrediction pred;
    size_t n = x.shape()[0], c = model.num_classes();
    pred.mean_probs.assign(n, std::vector<scalar_t>(c, 0.0));
    for (size_t s = 0; s < samples; ++s) {
        ForwardResult fwd = forward(model, x, rng);
        auto probs = softmax_rows(fwd.logits);
        for (size_t i = 0; i < n; ++i)
            for (size_t j = 0; j < c; ++j) pred.mean_probs[i][j] += probs[i][j];
        pred.member_probs.push_back(std::move(probs));
    }
    for (auto& row : pred.mean_probs)
        for (auto& p : row) p /= static_cast<scalar_t>(samples);
    return pred;
}

scalar_t accuracy(const EnsemblePrediction& pred, const std::vector<int>& labels) {
    check_labels(pred, labels);
    size_t correct = 0;
    for (size_t i = 0; i < pred.size(); ++i)
        if (argmax_lowest_tie(pred.mean_probs[i]) == static_cast<size_t>(labels[i])) ++correct;
    return pred.size() ? static_cast<scalar_t>(correct) / pred.size() : 0.0;
}

scalar_t nll(const EnsemblePrediction& pred, const std::vector<int>& labels) {
    check_labels(pred, labels);
    scalar_t total = 0.0;
    for (size_t i = 0; i < pred.size(); ++i)
        // max() rather than addition so probabilities above the floor are
        // scored exactly; zero probability still stays finite.
        total -= std::log(std::max(pred.mean_probs[i][labels[i]], 1e-12));
    return pred.size() ? total / pred.size() : 0.0;
}

scalar_t ece(const EnsemblePrediction& pred, const std::vector<int>& labels, size_t bins) {
    check_labels(pred, labels);
    if (bins < 1) throw std::invalid_argument("ece: need at least 1 bin");
    std::vector<size_t> count(bins, 0), correct(bins, 0);
    std::vector<scalar_t> conf_sum(bins, 0.0);
    for (size_t i = 0; i < pred.size(); ++i) {
        size_t top = argmax_lowest_tie(pred.mean_probs[i]);
        scalar_t conf = pred.mean_probs[i][top];
        // bins over (0, 1]: bin b covers (b/bins, (b+1)/bins]
        size_t b = conf <= 0.0 ? 0 : static_cast<size_t>(std::ceil(conf * bins)) - 1;
        b = std::min(b, bins - 1);
        ++count[b];
        conf_sum[b] += conf;
        if (top == static_cast<size_t>(labels[i])) ++correct[b];
    }
    scalar_t total = 0.0;
    for (size_t b = 0; b < bins; ++b) {
        if (count[b] == 0) continue;
        scalar_t acc_b = static_cast<scalar_t>(correct[b]) / count[b];
        scalar_t conf_b = conf_sum[b] / count[b];
        total += (static_cast<scalar_t>(count[b]) / pred.size()) * std::abs(acc_b - conf_b);
    }
    return total;
}

std::vector<scalar_t> bald(const EnsemblePrediction& pred) {
    size_t s = pred.samples();
    std::vector<scalar_t> out(pred.size());
    for (size_t i = 0; i < pred.size(); ++i) {
        scalar_t member_h = 0.0;
        for (size_t k = 0; k < s; ++k) member_h += entropy_nats(pred.member_probs[k][i]);
        out[i] = entropy_nats(pred.mean_probs[i]) - member_h / static_cast<scalar_t>(s);
    }
    return out;
}

std::map<scalar_t, scalar_t> retention_curve(const EnsemblePrediction& pred,
                                             const std::vector<int>& labels,
                                             const std::vector<scalar_t>& uncertainties,
                                             const std::vector<scalar_t>& fractions) {
    check_labels(pred, labels);
    if (uncertainties.size() != pred.size())
        throw std::invalid_argument("retention_curve: uncertainty count mismatch");
    for (scalar_t f : fractions)
        if (!(f > 0.0 && f <= 1.0))
            throw std::invalid_argument("retention_curve: fraction " + std::to_string(f) +
                                        " outside (0, 1]");
    std::vector<size_t> order(pred.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](size_t a, size_t b) { return uncertainties[a] < uncertainties[b]; });
    std::map<scalar_t, scalar_t> out;
    for (scalar_t f : fractions) {
        size_t keep = static_cast<size_t>(std::floor(f * pred.size()));
        keep = std::max<size_t>(keep, 1);
        size_t correct = 0;
        for (size_t k = 0; k < keep; ++k) {
            size_t i = order[k];
            if (argmax_lowest_tie(pred.mean_probs[i]) == static_cast<size_t>(labels[i])) ++correct;
        }
        out[f] = static_cast<scalar_t>(correct) / keep;
    }
    return out;
}

MetricsReport evaluate(const BnnModel& model, const Tensor& x, const std::vector<int>& labels,
                       size_t samples, Rng& rng, const std::vector<scalar_t>& retention_fractions,
                       size_t ece_bins) {
    EnsemblePrediction pred = ensemble_predict(model, x, samples, rng);
    MetricsReport report;
    report.acc = accuracy(pred, labels);
    report.nll = nll(pred, labels);
    report.ece = ece(pred, labels, ece_bins);
    if (!retention_fractions.empty())
        report.retention = retention_curve(pred, labels, bald(pred), retention_fractions);
    return report;
}

} // namespace divbnn
