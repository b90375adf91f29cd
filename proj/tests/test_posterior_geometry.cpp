#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "divbnn/posterior_geometry.hpp"
#include "divbnn/rng.hpp"

using namespace divbnn;

namespace {

DiagonalGaussian random_gaussian(size_t d, Rng& rng) {
    DiagonalGaussian q;
    for (size_t i = 0; i < d; ++i) {
        q.mu.push_back(rng.uniform(-2.0, 2.0));
        q.sigma.push_back(rng.uniform(0.1, 2.0));
    }
    return q;
}

// Gaussian log density with diagonal covariance.
scalar_t log_pdf(const DiagonalGaussian& q, const std::vector<scalar_t>& x) {
    scalar_t lp = 0;
    for (size_t i = 0; i < x.size(); ++i) {
        scalar_t z = (x[i] - q.mu[i]) / q.sigma[i];
        lp += -0.5 * z * z - std::log(q.sigma[i]) - 0.5 * std::log(2.0 * 3.14159265358979323846);
    }
    return lp;
}

} // namespace

TEST_CASE("worked transport distance example") {
    DiagonalGaussian q1{{1.0, 2.0}, {0.5, 0.5}};
    DiagonalGaussian q2{{0.0, 0.0}, {1.0, 1.5}};
    // ||mu1-mu2||^2 = 5, (0.5-1)^2 + (0.5-1.5)^2 = 1.25
    CHECK(w2_squared(q1, q2) == doctest::Approx(6.25).epsilon(1e-12));
    CHECK(param_distance(q1, q2, ParamMetric::W2) == doctest::Approx(6.25).epsilon(1e-12));
}

TEST_CASE("diagonal covariance term agrees with the explicit matrix trace") {
    Rng rng(21);
    for (int trial = 0; trial < 20; ++trial) {
        size_t d = 1 + rng.next_u64() % 4;
        std::vector<scalar_t> s1(d), s2(d);
        for (size_t i = 0; i < d; ++i) {
            s1[i] = rng.uniform(0.1, 2.0);
            s2[i] = rng.uniform(0.1, 2.0);
        }
        // tr(S1 + S2 - 2 (S1^{1/2} S2 S1^{1/2})^{1/2}) with diagonal matrices:
        // the inner product stays diagonal, so the root is elementwise.
        scalar_t trace = 0;
        for (size_t i = 0; i < d; ++i) {
            scalar_t inner = s1[i] * s1[i] * s2[i] * s2[i];
            trace += s1[i] * s1[i] + s2[i] * s2[i] - 2.0 * std::sqrt(inner);
        }
        CHECK(bures_squared_diag(s1, s2) == doctest::Approx(trace).epsilon(1e-10));
    }
}

TEST_CASE("transport distance satisfies metric axioms on random triples") {
    Rng rng(22);
    for (int trial = 0; trial < 1000; ++trial) {
        size_t d = 1 + rng.next_u64() % 6;
        DiagonalGaussian a = random_gaussian(d, rng);
        DiagonalGaussian b = random_gaussian(d, rng);
        DiagonalGaussian c = random_gaussian(d, rng);
        scalar_t dab = std::sqrt(w2_squared(a, b));
        scalar_t dbc = std::sqrt(w2_squared(b, c));
        scalar_t dac = std::sqrt(w2_squared(a, c));
        CHECK(dab >= 0.0);
        CHECK(dab == doctest::Approx(std::sqrt(w2_squared(b, a))).epsilon(1e-12));
        CHECK(dac <= dab + dbc + 1e-12);
    }
    DiagonalGaussian q = random_gaussian(4, rng);
    CHECK(w2_squared(q, q) == doctest::Approx(0.0));
}

TEST_CASE("closed-form divergence matches a Monte Carlo estimate") {
    Rng rng(23);
    DiagonalGaussian q1{{0.5, -0.3, 1.0}, {0.8, 0.4, 1.2}};
    DiagonalGaussian q2{{0.0, 0.2, 0.7}, {1.0, 0.6, 0.9}};
    const int trials = 400000;
    scalar_t acc = 0;
    for (int t = 0; t < trials; ++t) {
        std::vector<scalar_t> x(3);
        for (size_t i = 0; i < 3; ++i) x[i] = q1.mu[i] + q1.sigma[i] * rng.normal();
        acc += log_pdf(q1, x) - log_pdf(q2, x);
    }
    CHECK(kl_diag_gaussian(q1, q2) == doctest::Approx(acc / trials).epsilon(0.02));
    CHECK(kl_diag_gaussian(q1, q1) == doctest::Approx(0.0));
    CHECK(kl_diag_gaussian(q1, q2) >= 0.0);
    // Asymmetry: the two directions genuinely differ here.
    CHECK(std::abs(kl_diag_gaussian(q1, q2) - kl_diag_gaussian(q2, q1)) > 1e-4);
}

TEST_CASE("distance grows with mean separation") {
    DiagonalGaussian base{{0.0, 0.0}, {0.5, 0.5}};
    scalar_t prev_w2 = -1, prev_kl = -1;
    for (scalar_t shift : {0.0, 0.5, 1.0, 2.0, 4.0}) {
        DiagonalGaussian other{{shift, shift}, {0.5, 0.5}};
        scalar_t dw = param_distance(base, other, ParamMetric::W2);
        scalar_t dk = param_distance(base, other, ParamMetric::KL);
        CHECK(dw > prev_w2);
        CHECK(dk > prev_kl);
        prev_w2 = dw;
        prev_kl = dk;
    }
}

TEST_CASE("repulsion loss values and saturation") {
    CHECK(diverse_param_loss(0.0) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(diverse_param_loss(1.0) == doctest::Approx(0.3132616875182228).epsilon(1e-12));
    for (scalar_t d : {0.0, 0.1, 10.0, 1e6, 1e300}) {
        scalar_t v = diverse_param_loss(d);
        CHECK(std::isfinite(v));
        CHECK(v >= 0.0);
        CHECK(v <= std::log(2.0) + 1e-15);
    }
    CHECK(diverse_param_loss(5.0) < diverse_param_loss(4.0)); // monotone repulsion
}

TEST_CASE("graph versions agree with the plain closed forms") {
    Rng rng(24);
    DiagonalGaussian q1 = random_gaussian(5, rng);
    DiagonalGaussian q2 = random_gaussian(5, rng);
    Tensor mu1 = Tensor::from({5}, q1.mu, true);
    Tensor s1 = Tensor::from({5}, q1.sigma, true);
    Tensor mu2 = Tensor::from({5}, q2.mu, true);
    Tensor s2 = Tensor::from({5}, q2.sigma, true);

    CHECK(w2_squared(mu1, s1, mu2, s2).item() ==
          doctest::Approx(w2_squared(q1, q2)).epsilon(1e-12));
    CHECK(kl_diag_gaussian(mu1, s1, mu2, s2).item() ==
          doctest::Approx(kl_diag_gaussian(q1, q2)).epsilon(1e-12));
    CHECK(diverse_param_loss(Tensor::scalar(1.0)).item() ==
          doctest::Approx(diverse_param_loss(1.0)).epsilon(1e-12));

    auto rep = grad_check([&] { return diverse_param_loss(w2_squared(mu1, s1, mu2, s2)); },
                          {mu1, s1, mu2, s2});
    CHECK(rep.passed);
}

TEST_CASE("model-level distance matches the flattened posterior") {
    Rng rng(25);
    BnnModel m1 = make_model({{2, 4, 2}, {1, 2}}, SamplingMode::BBB, PriorSpec{0.0, 0.1}, rng);
    BnnModel m2 = make_model({{2, 4, 2}, {1, 2}}, SamplingMode::BBB, PriorSpec{0.0, 0.1}, rng);
    DiagonalGaussian q1 = posterior_of(m1);
    DiagonalGaussian q2 = posterior_of(m2);

    Tensor d_w2 = param_distance(m1, q2, ParamMetric::W2);
    CHECK(d_w2.item() == doctest::Approx(w2_squared(q1, q2)).epsilon(1e-10));

    // Argument order matters for the asymmetric divergence.
    Tensor d_kl_fwd = param_distance(m1, q2, ParamMetric::KL, true);
    Tensor d_kl_rev = param_distance(m1, q2, ParamMetric::KL, false);
    CHECK(d_kl_fwd.item() == doctest::Approx(kl_diag_gaussian(q1, q2)).epsilon(1e-10));
    CHECK(d_kl_rev.item() == doctest::Approx(kl_diag_gaussian(q2, q1)).epsilon(1e-10));

    // Gradients flow into the live model only.
    auto rep = grad_check(
        [&] { return diverse_param_loss(param_distance(m1, q2, ParamMetric::W2)); },
        m1.trainable());
    CHECK(rep.passed);
}
