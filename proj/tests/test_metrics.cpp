#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "divbnn/metrics.hpp"

using namespace divbnn;

namespace {

EnsemblePrediction from_means(std::vector<std::vector<scalar_t>> probs) {
    EnsemblePrediction p;
    p.member_probs = {probs};
    p.mean_probs = std::move(probs);
    return p;
}

} // namespace

TEST_CASE("accuracy counts argmax hits with low-index tie breaking") {
    EnsemblePrediction p = from_means({{0.9, 0.1}, {0.2, 0.8}, {0.5, 0.5}, {0.1, 0.9}});
    CHECK(accuracy(p, {0, 1, 0, 1}) == doctest::Approx(1.0));
    CHECK(accuracy(p, {0, 1, 1, 1}) == doctest::Approx(0.75)); // tie goes to class 0
    CHECK(accuracy(p, {1, 0, 1, 0}) == doctest::Approx(0.0));
}

TEST_CASE("negative log likelihood oracles") {
    EnsemblePrediction p = from_means({{0.5, 0.5}, {0.25, 0.75}});
    // p_true = (0.5, 0.25): (ln 2 + ln 4) / 2
    scalar_t expect = 0.5 * (std::log(2.0) + std::log(4.0));
    CHECK(nll(p, {0, 0}) == doctest::Approx(expect).epsilon(1e-10));

    EnsemblePrediction uniform = from_means({{0.25, 0.25, 0.25, 0.25}});
    CHECK(nll(uniform, {2}) == doctest::Approx(std::log(4.0)).epsilon(1e-12));

    // The epsilon guard keeps a zero-probability truth finite.
    EnsemblePrediction zero = from_means({{1.0, 0.0}});
    CHECK(std::isfinite(nll(zero, {1})));
}

TEST_CASE("calibration error hand cases") {
    // One sample at confidence 0.9, correct: |1 - 0.9| = 0.1.
    EnsemblePrediction single = from_means({{0.9, 0.1}});
    CHECK(ece(single, {0}, 20) == doctest::Approx(0.1).epsilon(1e-12));

    // Confidences 0.6,0.6,0.9,0.9 with correctness 1,0,1,1:
    // 0.5*|0.5-0.6| + 0.5*|1.0-0.9| = 0.1.
    EnsemblePrediction four =
        from_means({{0.6, 0.4}, {0.6, 0.4}, {0.9, 0.1}, {0.9, 0.1}});
    CHECK(ece(four, {0, 1, 0, 0}, 20) == doctest::Approx(0.1).epsilon(1e-12));

    // Confidence equal to accuracy in the only occupied bin: zero error.
    EnsemblePrediction half = from_means({{0.5, 0.5}, {0.5, 0.5}});
    CHECK(ece(half, {0, 1}, 20) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("a large perfectly calibrated set scores near zero calibration error") {
    Rng rng(41);
    EnsemblePrediction p;
    std::vector<int> labels;
    for (int i = 0; i < 10000; ++i) {
        scalar_t c = rng.uniform(0.5, 1.0);
        p.mean_probs.push_back({c, 1.0 - c});
        labels.push_back(rng.uniform() < c ? 0 : 1);
    }
    p.member_probs = {p.mean_probs};
    CHECK(ece(p, labels, 20) < 0.02);
}

TEST_CASE("disagreement uncertainty oracles") {
    EnsemblePrediction agree;
    agree.member_probs = {{{0.7, 0.3}}, {{0.7, 0.3}}, {{0.7, 0.3}}};
    agree.mean_probs = {{0.7, 0.3}};
    CHECK(std::abs(bald(agree)[0]) < 1e-10);

    EnsemblePrediction split;
    split.member_probs = {{{1.0, 0.0}}, {{0.0, 1.0}}};
    split.mean_probs = {{0.5, 0.5}};
    CHECK(bald(split)[0] == doctest::Approx(std::log(2.0)).epsilon(1e-10));

    // Mutual information never exceeds the mean entropy, and member order
    // is irrelevant.
    EnsemblePrediction mixed;
    mixed.member_probs = {{{0.9, 0.1}}, {{0.4, 0.6}}, {{0.2, 0.8}}};
    mixed.mean_probs = {{0.5, 0.5}};
    scalar_t b = bald(mixed)[0];
    CHECK(b >= -1e-10);
    CHECK(b <= std::log(2.0) + 1e-10);
    std::swap(mixed.member_probs[0], mixed.member_probs[2]);
    CHECK(bald(mixed)[0] == doctest::Approx(b).epsilon(1e-14));
}

TEST_CASE("retention keeps the most certain samples first") {
    EnsemblePrediction p = from_means(
        {{0.9, 0.1}, {0.8, 0.2}, {0.7, 0.3}, {0.6, 0.4}, {0.55, 0.45}});
    std::vector<int> labels = {0, 0, 1, 1, 1}; // certain ones correct
    std::vector<scalar_t> unc = {0.1, 0.2, 0.3, 0.4, 0.5};

    auto curve = retention_curve(p, labels, unc, {0.2, 0.4, 0.6, 0.8, 1.0});
    CHECK(curve[0.2] == doctest::Approx(1.0)); // just sample 0
    CHECK(curve[0.4] == doctest::Approx(1.0));
    CHECK(curve[0.6] == doctest::Approx(2.0 / 3.0));
    CHECK(curve[0.8] == doctest::Approx(0.5));
    CHECK(curve[1.0] == doctest::Approx(accuracy(p, labels)));
    // Anti-correlated uncertainty makes accuracy non-increasing in f.
    CHECK(curve[0.2] >= curve[0.4]);
    CHECK(curve[0.4] >= curve[0.6]);
    CHECK(curve[0.6] >= curve[0.8]);

    CHECK_THROWS(retention_curve(p, labels, unc, {0.0}));
    CHECK_THROWS(retention_curve(p, labels, unc, {1.5}));
}

TEST_CASE("ensemble prediction averages softmax members and is deterministic") {
    Rng init(42);
    BnnModel m = make_model({{2, 8, 3}, {1, 2}}, SamplingMode::Radial, PriorSpec{0.0, 0.1},
                            init);
    Tensor x = Tensor::from({6, 2}, {0.1, -0.2, 1.0, 0.4, -0.7, 0.3,
                                     0.9, 0.9, -1.0, 0.1, 0.2, -0.5});
    Rng r1(43);
    EnsemblePrediction p1 = ensemble_predict(m, x, 10, r1);
    REQUIRE(p1.size() == 6);
    REQUIRE(p1.samples() == 10);
    for (size_t i = 0; i < 6; ++i) {
        scalar_t s = 0, manual = 0;
        for (size_t c = 0; c < 3; ++c) {
            s += p1.mean_probs[i][c];
            scalar_t acc = 0;
            for (size_t k = 0; k < 10; ++k) acc += p1.member_probs[k][i][c];
            manual += std::abs(acc / 10 - p1.mean_probs[i][c]);
        }
        CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
        CHECK(manual < 1e-12);
    }
    Rng r2(43);
    EnsemblePrediction p2 = ensemble_predict(m, x, 10, r2);
    CHECK(p1.mean_probs == p2.mean_probs); // bitwise replay

    // Near-zero posterior spread collapses the ensemble onto one member.
    for (auto& layer : m.layers) {
        for (auto& v : layer.rho_w.mutable_values()) v = rho_for_sigma(1e-12);
        for (auto& v : layer.rho_b.mutable_values()) v = rho_for_sigma(1e-12);
    }
    Rng r3(44);
    EnsemblePrediction tight = ensemble_predict(m, x, 5, r3);
    for (size_t k = 0; k < 5; ++k)
        for (size_t i = 0; i < 6; ++i)
            for (size_t c = 0; c < 3; ++c)
                CHECK(tight.member_probs[k][i][c] ==
                      doctest::Approx(tight.mean_probs[i][c]).epsilon(1e-8));
}

TEST_CASE("full evaluation report wires the pieces together") {
    Rng init(45);
    BnnModel m = make_model({{2, 6, 2}, {1, 2}}, SamplingMode::BBB, PriorSpec{0.0, 0.1}, init);
    Tensor x = Tensor::from({4, 2}, {0.0, 0.1, 0.5, -0.3, -0.8, 0.2, 0.3, 0.9});
    std::vector<int> y = {0, 1, 0, 1};
    Rng r(46);
    MetricsReport rep = evaluate(m, x, y, 8, r, {0.5, 1.0}, 20);
    CHECK(rep.acc >= 0.0);
    CHECK(rep.acc <= 1.0);
    CHECK(rep.ece >= 0.0);
    CHECK(rep.ece <= 1.0);
    CHECK(std::isfinite(rep.nll));
    REQUIRE(rep.retention.size() == 2);
    CHECK(rep.retention.count(1.0) == 1);
    CHECK(rep.retention[1.0] == doctest::Approx(rep.acc));
}
