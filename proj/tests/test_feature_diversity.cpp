#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "divbnn/feature_diversity.hpp"
#include "divbnn/rng.hpp"

using namespace divbnn;

namespace {

Tensor rand_tensor(Shape shape, Rng& rng, bool grad = false) {
    std::vector<scalar_t> v(shape_numel(shape));
    for (auto& x : v) x = rng.normal();
    return Tensor::from(std::move(shape), std::move(v), grad);
}

AttentionParams identity_1d() {
    AttentionParams p;
    p.w_q = Tensor::from({1, 1}, {1.0}, true);
    p.w_k = Tensor::from({1, 1}, {1.0}, true);
    p.w_v = Tensor::from({1, 1}, {1.0}, true);
    p.attn_dim = 1;
    p.scale_scores = true; // 1/sqrt(1), a no-op
    return p;
}

// Brute-force conditional probability matrix from fused rows.
std::vector<std::vector<scalar_t>> brute_conditionals(const Tensor& g) {
    size_t n = g.rows(), d = g.cols();
    auto kernel = [&](size_t i, size_t j) {
        scalar_t dot = 0, ni = 0, nj = 0;
        for (size_t c = 0; c < d; ++c) {
            dot += g.at(i, c) * g.at(j, c);
            ni += g.at(i, c) * g.at(i, c);
            nj += g.at(j, c) * g.at(j, c);
        }
        ni = std::sqrt(ni + kKernelEps * kKernelEps);
        nj = std::sqrt(nj + kKernelEps * kKernelEps);
        return 0.5 * (dot / (ni * nj) + 1.0);
    };
    std::vector<std::vector<scalar_t>> p(n, std::vector<scalar_t>(n, 0.0));
    for (size_t j = 0; j < n; ++j) {
        scalar_t col = 0;
        for (size_t i = 0; i < n; ++i)
            if (i != j) col += kernel(i, j);
        for (size_t i = 0; i < n; ++i)
            if (i != j) p[i][j] = kernel(i, j) / col;
    }
    return p;
}

} // namespace

TEST_CASE("token count is the largest divisor within the preference") {
    CHECK(token_count(8, 4) == 4);
    CHECK(token_count(6, 4) == 3);
    CHECK(token_count(7, 4) == 1);
    CHECK(token_count(4, 4) == 4);
    CHECK(token_count(2, 4) == 2);
    CHECK(token_count(12, 5) == 4);
}

TEST_CASE("single-token attention collapses to a value projection") {
    // One query and one key: the softmax weight is exactly 1, so the fused
    // vector is just the value projection of the whole feature row.
    Rng rng(31);
    Tensor f_k = rand_tensor({3, 4}, rng);
    Tensor f_k1 = rand_tensor({3, 2}, rng);
    AttentionParams attn = make_attention(4, 2, 5, rng);
    Tensor fused = fuse_cross_attention(f_k, f_k1, attn, 1, 1);
    Tensor expected = matmul(f_k, attn.w_v);
    REQUIRE(fused.shape() == Shape{3, 5});
    for (size_t i = 0; i < fused.numel(); ++i)
        CHECK(fused.values()[i] == doctest::Approx(expected.values()[i]).epsilon(1e-12));
}

TEST_CASE("two-token attention matches a hand computation") {
    scalar_t a1 = 0.8, a2 = -0.3, b1 = 1.1, b2 = 0.4;
    Tensor f_k = Tensor::from({1, 2}, {a1, a2});
    Tensor f_k1 = Tensor::from({1, 2}, {b1, b2});
    Tensor fused = fuse_cross_attention(f_k, f_k1, identity_1d(), 2, 2);

    auto row_out = [&](scalar_t q) {
        scalar_t e1 = std::exp(q * a1), e2 = std::exp(q * a2);
        return (e1 * a1 + e2 * a2) / (e1 + e2);
    };
    scalar_t expect = 0.5 * (row_out(b1) + row_out(b2));
    REQUIRE(fused.shape() == Shape{1, 1});
    CHECK(fused.item() == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("similarity kernel hits its anchor values") {
    Tensor a = Tensor::from({3}, {1.0, 0.0, 0.0});
    Tensor b = Tensor::from({3}, {-1.0, 0.0, 0.0});
    Tensor c = Tensor::from({3}, {0.0, 2.0, 0.0});
    CHECK(similarity_kernel(a, a).item() == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(similarity_kernel(a, b).item() == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(similarity_kernel(a, c).item() == doctest::Approx(0.5).epsilon(1e-9));
    // Zero vectors stay finite and land on the midpoint.
    Tensor z = Tensor::from({3}, {0.0, 0.0, 0.0});
    CHECK(similarity_kernel(z, a).item() == doctest::Approx(0.5).epsilon(1e-6));
}

TEST_CASE("conditional probabilities match brute force and normalize per column") {
    Rng rng(32);
    for (size_t n : {2, 3, 5}) {
        Tensor g = rand_tensor({n, 4}, rng);
        Tensor p = conditional_probabilities(g);
        auto expect = brute_conditionals(g);
        for (size_t i = 0; i < n; ++i)
            for (size_t j = 0; j < n; ++j)
                CHECK(p.at(i, j) == doctest::Approx(expect[i][j]).epsilon(1e-10));
        for (size_t j = 0; j < n; ++j) {
            scalar_t col = 0;
            for (size_t i = 0; i < n; ++i) col += p.at(i, j);
            CHECK(col == doctest::Approx(1.0).epsilon(1e-9));
            CHECK(p.at(j, j) == 0.0);
        }
    }
}

TEST_CASE("feature divergence: brute force, self-zero, rotation invariance") {
    Rng rng(33);
    Tensor ga = rand_tensor({3, 2}, rng);
    Tensor gb = rand_tensor({3, 2}, rng);

    auto pa = brute_conditionals(ga);
    auto pb = brute_conditionals(gb);
    scalar_t expect = 0;
    for (size_t j = 0; j < 3; ++j)
        for (size_t i = 0; i < 3; ++i) {
            if (i == j) continue;
            expect += pa[i][j] * std::log((pa[i][j] + kKernelEps) / (pb[i][j] + kKernelEps));
        }
    expect /= 3.0;
    CHECK(feature_kl(ga, gb).item() == doctest::Approx(expect).epsilon(1e-10));

    CHECK(feature_kl(ga, ga).item() == doctest::Approx(0.0));
    CHECK(feature_kl(ga, gb).item() >= 0.0);

    // Rotating every fused vector by the same orthogonal map preserves all
    // cosines, hence the divergence.
    scalar_t th = 0.7;
    std::vector<scalar_t> rot;
    for (size_t i = 0; i < 3; ++i) {
        rot.push_back(std::cos(th) * ga.at(i, 0) - std::sin(th) * ga.at(i, 1));
        rot.push_back(std::sin(th) * ga.at(i, 0) + std::cos(th) * ga.at(i, 1));
    }
    Tensor ga_rot = Tensor::from({3, 2}, rot);
    std::vector<scalar_t> rotb;
    for (size_t i = 0; i < 3; ++i) {
        rotb.push_back(std::cos(th) * gb.at(i, 0) - std::sin(th) * gb.at(i, 1));
        rotb.push_back(std::sin(th) * gb.at(i, 0) + std::cos(th) * gb.at(i, 1));
    }
    Tensor gb_rot = Tensor::from({3, 2}, rotb);
    CHECK(feature_kl(ga_rot, gb_rot).item() ==
          doctest::Approx(feature_kl(ga, gb).item()).epsilon(1e-10));
}

TEST_CASE("feature repulsion loss saturates like the parameter one") {
    CHECK(diverse_feat_loss(Tensor::scalar(0.0)).item() ==
          doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(diverse_feat_loss(Tensor::scalar(1.0)).item() ==
          doctest::Approx(0.3132616875182228).epsilon(1e-12));
    CHECK(std::isfinite(diverse_feat_loss(Tensor::scalar(1e8)).item()));
}

TEST_CASE("fusion pair selection by block count") {
    CHECK(default_fusion_pairs(3) == std::vector<std::pair<size_t, size_t>>{{1, 2}});
    CHECK(default_fusion_pairs(4) == std::vector<std::pair<size_t, size_t>>{{1, 2}, {2, 3}});
    CHECK(default_fusion_pairs(5) == std::vector<std::pair<size_t, size_t>>{{1, 2}, {2, 3}});
}

TEST_CASE("fuser produces one fused batch per configured pair") {
    Rng rng(34);
    std::vector<size_t> block_dims = {6, 4, 3};
    FeatureFuser fuser = make_fuser(block_dims, 5, 4, true, rng);
    REQUIRE(fuser.pairs.size() == 1);
    CHECK(fuser.pairs[0] == std::pair<size_t, size_t>{1, 2});

    std::vector<Tensor> features = {rand_tensor({7, 6}, rng), rand_tensor({7, 4}, rng),
                                    rand_tensor({7, 3}, rng)};
    auto fused = fuse_all(fuser, features);
    REQUIRE(fused.size() == 1);
    CHECK(fused[0].shape() == Shape{7, 5});
}

TEST_CASE("whole feature pipeline passes a finite-difference check") {
    Rng rng(35);
    Tensor fa = rand_tensor({4, 6}, rng, true);
    Tensor fa1 = rand_tensor({4, 4}, rng, true);
    Tensor fb = rand_tensor({4, 6}, rng, true);
    Tensor fb1 = rand_tensor({4, 4}, rng, true);
    size_t tl = token_count(6, 4), th = token_count(4, 4);
    AttentionParams attn = make_attention(6 / tl, 4 / th, 3, rng);
    AttentionParams attn_peer = make_attention(6 / tl, 4 / th, 3, rng);
    auto f = [&] {
        Tensor g_self = fuse_cross_attention(fa, fa1, attn, tl, th);
        Tensor g_peer = fuse_cross_attention(fb, fb1, attn_peer, tl, th).detach();
        return diverse_feat_loss(feature_kl(g_peer, g_self));
    };
    std::vector<Tensor> leaves = {fa, fa1};
    for (auto t : attn.trainable()) leaves.push_back(t);
    auto rep = grad_check(f, leaves);
    CHECK_MESSAGE(rep.passed, "worst rel err " << rep.worst);
}
