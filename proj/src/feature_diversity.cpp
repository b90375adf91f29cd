#include "divbnn/feature_diversity.hpp"

#include <cmath>
#include <stdexcept>

namespace divbnn {

AttentionParams make_attention(size_t tok_dim_k, size_t tok_dim_k1, size_t attn_dim, Rng& rng,
                               bool scale_scores) {
    auto init = [&](size_t in, size_t out) {
        scalar_t bound = 1.0 / std::sqrt(static_cast<scalar_t>(in));
        std::vector<scalar_t> w(in * out);
        for (auto& x : w) x = rng.uniform(-bound, bound);
        return Tensor::from({in, out}, std::move(w), true);
    };
    AttentionParams p;
    p.w_q = init(tok_dim_k1, attn_dim);
    p.w_k = init(tok_dim_k, attn_dim);
    p.w_v = init(tok_dim_k, attn_dim);
    p.attn_dim = attn_dim;
    p.scale_scores = scale_scores;
    return p;
}

size_t token_count(size_t dim, size_t preferred) {
    for (size_t m = std::min(dim, preferred); m > 1; --m)
        if (dim % m == 0) return m;
    return 1;
}

Tensor fuse_cross_attention(const Tensor& f_k, const Tensor& f_k1, const AttentionParams& attn,
                            size_t tokens_k, size_t tokens_k1) {
    if (f_k.shape().size() != 2 || f_k1.shape().size() != 2)
        throw std::invalid_argument("fuse_cross_attention: features must be 2-D batches");
    size_t n = f_k.shape()[0];
    if (n < 1) throw std::invalid_argument("fuse_cross_attention: empty batch");
    if (f_k1.shape()[0] != n)
        throw std::invalid_argument("fuse_cross_attention: batch size mismatch, " +
                                    std::to_string(n) + " vs " + std::to_string(f_k1.shape()[0]));
    size_t dim_k = f_k.shape()[1], dim_k1 = f_k1.shape()[1];
    if (dim_k % tokens_k != 0 || dim_k1 % tokens_k1 != 0)
        throw std::invalid_argument("fuse_cross_attention: token count must divide feature dim");
    size_t tok_dim_k = dim_k / tokens_k, tok_dim_k1 = dim_k1 / tokens_k1;
    if (attn.w_k.shape()[0] != tok_dim_k || attn.w_q.shape()[0] != tok_dim_k1)
        throw std::invalid_argument("fuse_cross_attention: projection dims do not match tokens");

    scalar_t score_scale =
        attn.scale_scores ? 1.0 / std::sqrt(static_cast<scalar_t>(attn.attn_dim)) : 1.0;
    std::vector<Tensor> fused;
    fused.reserve(n);
    for (size_t j = 0; j < n; ++j) {
        Tensor tk = reshape(slice_rows(f_k, j, j + 1), {tokens_k, tok_dim_k});
        Tensor tk1 = reshape(slice_rows(f_k1, j, j + 1), {tokens_k1, tok_dim_k1});
        Tensor q = matmul(tk1, attn.w_q);
        Tensor k = matmul(tk, attn.w_k);
        Tensor v = matmul(tk, attn.w_v);
        Tensor a = row_softmax(scale(matmul(q, transpose(k)), score_scale));
        fused.push_back(mean_rows(matmul(a, v))); // {attn_dim}
    }
    return concat_rows(fused); // {n, attn_dim}
}

Tensor similarity_kernel(const Tensor& a, const Tensor& b) {
    if (a.numel() != b.numel())
        throw std::invalid_argument("similarity_kernel: dimension mismatch");
    size_t d = a.numel();
    Tensor av = reshape(a, {1, d});
    Tensor bv = reshape(b, {1, d});
    Tensor dot = sum(mul(av, bv));
    Tensor ra = row_l2_norms(av, kKernelEps);
    Tensor rb = row_l2_norms(bv, kKernelEps);
    Tensor cosine = divide(dot, mul(reshape(ra, {1}), reshape(rb, {1})));
    return scale(add_scalar(cosine, 1.0), 0.5);
}

Tensor conditional_probabilities(const Tensor& fused) {
    if (fused.shape().size() != 2)
        throw std::invalid_argument("conditional_probabilities: expected 2-D batch");
    size_t n = fused.shape()[0];
    if (n < 2)
        throw std::invalid_argument("conditional_probabilities: need at least 2 samples, got " +
                                    std::to_string(n));
    Tensor gram = matmul(fused, transpose(fused)); // {n, n}
    Tensor inv_norms = reciprocal(row_l2_norms(fused, kKernelEps));
    Tensor cosine = scale_rows(scale_cols(gram, inv_norms), inv_norms);
    Tensor kernel = scale(add_scalar(cosine, 1.0), 0.5);
    Tensor off_diag = zero_diag(kernel);
    // column j normalizes over k != j
    return scale_cols(off_diag, reciprocal(col_sums(off_diag)));
}

Tensor feature_kl(const Tensor& g_from, const Tensor& g_to) {
    if (g_from.shape() != g_to.shape())
        throw std::invalid_argument("feature_kl: batch shape mismatch, " +
                                    shape_str(g_from.shape()) + " vs " + shape_str(g_to.shape()));
    size_t n = g_from.shape()[0];
    Tensor p = conditional_probabilities(g_from);
    Tensor q = conditional_probabilities(g_to);
    Tensor log_ratio = sub(log(add_scalar(p, kKernelEps)), log(add_scalar(q, kKernelEps)));
    return scale(sum(mul(p, log_ratio)), 1.0 / static_cast<scalar_t>(n));
}

Tensor diverse_feat_loss(const Tensor& d_kl) { return softplus(neg(d_kl)); }

std::vector<std::pair<size_t, size_t>> default_fusion_pairs(size_t num_blocks) {
    if (num_blocks < 2) return {};
    if (num_blocks == 2) return {{0, 1}};
    if (num_blocks == 3) return {{1, 2}};
    return {{1, 2}, {2, 3}};
}

std::vector<Tensor> FeatureFuser::trainable() const {
    std::vector<Tensor> out;
    for (const auto& p : params)
        for (auto& t : p.trainable()) out.push_back(t);
    return out;
}

FeatureFuser make_fuser(const std::vector<size_t>& block_dims, size_t attn_dim,
                        size_t preferred_tokens, bool scale_scores, Rng& rng) {
    FeatureFuser fuser;
    fuser.pairs = default_fusion_pairs(block_dims.size());
    for (auto [lo, hi] : fuser.pairs) {
        size_t m_lo = token_count(block_dims[lo], preferred_tokens);
        size_t m_hi = token_count(block_dims[hi], preferred_tokens);
        fuser.tokens_lo.push_back(m_lo);
        fuser.tokens_hi.push_back(m_hi);
        fuser.params.push_back(make_attention(block_dims[lo] / m_lo, block_dims[hi] / m_hi,
                                              attn_dim, rng, scale_scores));
    }
    return fuser;
}

std::vector<Tensor> fuse_all(const FeatureFuser& fuser, const std::vector<Tensor>& features) {
    std::vector<Tensor> out;
    for (size_t i = 0; i < fuser.pairs.size(); ++i) {
        auto [lo, hi] = fuser.pairs[i];
        if (hi >= features.size())
            throw std::invalid_argument("fuse_all: fusion pair references missing block");
        out.push_back(fuse_cross_attention(features[lo], features[hi], fuser.params[i],
                                           fuser.tokens_lo[i], fuser.tokens_hi[i]));
    }
    return out;
}

} // namespace divbnn
