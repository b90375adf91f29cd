#pragma once

#include <utility>
#include <vector>

#include "divbnn/rng.hpp"
#include "divbnn/tensor.hpp"

namespace divbnn {

inline constexpr scalar_t kKernelEps = 1e-8;

// Learnable query/key/value projections for one fused block pair.
// Tokens are rows; W_Q maps block-(k+1) tokens, W_K/W_V map block-k tokens,
// all into a common attention dimension.
struct AttentionParams {
    Tensor w_q; // {tok_dim_k1, attn_dim}
    Tensor w_k; // {tok_dim_k, attn_dim}
    Tensor w_v; // {tok_dim_k, attn_dim}
    size_t attn_dim = 0;
    bool scale_scores = true; // 1/sqrt(attn_dim) before softmax

    std::vector<Tensor> trainable() const { return {w_q, w_k, w_v}; }
};

AttentionParams make_attention(size_t tok_dim_k, size_t tok_dim_k1, size_t attn_dim, Rng& rng,
                               bool scale_scores = true);

// Largest token count <= preferred that divides dim; dense features are
// chunked into that many equal tokens.
size_t token_count(size_t dim, size_t preferred);

// Cross-attention fusion of per-sample features from two adjacent blocks.
// f_k, f_k1: {n, dim}; returns one mean-pooled fused vector per sample, {n, attn_dim}.
Tensor fuse_cross_attention(const Tensor& f_k, const Tensor& f_k1, const AttentionParams& attn,
                            size_t tokens_k, size_t tokens_k1);

// K(a, b) = (a.b / (|a||b|) + 1) / 2, in [0, 1]; eps-stabilized norms.
Tensor similarity_kernel(const Tensor& a, const Tensor& b);

// n x n matrix of conditional probabilities p_{i|j}: column j is a proper
// distribution over i != j, diagonal zero. Requires n >= 2.
Tensor conditional_probabilities(const Tensor& fused);

// (1/n) sum_j sum_{i!=j} P log((P+eps)/(Q+eps)) with P from g_from, Q from g_to.
Tensor feature_kl(const Tensor& g_from, const Tensor& g_to);

// softplus(-D_KL), in (0, ln 2].
Tensor diverse_feat_loss(const Tensor& d_kl);

// Which block pairs to fuse: (2,3) for 3 blocks; (2,3) and (3,4) for 4+.
std::vector<std::pair<size_t, size_t>> default_fusion_pairs(size_t num_blocks);

// Fusion state for one network: one AttentionParams per fused pair.
struct FeatureFuser {
    std::vector<std::pair<size_t, size_t>> pairs; // 0-based block indices
    std::vector<AttentionParams> params;
    std::vector<size_t> tokens_lo, tokens_hi;

    std::vector<Tensor> trainable() const;
};

FeatureFuser make_fuser(const std::vector<size_t>& block_dims, size_t attn_dim,
                        size_t preferred_tokens, bool scale_scores, Rng& rng);

// Fused batches for every configured pair, from one forward pass's features.
std::vector<Tensor> fuse_all(const FeatureFuser& fuser, const std::vector<Tensor>& features);

} // namespace divbnn
