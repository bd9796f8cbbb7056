#pragma once

#include "cmm/types.hpp"

namespace cmm {

/// Text-side input, T tokens x D_t channels.
struct TokenEmbeddings {
    Matrix values;  // T x D_t
    Index tokens() const { return values.rows(); }
    Index channels() const { return values.cols(); }
};

/// Vision-side input, G grids x D_v channels.
struct GridEmbeddings {
    Matrix values;  // G x D_v
    Index grids() const { return values.rows(); }
    Index channels() const { return values.cols(); }
};

struct CorrelationConfig {
    Index heads = 1;
    Index head_dim = 0;
    Index top_k = 4;
    Index shared_dim = 0;  // heads * head_dim
};

struct CorrelationWeights {
    Matrix w_t;  // D_t x D_shared
    Matrix w_v;  // D_v x D_shared
};

/// Per-head token-to-grid scores. `scores` is post-softmax, `mask` marks the
/// retained top-k grids per (head, token) row, `renormalized` is masked and
/// rescaled back onto the simplex.
struct CorrelationScores {
    Tensor3 scores;        // H x T x G
    Tensor3Mask mask;      // H x T x G
    Tensor3 renormalized;  // H x T x G
};

/// Shared-latent projection: X_t' = X_t W_t, X_v' = X_v W_v.
std::pair<Matrix, Matrix> project_shared(const TokenEmbeddings& xt,
                                         const GridEmbeddings& xv,
                                         const CorrelationWeights& w);

/// Split N x D_shared into heads of contiguous channel slices.
Tensor3 split_heads(const Matrix& x, Index heads);

/// Inverse of split_heads; bit-exact roundtrip.
Matrix merge_heads(const Tensor3& x);

/// Scaled dot-product scores per head, softmax over the grid dimension.
CorrelationScores correlate(const Tensor3& xt_heads, const Tensor3& xv_heads);

/// Fill mask + renormalized for the top-k grids per (head, token) row.
void apply_topk(CorrelationScores& scores, Index k);

/// Head-average the renormalized scores and take the weighted sum of
/// projected grid rows; each output row is a convex combination of them.
Matrix aggregate_context(const CorrelationScores& scores, const Matrix& xv_proj);

}  // namespace cmm
