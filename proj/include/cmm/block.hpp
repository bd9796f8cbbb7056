#pragma once

#include "cmm/correlation.hpp"
#include "cmm/film.hpp"
#include "cmm/ssm.hpp"
#include "cmm/types.hpp"

#include <variant>

namespace cmm {

struct CmmConfig {
    Index tokens = 16;      // T
    Index grids = 5;        // G
    Index d_t = 32;
    Index d_v = 32;
    Index d_shared = 32;    // defaults to d_t
    Index heads = 4;        // H
    Index head_dim = 8;     // D_H = d_shared / heads
    Index top_k = 4;
    SsmBackendChoice backend = SsmBackendChoice::DiagonalLti;
    Index ffn_hidden = 64;
    bool pool_output = true;
};

struct CmmWeights {
    CorrelationWeights correlation;
    FilmWeights film;
    std::variant<DiagonalSsmParams, SelectiveScanParams> ssm;
    Matrix ffn_w1;  // D_t x ffn_hidden
    Vector ffn_b1;
    Matrix ffn_w2;  // ffn_hidden x D_t
    Vector ffn_b2;
    Vector out_ln_gamma;  // D_t
    Vector out_ln_beta;
};

struct FusionOutput {
    Matrix sequence;           // T x D_t
    Vector pooled;             // D_t, column mean of sequence
    CorrelationScores scores;  // exposed for inspection
};

/// Full Cross-Modal Modulator forward pass:
/// project -> split heads -> correlate -> top-k -> aggregate context ->
/// FiLM-in -> SSM -> FiLM-out -> residual + FFN + LN -> mean pool.
/// The residual source is the raw token input, not the FiLM-ed stream.
FusionOutput cmm_forward(const TokenEmbeddings& xt, const GridEmbeddings& xv,
                         const CmmWeights& w, const CmmConfig& cfg);

// --- ablation baselines -----------------------------------------------

struct AttentionWeights {
    Index heads = 1;
    Matrix w_q, w_k, w_v, w_o;  // D_t x D_t each
};

struct BaselineWeights {
    // vision projection MLP: D_v -> 2*D_t -> D_t
    Matrix mlp_w1;
    Vector mlp_b1;
    Matrix mlp_w2;
    Vector mlp_b2;
    AttentionWeights attn;
    Matrix ffn_w1;
    Vector ffn_b1;
    Matrix ffn_w2;
    Vector ffn_b2;
    Vector ln_gamma, ln_beta;
};

/// Scaled dot-product attention for one stack of heads; queries attend over
/// all key rows (no causal mask). Output is the concatenated heads times w_o.
Matrix multi_head_attention(const Matrix& queries, const Matrix& keys_values,
                            const AttentionWeights& w);

/// Two-layer GELU MLP used by both baselines to project grids to D_t.
Matrix project_grids_mlp(const Matrix& xv, const BaselineWeights& w);

/// Prepend connector: project grids, prepend them to the token sequence,
/// run one self-attention + FFN layer, return the trailing T rows.
/// Quadratic in (G + T).
FusionOutput prepend_forward(const TokenEmbeddings& xt, const GridEmbeddings& xv,
                             const BaselineWeights& w);

/// Cross-attended connector: token queries against projected grid
/// keys/values, then residual + FFN + LN. Theta(T*G*D_t) per layer.
FusionOutput cross_attention_forward(const TokenEmbeddings& xt,
                                     const GridEmbeddings& xv,
                                     const BaselineWeights& w);

}  // namespace cmm
