#include "cmm/block.hpp"

#include "cmm/numeric.hpp"

#include <cmath>
#include <string>
#include <utility>

namespace cmm {

namespace {

template <typename Fn>
auto stage(const char* name, Fn&& fn) {
    try {
        return fn();
    } catch (const ShapeError& e) {
        throw ShapeError(std::string(name) + ": " + e.what());
    }
}

Matrix ffn_apply(const Matrix& u, const Matrix& w1, const Vector& b1,
                 const Matrix& w2, const Vector& b2) {
    Matrix hidden = matmul(u, w1);
    hidden.rowwise() += b1.transpose();
    Matrix out = matmul(gelu(hidden), w2);
    out.rowwise() += b2.transpose();
    return out;
}

void check_inputs(const TokenEmbeddings& xt, const GridEmbeddings& xv,
                  const CmmConfig& cfg) {
    if (xt.tokens() != cfg.tokens || xt.channels() != cfg.d_t) {
        throw ShapeError("inputs: token embeddings " +
                         std::to_string(xt.tokens()) + "x" +
                         std::to_string(xt.channels()) + " vs config " +
                         std::to_string(cfg.tokens) + "x" + std::to_string(cfg.d_t));
    }
    if (xv.grids() != cfg.grids || xv.channels() != cfg.d_v) {
        throw ShapeError("inputs: grid embeddings " + std::to_string(xv.grids()) +
                         "x" + std::to_string(xv.channels()) + " vs config " +
                         std::to_string(cfg.grids) + "x" + std::to_string(cfg.d_v));
    }
}

}  // namespace

FusionOutput cmm_forward(const TokenEmbeddings& xt, const GridEmbeddings& xv,
                         const CmmWeights& w, const CmmConfig& cfg) {
    check_inputs(xt, xv, cfg);

    auto [xt_proj, xv_proj] =
        stage("project_shared", [&] { return project_shared(xt, xv, w.correlation); });

    FusionOutput out;
    out.scores = stage("correlate", [&] {
        return correlate(split_heads(xt_proj, cfg.heads),
                         split_heads(xv_proj, cfg.heads));
    });
    apply_topk(out.scores, cfg.top_k);
    const Matrix context =
        stage("aggregate_context", [&] { return aggregate_context(out.scores, xv_proj); });

    const FilmParams film_in_params =
        stage("film_generate_in", [&] { return film_generate(context, w.film.w_in); });
    const Matrix x_film = stage("film_in", [&] {
        return film_in(xt.values, film_in_params, w.film.alpha, w.film.ln_gamma,
                       w.film.ln_beta);
    });

    const Matrix y_ssm = stage("ssm", [&] {
        if (std::holds_alternative<DiagonalSsmParams>(w.ssm)) {
            return ssm_scan_recurrent(x_film, std::get<DiagonalSsmParams>(w.ssm));
        }
        return selective_scan(x_film, std::get<SelectiveScanParams>(w.ssm));
    });

    const FilmParams film_out_params =
        stage("film_generate_out", [&] { return film_generate(context, w.film.w_out); });
    const Matrix y_film =
        stage("film_out", [&] { return film_out(y_ssm, film_out_params, w.film.alpha); });

    // residual from the raw token input
    const Matrix u = xt.values + y_film;
    out.sequence = stage("ffn", [&] {
        return layer_norm(u + ffn_apply(u, w.ffn_w1, w.ffn_b1, w.ffn_w2, w.ffn_b2),
                          w.out_ln_gamma, w.out_ln_beta, kLayerNormEps);
    });
    out.pooled = out.sequence.colwise().mean();
    return out;
}

Matrix multi_head_attention(const Matrix& queries, const Matrix& keys_values,
                            const AttentionWeights& w) {
    if (queries.cols() != w.w_q.rows() || keys_values.cols() != w.w_k.rows()) {
        throw ShapeError("attention: input channels disagree with projections");
    }
    if (w.w_q.cols() % w.heads != 0) {
        throw ShapeError("attention: width not divisible by head count");
    }
    const Index head_dim = w.w_q.cols() / w.heads;
    const Scalar scale = 1.0 / std::sqrt(static_cast<Scalar>(head_dim));
    const Matrix q = matmul(queries, w.w_q);
    const Matrix k = matmul(keys_values, w.w_k);
    const Matrix v = matmul(keys_values, w.w_v);

    Matrix concat(queries.rows(), w.w_q.cols());
    // query rows processed in blocks so the score matrix stays small at
    // benchmark sequence lengths
    constexpr Index kBlock = 512;
    for (Index h = 0; h < w.heads; ++h) {
        const auto qh = q.middleCols(h * head_dim, head_dim);
        const auto kh = k.middleCols(h * head_dim, head_dim);
        const auto vh = v.middleCols(h * head_dim, head_dim);
        for (Index r0 = 0; r0 < q.rows(); r0 += kBlock) {
            const Index nr = std::min(kBlock, q.rows() - r0);
            const Matrix probs =
                softmax_rows(qh.middleRows(r0, nr) * kh.transpose() * scale);
            concat.block(r0, h * head_dim, nr, head_dim) = probs * vh;
        }
    }
    return matmul(concat, w.w_o);
}

Matrix project_grids_mlp(const Matrix& xv, const BaselineWeights& w) {
    return ffn_apply(xv, w.mlp_w1, w.mlp_b1, w.mlp_w2, w.mlp_b2);
}

FusionOutput prepend_forward(const TokenEmbeddings& xt, const GridEmbeddings& xv,
                             const BaselineWeights& w) {
    const Index grids = xv.grids();
    Matrix seq(grids + xt.tokens(), xt.channels());
    if (grids > 0) {
        seq.topRows(grids) = stage("grid_mlp", [&] { return project_grids_mlp(xv.values, w); });
    }
    seq.bottomRows(xt.tokens()) = xt.values;

    const Matrix attended =
        stage("self_attention", [&] { return multi_head_attention(seq, seq, w.attn); });
    const Matrix u = seq + attended;
    const Matrix full = stage("ffn", [&] {
        return layer_norm(u + ffn_apply(u, w.ffn_w1, w.ffn_b1, w.ffn_w2, w.ffn_b2),
                          w.ln_gamma, w.ln_beta, kLayerNormEps);
    });

    FusionOutput out;
    out.sequence = full.bottomRows(xt.tokens());
    out.pooled = out.sequence.colwise().mean();
    return out;
}

FusionOutput cross_attention_forward(const TokenEmbeddings& xt,
                                     const GridEmbeddings& xv,
                                     const BaselineWeights& w) {
    const Matrix grids_proj =
        stage("grid_mlp", [&] { return project_grids_mlp(xv.values, w); });
    const Matrix attended = stage("cross_attention", [&] {
        return multi_head_attention(xt.values, grids_proj, w.attn);
    });
    const Matrix u = xt.values + attended;

    FusionOutput out;
    out.sequence = stage("ffn", [&] {
        return layer_norm(u + ffn_apply(u, w.ffn_w1, w.ffn_b1, w.ffn_w2, w.ffn_b2),
                          w.ln_gamma, w.ln_beta, kLayerNormEps);
    });
    out.pooled = out.sequence.colwise().mean();
    return out;
}

}  // namespace cmm
