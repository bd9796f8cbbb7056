#include "cmm/correlation.hpp"

#include "cmm/numeric.hpp"

#include <cmath>

namespace cmm {

std::pair<Matrix, Matrix> project_shared(const TokenEmbeddings& xt,
                                         const GridEmbeddings& xv,
                                         const CorrelationWeights& w) {
    if (xt.channels() != w.w_t.rows()) {
        throw ShapeError("project_shared: token channels " +
                         std::to_string(xt.channels()) + " vs W_t rows " +
                         std::to_string(w.w_t.rows()));
    }
    if (xv.channels() != w.w_v.rows()) {
        throw ShapeError("project_shared: grid channels " +
                         std::to_string(xv.channels()) + " vs W_v rows " +
                         std::to_string(w.w_v.rows()));
    }
    if (w.w_t.cols() != w.w_v.cols()) {
        throw ShapeError("project_shared: W_t and W_v disagree on shared dim");
    }
    return {matmul(xt.values, w.w_t), matmul(xv.values, w.w_v)};
}

Tensor3 split_heads(const Matrix& x, Index heads) {
    if (heads < 1 || x.cols() % heads != 0) {
        throw ParamError("split_heads: " + std::to_string(x.cols()) +
                         " channels not divisible by " + std::to_string(heads) +
                         " heads");
    }
    const Index head_dim = x.cols() / heads;
    Tensor3 out(heads, x.rows(), head_dim);
    for (Index h = 0; h < heads; ++h) {
        slice(out, h) = x.middleCols(h * head_dim, head_dim);
    }
    return out;
}

Matrix merge_heads(const Tensor3& x) {
    Matrix out(x.d1, x.d0 * x.d2);
    for (Index h = 0; h < x.d0; ++h) {
        out.middleCols(h * x.d2, x.d2) = slice(x, h);
    }
    return out;
}

CorrelationScores correlate(const Tensor3& xt_heads, const Tensor3& xv_heads) {
    if (xt_heads.d0 != xv_heads.d0 || xt_heads.d2 != xv_heads.d2) {
        throw ShapeError("correlate: head tensors disagree on H or D_H");
    }
    const Index heads = xt_heads.d0;
    const Scalar scale = 1.0 / std::sqrt(static_cast<Scalar>(xt_heads.d2));
    CorrelationScores out;
    out.scores = Tensor3(heads, xt_heads.d1, xv_heads.d1);
    for (Index h = 0; h < heads; ++h) {
        slice(out.scores, h) =
            softmax_rows(slice(xt_heads, h) * slice(xv_heads, h).transpose() * scale);
    }
    return out;
}

void apply_topk(CorrelationScores& scores, Index k) {
    const Index heads = scores.scores.d0;
    const Index tokens = scores.scores.d1;
    const Index grids = scores.scores.d2;
    if (k < 1 || k > grids) {
        throw ParamError("apply_topk: k=" + std::to_string(k) +
                         " out of range for G=" + std::to_string(grids));
    }
    scores.mask = Tensor3Mask(heads, tokens, grids);
    scores.renormalized = Tensor3(heads, tokens, grids);
    Vector row(grids);
    for (Index h = 0; h < heads; ++h) {
        for (Index t = 0; t < tokens; ++t) {
            row = slice(scores.scores, h).row(t);
            Scalar kept = 0;
            const auto idx = top_k_indices(row, k);
            for (Index g : idx) {
                scores.mask(h, t, g) = 1;
                kept += row[g];
            }
            for (Index g : idx) {
                scores.renormalized(h, t, g) = row[g] / kept;
            }
        }
    }
}

Matrix aggregate_context(const CorrelationScores& scores, const Matrix& xv_proj) {
    if (scores.renormalized.data.empty()) {
        throw ParamError("aggregate_context: apply_topk must run first");
    }
    if (scores.renormalized.d2 != xv_proj.rows()) {
        throw ShapeError("aggregate_context: G=" +
                         std::to_string(scores.renormalized.d2) + " vs " +
                         std::to_string(xv_proj.rows()) + " grid rows");
    }
    const Index heads = scores.renormalized.d0;
    Matrix avg = Matrix::Zero(scores.renormalized.d1, scores.renormalized.d2);
    for (Index h = 0; h < heads; ++h) {
        avg += slice(scores.renormalized, h);
    }
    avg /= static_cast<Scalar>(heads);
    return avg * xv_proj;
}

}  // namespace cmm
