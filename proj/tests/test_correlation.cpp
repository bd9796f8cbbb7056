#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "cmm/correlation.hpp"
#include "cmm/fixtures.hpp"
#include "cmm/numeric.hpp"
#include "oracles.hpp"

#include <cmath>
#include <numeric>

using namespace cmm;

namespace {

Matrix seeded(Index rows, Index cols, std::uint64_t stream) {
    Matrix m(rows, cols);
    for (Index i = 0; i < rows; ++i)
        for (Index j = 0; j < cols; ++j)
            m(i, j) = rng::normal(99, stream, static_cast<std::uint64_t>(i * cols + j));
    return m;
}

CorrelationScores seeded_scores(Index heads, Index tokens, Index grids,
                                Index head_dim, std::uint64_t stream) {
    Tensor3 xt(heads, tokens, head_dim), xv(heads, grids, head_dim);
    for (Index h = 0; h < heads; ++h) {
        slice(xt, h) = seeded(tokens, head_dim, stream + 2 * static_cast<std::uint64_t>(h));
        slice(xv, h) = seeded(grids, head_dim, stream + 2 * static_cast<std::uint64_t>(h) + 1);
    }
    return correlate(xt, xv);
}

}  // namespace

TEST_CASE("project_shared identity and zero cases") {
    TokenEmbeddings xt{seeded(3, 4, 0)};
    GridEmbeddings xv{seeded(5, 4, 1)};
    CorrelationWeights w{Matrix::Identity(4, 4), Matrix::Identity(4, 4)};
    auto [tp, vp] = project_shared(xt, xv, w);
    CHECK(tp == xt.values);
    CHECK(vp == xv.values);

    TokenEmbeddings zt{Matrix::Zero(3, 4)};
    GridEmbeddings zv{Matrix::Zero(5, 4)};
    auto [ztp, zvp] = project_shared(zt, zv, w);
    CHECK(ztp.isZero(0));
    CHECK(zvp.isZero(0));
}

TEST_CASE("project_shared seeded case equals matmul oracle") {
    TokenEmbeddings xt{seeded(3, 8, 2)};
    GridEmbeddings xv{seeded(5, 8, 3)};
    CorrelationWeights w{seeded(8, 8, 4), seeded(8, 8, 5)};
    auto [tp, vp] = project_shared(xt, xv, w);
    CHECK((tp - oracle::matmul(xt.values, w.w_t)).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((vp - oracle::matmul(xv.values, w.w_v)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("project_shared rejects mismatched shapes") {
    TokenEmbeddings xt{seeded(3, 4, 6)};
    GridEmbeddings xv{seeded(5, 4, 7)};
    CorrelationWeights w{seeded(5, 8, 8), seeded(4, 8, 9)};
    CHECK_THROWS_AS(project_shared(xt, xv, w), ShapeError);
}

TEST_CASE("split_heads single head and roundtrip") {
    const Matrix x = seeded(6, 8, 10);
    const Tensor3 one = split_heads(x, 1);
    CHECK(slice(one, 0) == x);

    const Tensor3 four = split_heads(x, 4);
    CHECK(merge_heads(four) == x);  // bit-exact

    // contiguous channel slices
    for (Index h = 0; h < 4; ++h) {
        CHECK(slice(four, h) == Matrix(x.middleCols(h * 2, 2)));
    }
    CHECK_THROWS_AS(split_heads(x, 3), ParamError);
}

TEST_CASE("correlate uniform on identical grid rows") {
    const Index grids = 5;
    Tensor3 xt(1, 3, 4), xv(1, grids, 4);
    slice(xt, 0) = seeded(3, 4, 11);
    const Matrix row = seeded(1, 4, 12);
    for (Index g = 0; g < grids; ++g) slice(xv, 0).row(g) = row;
    const auto s = correlate(xt, xv);
    for (Index t = 0; t < 3; ++t)
        for (Index g = 0; g < grids; ++g)
            CHECK(s.scores(0, t, g) == doctest::Approx(1.0 / grids).epsilon(1e-12));
}

TEST_CASE("correlate dominance when one grid matches the token") {
    Tensor3 xt(1, 1, 4), xv(1, 3, 4);
    Matrix token(1, 4);
    token << 50, 0, 0, 0;
    slice(xt, 0) = token;
    Matrix grids(3, 4);
    grids << 50, 0, 0, 0, 0, 50, 0, 0, 0, 0, 50, 0;
    slice(xv, 0) = grids;
    const auto s = correlate(xt, xv);
    CHECK(s.scores(0, 0, 0) > 0.999);
}

TEST_CASE("correlate matches per-element loop oracle") {
    const Index heads = 2, tokens = 3, grids = 5, head_dim = 4;
    Tensor3 xt(heads, tokens, head_dim), xv(heads, grids, head_dim);
    for (Index h = 0; h < heads; ++h) {
        slice(xt, h) = seeded(tokens, head_dim, 20 + static_cast<std::uint64_t>(h));
        slice(xv, h) = seeded(grids, head_dim, 30 + static_cast<std::uint64_t>(h));
    }
    const auto s = correlate(xt, xv);
    for (Index h = 0; h < heads; ++h) {
        Matrix logits(tokens, grids);
        for (Index t = 0; t < tokens; ++t)
            for (Index g = 0; g < grids; ++g) {
                Scalar dot = 0;
                for (Index d = 0; d < head_dim; ++d) dot += xt(h, t, d) * xv(h, g, d);
                logits(t, g) = dot / std::sqrt(static_cast<Scalar>(head_dim));
            }
        const Matrix expected = oracle::softmax_rows(logits);
        CHECK((slice(s.scores, h) - expected).cwiseAbs().maxCoeff() < 1e-10);
    }
}

TEST_CASE("apply_topk no-op at k=G, one-hot at k=1, oracle at k=3") {
    auto s = seeded_scores(2, 4, 5, 4, 40);
    auto full = s;
    apply_topk(full, 5);
    for (Index h = 0; h < 2; ++h) {
        CHECK((slice(full.renormalized, h) - slice(full.scores, h))
                  .cwiseAbs()
                  .maxCoeff() <= 1e-12);
    }

    auto one = s;
    apply_topk(one, 1);
    for (Index h = 0; h < 2; ++h) {
        for (Index t = 0; t < 4; ++t) {
            Index nonzero = 0;
            for (Index g = 0; g < 5; ++g) {
                if (one.renormalized(h, t, g) != 0) {
                    ++nonzero;
                    CHECK(one.renormalized(h, t, g) == 1.0);
                }
            }
            CHECK(nonzero == 1);
        }
    }

    auto three = s;
    apply_topk(three, 3);
    for (Index h = 0; h < 2; ++h) {
        for (Index t = 0; t < 4; ++t) {
            const Vector row = slice(three.scores, h).row(t);
            const auto idx = oracle::top_k(row, 3);
            Scalar kept = 0;
            for (Index g : idx) kept += row[g];
            for (Index g : idx) {
                CHECK(three.renormalized(h, t, g) ==
                      doctest::Approx(row[g] / kept).epsilon(1e-12));
            }
        }
    }
    CHECK_THROWS_AS(apply_topk(s, 6), ParamError);
}

TEST_CASE("apply_topk row invariants") {
    auto s = seeded_scores(3, 6, 5, 4, 50);
    apply_topk(s, 2);
    for (Index h = 0; h < 3; ++h) {
        for (Index t = 0; t < 6; ++t) {
            Index marked = 0;
            Scalar rsum = 0;
            for (Index g = 0; g < 5; ++g) {
                if (s.mask(h, t, g)) ++marked;
                else CHECK(s.renormalized(h, t, g) == 0.0);
                rsum += s.renormalized(h, t, g);
            }
            CHECK(marked == 2);
            CHECK(std::abs(rsum - 1.0) < 1e-9);
        }
    }
}

TEST_CASE("aggregate_context one-hot and convexity trivial cases") {
    // k=1, H=1: each context row is exactly the selected grid row
    auto s = seeded_scores(1, 4, 5, 4, 60);
    apply_topk(s, 1);
    const Matrix xv_proj = seeded(5, 8, 61);
    const Matrix c = aggregate_context(s, xv_proj);
    for (Index t = 0; t < 4; ++t) {
        Index sel = -1;
        for (Index g = 0; g < 5; ++g) {
            if (s.mask(0, t, g)) sel = g;
        }
        CHECK(c.row(t) == xv_proj.row(sel));
    }

    // identical grid rows: every context row equals that row
    auto s2 = seeded_scores(2, 3, 5, 4, 62);
    apply_topk(s2, 3);
    Matrix same(5, 8);
    const Matrix row = seeded(1, 8, 63);
    for (Index g = 0; g < 5; ++g) same.row(g) = row;
    const Matrix c2 = aggregate_context(s2, same);
    for (Index t = 0; t < 3; ++t) {
        CHECK((c2.row(t) - row).cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("aggregate_context seeded case equals weighted-sum oracle") {
    auto s = seeded_scores(2, 4, 5, 4, 70);
    apply_topk(s, 3);
    const Matrix xv_proj = seeded(5, 8, 71);
    const Matrix c = aggregate_context(s, xv_proj);
    Matrix expected = Matrix::Zero(4, 8);
    for (Index t = 0; t < 4; ++t)
        for (Index d = 0; d < 8; ++d)
            for (Index g = 0; g < 5; ++g)
                for (Index h = 0; h < 2; ++h)
                    expected(t, d) += s.renormalized(h, t, g) * xv_proj(g, d) / 2;
    CHECK((c - expected).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("context rows stay in the per-channel grid envelope") {
    auto s = seeded_scores(4, 8, 5, 4, 80);
    apply_topk(s, 4);
    const Matrix xv_proj = seeded(5, 16, 81);
    const Matrix c = aggregate_context(s, xv_proj);
    for (Index d = 0; d < 16; ++d) {
        const Scalar lo = xv_proj.col(d).minCoeff(), hi = xv_proj.col(d).maxCoeff();
        for (Index t = 0; t < 8; ++t) {
            CHECK(c(t, d) >= lo - 1e-9);
            CHECK(c(t, d) <= hi + 1e-9);
        }
    }
}

TEST_CASE("token permutation equivariance and grid permutation invariance") {
    const Index tokens = 5, grids = 5, d = 8;
    TokenEmbeddings xt{seeded(tokens, d, 90)};
    GridEmbeddings xv{seeded(grids, d, 91)};
    CorrelationWeights w{seeded(d, d, 92), seeded(d, d, 93)};

    auto run = [&](const TokenEmbeddings& a, const GridEmbeddings& b) {
        auto [tp, vp] = project_shared(a, b, w);
        auto s = correlate(split_heads(tp, 2), split_heads(vp, 2));
        apply_topk(s, 3);
        return aggregate_context(s, vp);
    };
    const Matrix base = run(xt, xv);

    // reverse token order
    TokenEmbeddings rev{xt.values.colwise().reverse()};
    const Matrix permuted = run(rev, xv);
    CHECK(permuted == Matrix(base.colwise().reverse()));

    // permute grids (reverse); context unchanged
    GridEmbeddings grev{xv.values.colwise().reverse()};
    const Matrix after = run(xt, grev);
    CHECK((after - base).cwiseAbs().maxCoeff() < 1e-12);
}
