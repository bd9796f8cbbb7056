#include "cmm/film.hpp"

#include "cmm/numeric.hpp"

namespace cmm {

FilmParams film_generate(const Matrix& context, const Matrix& w) {
    if (w.cols() % 2 != 0) {
        throw ShapeError("film_generate: map must have an even column count");
    }
    const Matrix both = matmul(context, w);
    const Index d = both.cols() / 2;
    return {both.leftCols(d), both.rightCols(d)};
}

Matrix film_in(const Matrix& xt, const FilmParams& p, Scalar alpha,
               const Vector& ln_gamma, const Vector& ln_beta) {
    if (p.gamma.rows() != xt.rows() || p.gamma.cols() != xt.cols()) {
        throw ShapeError("film_in: modulation shape mismatch");
    }
    const Matrix normed = layer_norm(xt, ln_gamma, ln_beta, kLayerNormEps);
    return (normed.array() * (1.0 + alpha * p.gamma.array()) +
            alpha * p.beta.array())
        .matrix();
}

Matrix film_out(const Matrix& y, const FilmParams& p, Scalar alpha) {
    if (p.gamma.rows() != y.rows() || p.gamma.cols() != y.cols()) {
        throw ShapeError("film_out: modulation shape mismatch");
    }
    return (y.array() * (1.0 + alpha * p.gamma.array()) + alpha * p.beta.array())
        .matrix();
}

}  // namespace cmm
