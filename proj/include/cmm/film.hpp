#pragma once

#include "cmm/types.hpp"

namespace cmm {

struct FilmWeights {
    Matrix w_in;   // D_shared x 2*D_t, FiLM-in map
    Matrix w_out;  // D_shared x 2*D_t, FiLM-out map
    Scalar alpha = 0.1;
    Vector ln_gamma;  // D_t, layer norm inside the FiLM-in formula
    Vector ln_beta;   // D_t
};

struct FilmParams {
    Matrix gamma;  // T x D_t
    Matrix beta;   // T x D_t
};

/// [gamma, beta] = c W; first D_t output channels are gamma, last D_t beta.
FilmParams film_generate(const Matrix& context, const Matrix& w);

/// X_f = LN(X_t) * (1 + alpha*gamma) + alpha*beta, elementwise.
Matrix film_in(const Matrix& xt, const FilmParams& p, Scalar alpha,
               const Vector& ln_gamma, const Vector& ln_beta);

/// Y * (1 + alpha*gamma) + alpha*beta; no layer norm on the input.
Matrix film_out(const Matrix& y, const FilmParams& p, Scalar alpha);

}  // namespace cmm
