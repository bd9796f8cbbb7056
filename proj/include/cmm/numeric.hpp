#pragma once

#include "cmm/types.hpp"

#include <complex>
#include <vector>

namespace cmm {

/// Matrix product with an explicit shape check. Deterministic for a fixed
/// build: the accumulation order never depends on runtime state.
Matrix matmul(const Matrix& a, const Matrix& b);

/// Row-wise softmax, stabilized by subtracting the row maximum.
Matrix softmax_rows(const Matrix& m);

/// Per-row layer normalization followed by the affine (gamma, beta).
Matrix layer_norm(const Matrix& x, const Vector& gamma, const Vector& beta,
                  Scalar eps);

constexpr Scalar kLayerNormEps = 1e-5;

/// Exact-erf GELU, elementwise.
Matrix gelu(const Matrix& x);

/// Indices of the k largest entries, ties broken toward the lowest index.
/// Returned sorted ascending.
std::vector<Index> top_k_indices(const Vector& row, Index k);

/// Per-channel causal convolution y[t] = sum_{s<=t} kernel[s] * signal[t-s].
/// Uses an FFT fast path for T >= 512; both paths agree to ~1e-10.
Matrix causal_conv(const Matrix& signal, const Matrix& kernel);

namespace detail {

/// In-place iterative radix-2 FFT; size must be a power of two.
void fft_inplace(std::vector<std::complex<Scalar>>& a, bool inverse);

Matrix causal_conv_direct(const Matrix& signal, const Matrix& kernel);
Matrix causal_conv_fft(const Matrix& signal, const Matrix& kernel);

}  // namespace detail

}  // namespace cmm
