#include "cmm/numeric.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <sstream>

namespace cmm {

namespace {

std::string shape_str(const Matrix& m) {
    std::ostringstream os;
    os << m.rows() << "x" << m.cols();
    return os.str();
}

}  // namespace

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) {
        throw ShapeError("matmul: incompatible shapes " + shape_str(a) + " * " +
                         shape_str(b));
    }
    return a * b;
}

Matrix softmax_rows(const Matrix& m) {
    if (m.rows() == 0 || m.cols() == 0) {
        throw ShapeError("softmax_rows: empty matrix");
    }
    Matrix out(m.rows(), m.cols());
    for (Index i = 0; i < m.rows(); ++i) {
        const Scalar mx = m.row(i).maxCoeff();
        if (!std::isfinite(mx)) {
            throw ParamError("softmax_rows: empty support row");
        }
        out.row(i) = (m.row(i).array() - mx).exp();
        out.row(i) /= out.row(i).sum();
    }
    return out;
}

Matrix layer_norm(const Matrix& x, const Vector& gamma, const Vector& beta,
                  Scalar eps) {
    if (gamma.size() != x.cols() || beta.size() != x.cols()) {
        throw ShapeError("layer_norm: affine size " + std::to_string(gamma.size()) +
                         " vs cols " + std::to_string(x.cols()));
    }
    if (!(eps > 0)) {
        throw ParamError("layer_norm: eps must be positive");
    }
    Matrix out(x.rows(), x.cols());
    const Scalar n = static_cast<Scalar>(x.cols());
    for (Index i = 0; i < x.rows(); ++i) {
        const Scalar mean = x.row(i).mean();
        const Scalar var = (x.row(i).array() - mean).square().sum() / n;
        out.row(i) = ((x.row(i).array() - mean) / std::sqrt(var + eps)) *
                         gamma.transpose().array() +
                     beta.transpose().array();
    }
    return out;
}

Matrix gelu(const Matrix& x) {
    return x.unaryExpr([](Scalar v) {
        return Scalar(0.5) * v * (Scalar(1) + std::erf(v / std::numbers::sqrt2));
    });
}

std::vector<Index> top_k_indices(const Vector& row, Index k) {
    if (k < 1 || k > row.size()) {
        throw ParamError("top_k_indices: k=" + std::to_string(k) +
                         " out of range for length " + std::to_string(row.size()));
    }
    std::vector<Index> idx(static_cast<size_t>(row.size()));
    std::iota(idx.begin(), idx.end(), Index{0});
    std::partial_sort(idx.begin(), idx.begin() + k, idx.end(),
                      [&row](Index a, Index b) {
                          if (row[a] != row[b]) return row[a] > row[b];
                          return a < b;
                      });
    idx.resize(static_cast<size_t>(k));
    std::sort(idx.begin(), idx.end());
    return idx;
}

namespace detail {

void fft_inplace(std::vector<std::complex<Scalar>>& a, bool inverse) {
    const size_t n = a.size();
    if (n == 0 || (n & (n - 1)) != 0) {
        throw ParamError("fft_inplace: size must be a power of two");
    }
    for (size_t i = 1, j = 0; i < n; ++i) {
        size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (size_t len = 2; len <= n; len <<= 1) {
        const Scalar ang = (inverse ? 2 : -2) * std::numbers::pi / static_cast<Scalar>(len);
        const std::complex<Scalar> wl(std::cos(ang), std::sin(ang));
        for (size_t i = 0; i < n; i += len) {
            std::complex<Scalar> w(1);
            for (size_t j = 0; j < len / 2; ++j) {
                const auto u = a[i + j];
                const auto v = a[i + j + len / 2] * w;
                a[i + j] = u + v;
                a[i + j + len / 2] = u - v;
                w *= wl;
            }
        }
    }
    if (inverse) {
        for (auto& x : a) x /= static_cast<Scalar>(n);
    }
}

Matrix causal_conv_direct(const Matrix& signal, const Matrix& kernel) {
    const Index t_len = signal.rows(), ch = signal.cols();
    Matrix out = Matrix::Zero(t_len, ch);
    for (Index c = 0; c < ch; ++c) {
        for (Index t = 0; t < t_len; ++t) {
            Scalar acc = 0;
            for (Index s = 0; s <= t; ++s) {
                acc += kernel(s, c) * signal(t - s, c);
            }
            out(t, c) = acc;
        }
    }
    return out;
}

Matrix causal_conv_fft(const Matrix& signal, const Matrix& kernel) {
    const Index t_len = signal.rows(), ch = signal.cols();
    size_t n = 1;
    while (n < static_cast<size_t>(2 * t_len)) n <<= 1;
    Matrix out(t_len, ch);
    std::vector<std::complex<Scalar>> fs(n), fk(n);
    for (Index c = 0; c < ch; ++c) {
        std::fill(fs.begin(), fs.end(), std::complex<Scalar>{});
        std::fill(fk.begin(), fk.end(), std::complex<Scalar>{});
        for (Index t = 0; t < t_len; ++t) {
            fs[static_cast<size_t>(t)] = signal(t, c);
            fk[static_cast<size_t>(t)] = kernel(t, c);
        }
        fft_inplace(fs, false);
        fft_inplace(fk, false);
        for (size_t i = 0; i < n; ++i) fs[i] *= fk[i];
        fft_inplace(fs, true);
        for (Index t = 0; t < t_len; ++t) {
            out(t, c) = fs[static_cast<size_t>(t)].real();
        }
    }
    return out;
}

}  // namespace detail

Matrix causal_conv(const Matrix& signal, const Matrix& kernel) {
    if (signal.rows() != kernel.rows() || signal.cols() != kernel.cols()) {
        throw ShapeError("causal_conv: signal " + shape_str(signal) +
                         " vs kernel " + shape_str(kernel));
    }
    if (signal.rows() >= 512) {
        return detail::causal_conv_fft(signal, kernel);
    }
    return detail::causal_conv_direct(signal, kernel);
}

}  // namespace cmm
