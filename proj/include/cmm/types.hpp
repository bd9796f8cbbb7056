#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace cmm {

using Scalar = double;

/// Dense row-major matrix; row-major so tensor payloads and bundle files
/// share one memory layout.
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
using Index = Eigen::Index;

struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct ParamError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct FormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct CorruptionError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Contiguous rank-3 tensor, index (i,j,k) -> ((i*d1)+j)*d2+k.
template <typename T>
struct Tensor3T {
    Index d0 = 0, d1 = 0, d2 = 0;
    std::vector<T> data;

    Tensor3T() = default;
    Tensor3T(Index n0, Index n1, Index n2)
        : d0(n0), d1(n1), d2(n2), data(static_cast<size_t>(n0 * n1 * n2), T{}) {}

    T& operator()(Index i, Index j, Index k) {
        return data[static_cast<size_t>(((i * d1) + j) * d2 + k)];
    }
    T operator()(Index i, Index j, Index k) const {
        return data[static_cast<size_t>(((i * d1) + j) * d2 + k)];
    }
};

using Tensor3 = Tensor3T<Scalar>;
using Tensor3Mask = Tensor3T<std::uint8_t>;

/// View slice i of a double tensor as a d1 x d2 matrix.
inline Eigen::Map<Matrix> slice(Tensor3& t, Index i) {
    return Eigen::Map<Matrix>(t.data.data() + i * t.d1 * t.d2, t.d1, t.d2);
}
inline Eigen::Map<const Matrix> slice(const Tensor3& t, Index i) {
    return Eigen::Map<const Matrix>(t.data.data() + i * t.d1 * t.d2, t.d1, t.d2);
}

}  // namespace cmm
