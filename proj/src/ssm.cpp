#include "cmm/ssm.hpp"

#include "cmm/numeric.hpp"

#include <cmath>

namespace cmm {

namespace {

void check_diag_shapes(const DiagonalSsmParams& p, Index channels) {
    const Index n = p.state_size;
    if (p.lambda_re.size() != n || p.lambda_im.size() != n ||
        p.b_re.size() != n || p.b_im.size() != n || p.c_re.cols() != n ||
        p.c_im.cols() != n) {
        throw ShapeError("diagonal ssm: state vectors disagree with N=" +
                         std::to_string(n));
    }
    if (channels >= 0 &&
        (p.c_re.rows() != channels || p.d_skip.size() != channels ||
         p.log_dt.size() != channels)) {
        throw ShapeError("diagonal ssm: channel count mismatch, expected " +
                         std::to_string(channels));
    }
}

Scalar softplus(Scalar v) {
    // log1p(exp(v)) without overflow for large v
    if (v > 30) return v;
    return std::log1p(std::exp(v));
}

}  // namespace

DiscretizedSsm discretize_zoh(const DiagonalSsmParams& p) {
    check_diag_shapes(p, p.c_re.rows());
    const Index channels = p.log_dt.size();
    const Index n = p.state_size;
    DiscretizedSsm d;
    d.a_re.resize(channels, n);
    d.a_im.resize(channels, n);
    d.b_re.resize(channels, n);
    d.b_im.resize(channels, n);
    for (Index c = 0; c < channels; ++c) {
        const Scalar dt = std::exp(p.log_dt[c]);
        for (Index j = 0; j < n; ++j) {
            const Scalar lr = p.lambda_re[j], li = p.lambda_im[j];
            if (lr == 0 && li == 0) {
                throw ParamError("discretize_zoh: zero pole at state " +
                                 std::to_string(j));
            }
            const Scalar mag = std::exp(dt * lr);
            const Scalar ar = mag * std::cos(dt * li);
            const Scalar ai = mag * std::sin(dt * li);
            // (Abar - 1) / lambda
            const Scalar lam2 = lr * lr + li * li;
            const Scalar fr = ((ar - 1) * lr + ai * li) / lam2;
            const Scalar fi = (ai * lr - (ar - 1) * li) / lam2;
            d.a_re(c, j) = ar;
            d.a_im(c, j) = ai;
            d.b_re(c, j) = fr * p.b_re[j] - fi * p.b_im[j];
            d.b_im(c, j) = fr * p.b_im[j] + fi * p.b_re[j];
        }
    }
    return d;
}

Matrix ssm_scan_recurrent(const Matrix& x, const DiagonalSsmParams& p) {
    check_diag_shapes(p, x.cols());
    const DiscretizedSsm d = discretize_zoh(p);
    const Index t_len = x.rows(), channels = x.cols(), n = p.state_size;
    Matrix out(t_len, channels);
    Vector hr(n), hi(n), tr(n);
    for (Index c = 0; c < channels; ++c) {
        const auto ar = d.a_re.row(c).transpose().array();
        const auto ai = d.a_im.row(c).transpose().array();
        const auto br = d.b_re.row(c).transpose().array();
        const auto bi = d.b_im.row(c).transpose().array();
        const auto cr = p.c_re.row(c).transpose().array();
        const auto ci = p.c_im.row(c).transpose().array();
        hr.setZero();
        hi.setZero();
        for (Index t = 0; t < t_len; ++t) {
            const Scalar u = x(t, c);
            tr = (ar * hr.array() - ai * hi.array() + br * u).matrix();
            hi = (ar * hi.array() + ai * hr.array() + bi * u).matrix();
            hr = tr;
            out(t, c) = 2 * (cr * hr.array() - ci * hi.array()).sum() +
                        p.d_skip[c] * u;
        }
    }
    return out;
}

Matrix ssm_kernel(const DiagonalSsmParams& p, Index t_len) {
    if (t_len < 1) {
        throw ParamError("ssm_kernel: T must be >= 1");
    }
    check_diag_shapes(p, p.c_re.rows());
    const DiscretizedSsm d = discretize_zoh(p);
    const Index channels = p.c_re.rows(), n = p.state_size;
    Matrix kernel(t_len, channels);
    Vector pr(n), pi(n), tr(n);
    for (Index c = 0; c < channels; ++c) {
        const auto ar = d.a_re.row(c).transpose().array();
        const auto ai = d.a_im.row(c).transpose().array();
        const auto cr = p.c_re.row(c).transpose().array();
        const auto ci = p.c_im.row(c).transpose().array();
        pr = d.b_re.row(c).transpose();
        pi = d.b_im.row(c).transpose();
        for (Index t = 0; t < t_len; ++t) {
            kernel(t, c) = 2 * (cr * pr.array() - ci * pi.array()).sum();
            tr = (ar * pr.array() - ai * pi.array()).matrix();
            pi = (ar * pi.array() + ai * pr.array()).matrix();
            pr = tr;
        }
        kernel(0, c) += p.d_skip[c];
    }
    return kernel;
}

Matrix ssm_apply_conv(const Matrix& x, const DiagonalSsmParams& p) {
    return causal_conv(x, ssm_kernel(p, x.rows()));
}

Matrix selective_scan(const Matrix& x, const SelectiveScanParams& p) {
    const Index channels = x.cols(), n = p.state_size;
    if (p.a_log.rows() != channels || p.a_log.cols() != n ||
        p.w_delta.rows() != channels || p.w_delta.cols() != channels ||
        p.w_b.rows() != channels || p.w_b.cols() != n ||
        p.w_c.rows() != channels || p.w_c.cols() != n ||
        p.d_skip.size() != channels) {
        throw ShapeError("selective_scan: parameter shapes disagree with D_t=" +
                         std::to_string(channels) + " N=" + std::to_string(n));
    }
    const Index t_len = x.rows();
    Matrix a = -p.a_log.array().exp();  // D_t x N, all negative
    Matrix h = Matrix::Zero(channels, n);
    Matrix out(t_len, channels);
    Vector dt(channels), bt(n), ct(n);
    for (Index t = 0; t < t_len; ++t) {
        const auto xt = x.row(t);
        dt = (xt * p.w_delta).transpose().unaryExpr([](Scalar v) { return softplus(v); });
        bt = (xt * p.w_b).transpose();
        ct = (xt * p.w_c).transpose();
        for (Index c = 0; c < channels; ++c) {
            const Scalar drive = dt[c] * x(t, c);
            h.row(c) = (dt[c] * a.row(c).array()).exp() * h.row(c).array() +
                       drive * bt.transpose().array();
            out(t, c) = h.row(c) * ct + p.d_skip[c] * x(t, c);
        }
    }
    return out;
}

}  // namespace cmm
