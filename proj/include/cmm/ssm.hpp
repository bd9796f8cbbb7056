#pragma once

#include "cmm/types.hpp"

namespace cmm {

enum class SsmBackendChoice { DiagonalLti, SelectiveScan };

/// Diagonal complex LTI state-space parameters. Complex quantities are kept
/// as paired real arrays; outputs use the conjugate-pair convention, so the
/// readout is 2*Re(C h).
struct DiagonalSsmParams {
    Index state_size = 16;  // N
    Vector lambda_re;       // N, all negative (stability)
    Vector lambda_im;       // N
    Vector b_re, b_im;      // N
    Matrix c_re, c_im;      // D_t x N
    Vector d_skip;          // D_t
    Vector log_dt;          // D_t, per-channel step size in log domain
};

/// ZOH-discretized system, per channel and state: D_t x N each.
struct DiscretizedSsm {
    Matrix a_re, a_im;  // Abar = exp(dt * lambda)
    Matrix b_re, b_im;  // Bbar = (Abar - 1)/lambda * B
};

/// Input-dependent (Mamba-style) scan parameters. A = -exp(A_log) < 0.
struct SelectiveScanParams {
    Index state_size = 16;  // N
    Matrix a_log;           // D_t x N
    Matrix w_delta;         // D_t x D_t
    Matrix w_b;             // D_t x N
    Matrix w_c;             // D_t x N
    Vector d_skip;          // D_t
};

/// Zero-order-hold discretization: Abar = exp(dt*lambda),
/// Bbar = (Abar - 1)/lambda * B.
DiscretizedSsm discretize_zoh(const DiagonalSsmParams& params);

/// Sequential recurrence h_t = Abar h_{t-1} + Bbar x_t, y_t = 2Re(C h_t) +
/// D_skip x_t. Linear in T.
Matrix ssm_scan_recurrent(const Matrix& x, const DiagonalSsmParams& params);

/// Convolution kernel K[t] = 2Re(C Abar^t Bbar) per channel; K[0] also
/// carries D_skip, so causal_conv(x, K) matches the recurrent scan.
Matrix ssm_kernel(const DiagonalSsmParams& params, Index t_len);

/// Evaluate the LTI backend through the convolutional path.
Matrix ssm_apply_conv(const Matrix& x, const DiagonalSsmParams& params);

/// Input-dependent recurrence: dt_t = softplus(x_t W_delta),
/// Abar_t = exp(dt_t * A), h_t = Abar_t h_{t-1} + (dt_t B_t) x_t,
/// y_t = C_t h_t + D_skip x_t with B_t = x_t W_b, C_t = x_t W_c.
Matrix selective_scan(const Matrix& x, const SelectiveScanParams& params);

}  // namespace cmm
