#pragma once

#include "deqflow/types.hpp"

namespace deqflow {

// Shallow objective L0(W) = sum_i loss(W phi_i, y_i) for square and logistic
// losses, with gradient, Hessian, PL constants and global-minimum oracles.

struct PLCertificate {
    double kappa = 0.0;  // PL parameter for the given loss on the given data
    double radius = 0.0; // R (may be +inf)
    double rho_R = 0.0;  // logistic curvature floor on the radius-R ball; 0 otherwise
};

double l0_value(const Matrix& W, const Dataset& data, const LossSpec& spec);

/// dL0/dW, same shape as W.
Matrix l0_gradient(const Matrix& W, const Dataset& data, const LossSpec& spec);

/// Hessian with respect to vec(W) (column-major), (m_y*m) x (m_y*m).
/// Square loss: 2 [Phi Phi^T (x) I_{m_y}], independent of W.
Matrix l0_hessian(const Matrix& W, const Dataset& data, const LossSpec& spec);

/// PL parameter for the loss on the given data. Square: kappa = 2 sigma_min(Phi)^2,
/// requires rank(Phi) = min(n, m). Logistic: kappa = (2 tau + rho(R)) sigma_min(Phi)^2,
/// requires rank(Phi) = m; rho(R) = min_i s(R ||phi_i||_1)(1 - s(R ||phi_i||_1))
/// with s the sigmoid (the 1x1 induced 1-norm of W is max_j |W_j|, so
/// R ||phi_i||_1 is the largest attainable |W phi_i| on the ball).
PLCertificate pl_constant(const Dataset& data, const LossSpec& spec, double radius);

struct GlobalMin {
    double value = 0.0;
    Matrix minimizer;
};

/// Unconstrained minimum of the square-loss L0: W* = Y pinv(Phi) via SVD.
/// Throws UnsupportedConfig for the logistic loss (use l0_min_in_radius).
GlobalMin global_min_l0(const Dataset& data, const LossSpec& spec);

/// inf of L0 over the open induced-1-norm ball of the given radius, estimated
/// by damped Newton steps projected onto ||W||_1 <= radius * (1 - 1e-6).
/// radius may be +inf (plain damped Newton). For logistic with tau = 0 and
/// radius = +inf the infimum may not be attained; the estimate after the
/// iteration budget is returned as-is.
GlobalMin l0_min_in_radius(const Dataset& data, const LossSpec& spec, double radius);

} // namespace deqflow
