#pragma once

#include "deqflow/types.hpp"

namespace deqflow {

// Gradients of the full objective L(A, B) = L0(B U^{-1}) along two
// independent routes (resolvent-series closed form and per-sample implicit
// function theorem adjoint), plus a central finite-difference validator.

struct GradientPair {
    Matrix grad_A; // m x m
    Matrix grad_B; // m_y x m
};

struct GradCheckReport {
    double max_rel_error_A = 0.0;
    double max_rel_error_B = 0.0;
    double fd_step = 0.0;
    bool passed = false;
};

/// Objective value L(A, B) = L0(B U^{-1}) on the given data.
double objective_value(const ModelParams& params, const Dataset& data, const LossSpec& spec);

/// Closed form: with Z = B U^{-1} and Q = dL0/dW at Z,
///   grad_A column k = gamma * J_k^T Z^T Q (U^{-T})_{*k},
///   grad_B          = Q U^{-T}.
GradientPair grad_closed_form(const ModelParams& params, const Dataset& data, const LossSpec& spec);

/// Implicit-function-theorem route: per sample, solve U z_i = phi_i for the
/// equilibrium and U^T w_i = B^T g_i for the adjoint, then accumulate
///   grad_B = sum_i g_i z_i^T,   grad_A column k = gamma * J_k (sum_i w_i z_i^T)_{*k}.
/// Numerically identical to grad_closed_form; no resolvent is materialised.
GradientPair grad_ift(const ModelParams& params, const Dataset& data, const LossSpec& spec);

/// Entrywise central differences of L(A, B).
GradientPair grad_finite_diff(const ModelParams& params, const Dataset& data,
                              const LossSpec& spec, double step);

/// Compares both analytic routes against central differences at step 1e-5.
/// Relative error uses denominator max(|analytic|, |fd|, 1e-8); passes iff
/// every entry error is <= 1e-5.
GradCheckReport gradcheck(const ModelParams& params, const Dataset& data, const LossSpec& spec);

inline constexpr double kGradCheckStep = 1e-5;
inline constexpr double kGradCheckTol = 1e-5;

} // namespace deqflow
