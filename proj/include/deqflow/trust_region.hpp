#pragma once

#include <cstdint>

#include "deqflow/types.hpp"

namespace deqflow {

// Certification that the flow direction of the equilibrium model is the
// exact minimiser of the local quadratic model of L0 on a G-norm ball
// (single-output case), plus the Perron-direction decomposition of the
// update.

struct TrustRegionCertificate {
    double delta_bar = 0.0;      // largest admissible step scale found
    double delta_used = 0.0;
    double kkt_residual = 0.0;   // || g0 + H v + (1/delta) G v ||_2
    double kkt_scale = 0.0;      // ||g0|| + ||H v|| + ||G v||/delta
    double constraint_gap = 0.0; // | ||v||_G - delta ||dz/dt||_G |
    double constraint_scale = 0.0;
    double g_lambda_min = 0.0;
    double quad_model_gap = 0.0; // min over probes of quad(probe) - quad(v)
    long n_probes = 0;
};

struct BiasDecomposition {
    Vector aligned_component;  // ones-direction part of V^T, scaled 1/(1-gamma)
    Vector residual_component; // V^T minus the aligned part
    double aligned_norm = 0.0;
    double residual_norm = 0.0;
};

/// S = I + gamma^2 diag(v) with v_k = ||J_k^T Z^T||_2^2, Z = B U^{-1}.
/// Diagonal, positive definite. Requires m_y = 1.
Matrix s_matrix(const ModelParams& params);

/// F = sum_i c_i z_i z_i^T over equilibria z_i, with curvature c_i = 2 for
/// the square loss and p_i (1 - p_i) + 2 tau for the logistic loss.
Matrix f_matrix(const ModelParams& params, const Dataset& data, const LossSpec& spec);

/// G(delta) = U (S^{-1} - delta F) U^T. Symmetric; positive definite iff
/// delta is at most the admissible bound (reported, not enforced).
Matrix g_matrix(const ModelParams& params, const Dataset& data, const LossSpec& spec, double delta);

inline constexpr double kDeltaBarCap = 1e6;
inline constexpr double kDeltaBarFloor = 1e-10;

/// Largest delta with lambda_min(G(delta)) >= floor, by bisection to 1e-12
/// relative. lambda_min(G) is non-increasing in delta since F is PSD.
/// Returns kDeltaBarCap when F = 0 (or the floor is never reached there).
double delta_bar_search(const ModelParams& params, const Dataset& data, const LossSpec& spec,
                        double floor = kDeltaBarFloor);

/// Check the KKT conditions of the constrained quadratic problem at
/// v = -delta D vec(dL0(Z)) with multiplier 1/(2 delta): stationarity,
/// activity of the G-ball constraint, and optimality against n_probes
/// boundary probes plus n_probes uniform-in-radius interior probes.
/// Throws PreconditionError when delta exceeds the admissible bound.
TrustRegionCertificate certify_theorem2(const ModelParams& params, const Dataset& data,
                                        const LossSpec& spec, double delta, long n_probes,
                                        std::uint64_t probe_seed = 0);

/// Split V^T = -U^{-T} r into the span(ones) part -(1/(1-gamma)) P1 r
/// (ones is the left Perron eigenvector of the column-stochastic softmax,
/// P1 = ones ones^T / m) and the complement.
BiasDecomposition decompose_error_vector(const ModelParams& params, const Vector& r);

/// Error vector of the certified update: r = delta * S U^{-1} dL0(Z)^T,
/// which makes V^T = -U^{-T} r coincide with -delta D vec(dL0(Z)).
Vector implicit_bias_error_vector(const ModelParams& params, const Dataset& data,
                                  const LossSpec& spec, double delta);

/// decompose_error_vector applied to implicit_bias_error_vector.
BiasDecomposition implicit_bias_decompose(const ModelParams& params, const Dataset& data,
                                          const LossSpec& spec, double delta);

} // namespace deqflow
