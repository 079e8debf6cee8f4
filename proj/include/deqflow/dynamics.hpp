#pragma once

#include <cstdint>
#include <limits>
#include <vector>

#include "deqflow/losses.hpp"
#include "deqflow/types.hpp"

namespace deqflow {

// Gradient-flow integration of (A_t, B_t), the preconditioner D_t of the
// induced dynamics d/dt vec(Z_t) = -D_t vec(dL0(Z_t)) with its spectral
// certificates, and the convergence-bound curves.

enum class Integrator { euler, rk4 };

struct FlowConfig {
    double step_size = 1e-3;
    long steps = 1000;
    long record_every = 1;
    LossSpec loss_spec;
    double radius_R = std::numeric_limits<double>::infinity();
    Integrator integrator = Integrator::euler;
    // Optional early stop: once the recorded loss gap drops to this value
    // the flow stops at that record point. 0 disables.
    double stop_gap = 0.0;
};

struct SpectralCertificate {
    double lambda_min = 0.0;
    double symmetry_defect = 0.0;  // ||D - D^T||_F / ||D||_F
    double lower_bound_slack = 0.0; // lambda_min - 1/(m (1+gamma)^2)
};

struct Trajectory {
    std::vector<long> steps;
    std::vector<double> times;
    std::vector<double> losses;
    std::vector<double> lambda_min_seq; // empty for shallow baselines
    std::vector<double> grad_norm_A;    // Frobenius
    std::vector<double> grad_norm_B;
    std::vector<double> norm_B_1;       // induced 1-norm of B_t
    // Gap bounds: (L(A_0,B_0) - L0_floor) * exp(-2 kappa lambda t), with
    // lambda = 1/(m(1+gamma)^2) for bound_indep and the running minimum of
    // the recorded lambda_min(D) for bound_dep. Compared against
    // losses[i] - loss_floor. Empty for shallow baselines.
    std::vector<double> bound_indep;
    std::vector<double> bound_dep;

    double loss_floor = 0.0; // L0 minimum (R-constrained when R is finite)
    double kappa = 0.0;      // PL parameter used by the bound curves
    double lambda_lower = 0.0;

    // Set when a finite radius R is configured and ||B_t||_1 reaches
    // (1-gamma) R; the flow keeps running but the violation is flagged.
    bool b_norm_violated = false;
    long b_norm_violation_step = -1;

    // Recorded losses non-increasing to 1e-10 absolute; false signals a
    // step size too large for the instance.
    bool loss_monotone = true;

    ModelParams final_params; // state at the last executed step
    Matrix final_W;           // shallow baselines only

    double final_loss_gap() const { return losses.empty() ? 0.0 : losses.back() - loss_floor; }
};

/// The (m*m_y) x (m*m_y) matrix
///   D = sum_k [ u_k u_k^T (x) (I_{m_y} + gamma^2 Z J_k J_k^T Z^T) ],
/// u_k = ((U^{-1})_{k*})^T, Z = B U^{-1}. Symmetric positive definite with
/// lambda_min >= 1/(m (1+gamma)^2). For m_y = 1 equals U^{-T} S U^{-1}
/// with the diagonal S of the trust-region module.
Matrix d_matrix(const ModelParams& params);

SpectralCertificate spectral_certificate(const ModelParams& params);

/// Lower bound 1/(m (1+gamma)^2) on lambda_min(D).
double d_lambda_lower_bound(Index m, double gamma);

/// Integrate d/dt (A, B) = -grad L. Records every record_every steps
/// (plus step 0 and the final step). Throws Divergence on non-finite loss
/// and PreconditionError when the PL constant for the bound curves is not
/// defined on the data (rank deficiency).
Trajectory flow_integrate(const ModelParams& init, const Dataset& data, const FlowConfig& cfg);

/// First-order consistency of the induced dynamics: one Euler step of (A, B)
/// with step alpha, then
///   || (vec(Z') - vec(Z))/alpha + D vec(dL0(Z)) || / (||D vec(dL0(Z))|| + 1e-12).
double induced_dynamics_residual(const ModelParams& params, const Dataset& data,
                                 const LossSpec& spec, double alpha);

/// T = (m (1+gamma)^2 / (2 kappa)) log(init_gap / epsilon); 0 when
/// epsilon >= init_gap.
double time_to_accuracy(double kappa, Index m, double gamma, double init_gap, double epsilon);

/// Euler/RK4 gradient flow directly on L0(W); lambda and bound sequences
/// stay empty.
Trajectory baseline_linear_flow(const Matrix& init_W, const Dataset& data, const FlowConfig& cfg);

/// Experimental qualitative baseline: gradient flow on the square loss of
/// x -> (I + W_H) ... (I + W_1) x. identity_init starts all W_l at zero;
/// otherwise entries are N(0, 1/m)-scaled draws from the given seed.
/// Requires m_y = m and the square loss.
Trajectory resnet_linear_flow(int depth, const Dataset& data, const FlowConfig& cfg,
                              bool identity_init, std::uint64_t seed);

} // namespace deqflow
