#pragma once

#include <vector>

#include "deqflow/types.hpp"

namespace deqflow {

// Column-stochastic softmax nonlinearity, fixed-point solvers for
// z = gamma * softmax(A) * z + phi, and the resolvent (I - gamma*softmax(A))^{-1}.

enum class SolveMethod { neumann_iteration, direct_solve };

struct EquilibriumSolveReport {
    Vector fixed_point;
    long iterations = 0;
    double residual = 0.0; // final update norm (vector 1-norm)
    SolveMethod method = SolveMethod::direct_solve;
    // Update norms per iteration; populated by the Neumann path only.
    // Consecutive entries contract by at least gamma.
    std::vector<double> residual_history;
};

/// Per-column softmax: result(i,j) = exp(A(i,j)) / sum_k exp(A(k,j)).
/// Columns sum to one; stable under large entries (per-column max shift).
Matrix column_softmax(const Matrix& A);

/// Jacobian of column k of the softmax with respect to column k of A:
/// J_k = diag(s) - s s^T with s the k-th softmax column. Symmetric, PSD,
/// and J_k * ones = 0. k is zero-based.
Matrix softmax_column_jacobian(const Matrix& A, Index k);

inline constexpr double kDefaultSolveTol = 1e-12;

/// Iteration budget that guarantees the geometric rate gamma reaches tol.
long default_max_iter(double tol, double gamma);

/// Solve z = gamma*softmax(A)*z + phi_x. The Neumann path iterates the map
/// and stops once the update 1-norm is <= tol, which places the result
/// within tol/(1-gamma) of the true fixed point in the infinity norm; the
/// direct path factorises U = I - gamma*softmax(A) and solves U z = phi_x.
EquilibriumSolveReport equilibrium_solve(const ModelParams& params, const Vector& phi_x,
                                         double tol, long max_iter, SolveMethod method);

/// Same, with tol/max_iter defaults and the method picked by problem size
/// (direct solve up to m = 512, Neumann beyond).
EquilibriumSolveReport equilibrium_solve(const ModelParams& params, const Vector& phi_x);

/// (I - gamma*softmax(A))^{-1}. Entrywise nonnegative; every column sums
/// to 1/(1-gamma), hence the induced 1-norm equals 1/(1-gamma) exactly.
Matrix resolvent(const ModelParams& params);

/// Batched model output B * U^{-1} * Phi (one sample per column of Phi).
Matrix forward(const ModelParams& params, const Matrix& Phi);

} // namespace deqflow
