#include "deqflow/equilibrium.hpp"

#include <Eigen/LU>
#include <cmath>

#include "deqflow/errors.hpp"

namespace deqflow {

Matrix column_softmax(const Matrix& A) {
    if (!A.allFinite()) throw InvalidInput("column_softmax: non-finite input");
    Matrix S(A.rows(), A.cols());
    for (Index j = 0; j < A.cols(); ++j) {
        // Max shift keeps exp() in range and leaves the ratio unchanged,
        // so the per-column shift invariance is exact.
        const double shift = A.col(j).maxCoeff();
        S.col(j) = (A.col(j).array() - shift).exp();
        S.col(j) /= S.col(j).sum();
    }
    return S;
}

Matrix softmax_column_jacobian(const Matrix& A, Index k) {
    if (k < 0 || k >= A.cols()) throw InvalidInput("softmax_column_jacobian: column index out of range");
    const Matrix S = column_softmax(A);
    const Vector s = S.col(k);
    Matrix J = -(s * s.transpose());
    J.diagonal() += s;
    return J;
}

long default_max_iter(double tol, double gamma) {
    return static_cast<long>(std::ceil(std::log(tol) / std::log(gamma))) + 16;
}

namespace {

// Sums the resolvent series term by term: with z^(0) = phi the iteration
// update obeys u_{l+1} = gamma S u_l exactly, so propagating u instead of
// re-subtracting iterates keeps the measured contraction ratio accurate
// even when ||u|| is far below ||z||.
EquilibriumSolveReport solve_neumann(const Matrix& gammaS, const Vector& phi_x, double tol,
                                     long max_iter) {
    EquilibriumSolveReport report;
    report.method = SolveMethod::neumann_iteration;
    Vector z = phi_x;
    Vector update = phi_x;
    for (long it = 1; it <= max_iter; ++it) {
        update = gammaS * update;
        z += update;
        report.iterations = it;
        report.residual = update.lpNorm<1>();
        report.residual_history.push_back(report.residual);
        if (report.residual <= tol) {
            report.fixed_point = std::move(z);
            return report;
        }
    }
    throw NonConvergence("equilibrium_solve: iteration budget exhausted", report.residual,
                         report.iterations);
}

} // namespace

EquilibriumSolveReport equilibrium_solve(const ModelParams& params, const Vector& phi_x,
                                         double tol, long max_iter, SolveMethod method) {
    params.validate();
    if (phi_x.size() != params.m()) throw InvalidInput("equilibrium_solve: feature size mismatch");
    if (!(tol > 0.0)) throw InvalidInput("equilibrium_solve: tol must be positive");

    const Matrix S = column_softmax(params.A);
    if (method == SolveMethod::neumann_iteration) {
        return solve_neumann(params.gamma * S, phi_x, tol, max_iter);
    }
    Matrix U = -params.gamma * S;
    U.diagonal().array() += 1.0;
    const Eigen::PartialPivLU<Matrix> lu(U);
    EquilibriumSolveReport report;
    report.method = SolveMethod::direct_solve;
    report.fixed_point = lu.solve(phi_x);
    report.iterations = 0;
    const auto residual_of = [&](const Vector& z) { return Vector(phi_x - U * z).lpNorm<1>(); };
    report.residual = residual_of(report.fixed_point);
    // Iterative refinement when the factored solve misses a tight tolerance.
    while (report.residual > tol && report.iterations < 3) {
        report.fixed_point += lu.solve(Vector(phi_x - U * report.fixed_point));
        report.residual = residual_of(report.fixed_point);
        ++report.iterations;
    }
    return report;
}

EquilibriumSolveReport equilibrium_solve(const ModelParams& params, const Vector& phi_x) {
    const SolveMethod method =
        params.m() <= 512 ? SolveMethod::direct_solve : SolveMethod::neumann_iteration;
    return equilibrium_solve(params, phi_x, kDefaultSolveTol,
                             default_max_iter(kDefaultSolveTol, params.gamma), method);
}

Matrix resolvent(const ModelParams& params) {
    params.validate();
    Matrix U = -params.gamma * column_softmax(params.A);
    U.diagonal().array() += 1.0;
    return Eigen::PartialPivLU<Matrix>(U).inverse();
}

Matrix forward(const ModelParams& params, const Matrix& Phi) {
    params.validate();
    if (Phi.rows() != params.m()) throw InvalidInput("forward: feature dimension mismatch");
    return params.B * (resolvent(params) * Phi);
}

} // namespace deqflow
