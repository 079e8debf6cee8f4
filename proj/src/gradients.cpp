#include "deqflow/gradients.hpp"

#include <Eigen/LU>
#include <cmath>

#include "deqflow/equilibrium.hpp"
#include "deqflow/errors.hpp"
#include "deqflow/losses.hpp"

namespace deqflow {

namespace {

void check_shapes(const ModelParams& params, const Dataset& data) {
    params.validate();
    data.validate();
    if (data.feature_dim() != params.m())
        throw InvalidInput("gradients: feature dimension does not match the model");
    if (data.target_dim() != params.output_dim())
        throw InvalidInput("gradients: target dimension does not match the model");
}

/// Apply J_k = diag(s) - s s^T without forming it.
Vector apply_jacobian(const Vector& s, const Vector& w) {
    return s.cwiseProduct(w) - s * s.dot(w);
}

/// Per-sample loss derivative d loss / d q at prediction q (length m_y).
Vector loss_derivative(const Vector& q, const Vector& y, const LossSpec& spec) {
    if (spec.kind == LossKind::square) return 2.0 * (q - y);
    Vector g(1);
    g(0) = 1.0 / (1.0 + std::exp(-q(0))) - y(0) + 2.0 * spec.tau * q(0);
    return g;
}

} // namespace

double objective_value(const ModelParams& params, const Dataset& data, const LossSpec& spec) {
    check_shapes(params, data);
    const Matrix Z = params.B * resolvent(params);
    return l0_value(Z, data, spec);
}

GradientPair grad_closed_form(const ModelParams& params, const Dataset& data,
                              const LossSpec& spec) {
    check_shapes(params, data);
    const Index m = params.m();
    const Matrix S = column_softmax(params.A);
    Matrix U = -params.gamma * S;
    U.diagonal().array() += 1.0;
    const Matrix Uinv = Eigen::PartialPivLU<Matrix>(U).inverse();
    const Matrix Z = params.B * Uinv;
    const Matrix Q = l0_gradient(Z, data, spec); // m_y x m

    GradientPair grads;
    grads.grad_B = Q * Uinv.transpose();

    // Column k of grad_A is gamma * J_k^T Z^T Q (U^{-T})_{*k}; the shared
    // factor P = Z^T Q is hoisted out of the k loop.
    const Matrix P = Z.transpose() * Q; // m x m
    grads.grad_A.resize(m, m);
    for (Index k = 0; k < m; ++k) {
        const Vector u_k = Uinv.row(k).transpose(); // (U^{-T})_{*k}
        grads.grad_A.col(k) = params.gamma * apply_jacobian(S.col(k), P * u_k);
    }
    return grads;
}

GradientPair grad_ift(const ModelParams& params, const Dataset& data, const LossSpec& spec) {
    check_shapes(params, data);
    const Index m = params.m();
    const Matrix S = column_softmax(params.A);
    Matrix U = -params.gamma * S;
    U.diagonal().array() += 1.0;
    const Eigen::PartialPivLU<Matrix> lu(U);
    const Eigen::PartialPivLU<Matrix> lu_t(Matrix(U.transpose()));

    Matrix grad_B = Matrix::Zero(params.output_dim(), m);
    Matrix C = Matrix::Zero(m, m); // sum_i w_i z_i^T over adjoint/equilibrium pairs
    for (Index i = 0; i < data.n(); ++i) {
        const Vector z = lu.solve(data.Phi.col(i));
        const Vector g = loss_derivative(params.B * z, data.Y.col(i), spec);
        grad_B += g * z.transpose();
        const Vector w = lu_t.solve(params.B.transpose() * g);
        C += w * z.transpose();
    }

    GradientPair grads;
    grads.grad_B = std::move(grad_B);
    grads.grad_A.resize(m, m);
    for (Index k = 0; k < m; ++k)
        grads.grad_A.col(k) = params.gamma * apply_jacobian(S.col(k), C.col(k));
    return grads;
}

GradientPair grad_finite_diff(const ModelParams& params, const Dataset& data,
                              const LossSpec& spec, double step) {
    check_shapes(params, data);
    if (!(step > 0.0)) throw InvalidInput("grad_finite_diff: step must be positive");

    GradientPair grads;
    grads.grad_A.resize(params.m(), params.m());
    grads.grad_B.resize(params.output_dim(), params.m());

    ModelParams probe = params;
    for (Index r = 0; r < params.A.rows(); ++r) {
        for (Index c = 0; c < params.A.cols(); ++c) {
            probe.A(r, c) = params.A(r, c) + step;
            const double up = objective_value(probe, data, spec);
            probe.A(r, c) = params.A(r, c) - step;
            const double down = objective_value(probe, data, spec);
            probe.A(r, c) = params.A(r, c);
            grads.grad_A(r, c) = (up - down) / (2.0 * step);
        }
    }
    for (Index r = 0; r < params.B.rows(); ++r) {
        for (Index c = 0; c < params.B.cols(); ++c) {
            probe.B(r, c) = params.B(r, c) + step;
            const double up = objective_value(probe, data, spec);
            probe.B(r, c) = params.B(r, c) - step;
            const double down = objective_value(probe, data, spec);
            probe.B(r, c) = params.B(r, c);
            grads.grad_B(r, c) = (up - down) / (2.0 * step);
        }
    }
    return grads;
}

namespace {

double max_rel_error(const Matrix& analytic, const Matrix& fd) {
    double worst = 0.0;
    for (Index r = 0; r < analytic.rows(); ++r)
        for (Index c = 0; c < analytic.cols(); ++c) {
            const double denom =
                std::max({std::abs(analytic(r, c)), std::abs(fd(r, c)), 1e-8});
            worst = std::max(worst, std::abs(analytic(r, c) - fd(r, c)) / denom);
        }
    return worst;
}

} // namespace

GradCheckReport gradcheck(const ModelParams& params, const Dataset& data, const LossSpec& spec) {
    const GradientPair fd = grad_finite_diff(params, data, spec, kGradCheckStep);
    const GradientPair closed = grad_closed_form(params, data, spec);
    const GradientPair ift = grad_ift(params, data, spec);

    GradCheckReport report;
    report.fd_step = kGradCheckStep;
    report.max_rel_error_A =
        std::max(max_rel_error(closed.grad_A, fd.grad_A), max_rel_error(ift.grad_A, fd.grad_A));
    report.max_rel_error_B =
        std::max(max_rel_error(closed.grad_B, fd.grad_B), max_rel_error(ift.grad_B, fd.grad_B));
    report.passed =
        report.max_rel_error_A <= kGradCheckTol && report.max_rel_error_B <= kGradCheckTol;
    return report;
}

} // namespace deqflow
