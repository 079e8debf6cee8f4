#include "deqflow/losses.hpp"

#include <Eigen/Cholesky>
#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "deqflow/errors.hpp"
#include "deqflow/linalg.hpp"

namespace deqflow {

namespace {

void check_inputs(const Matrix& W, const Dataset& data, const LossSpec& spec) {
    spec.validate();
    data.validate();
    if (W.cols() != data.feature_dim() || W.rows() != data.target_dim())
        throw InvalidInput("losses: W shape does not match the dataset");
    if (spec.kind == LossKind::logistic) {
        if (data.target_dim() != 1 || data.kind != DataKind::binary_labels)
            throw UnsupportedConfig("losses: logistic loss requires one binary target row");
    }
}

double sigmoid(double q) { return 1.0 / (1.0 + std::exp(-q)); }

/// -y q + log(1 + exp(q)), evaluated without overflow.
double binary_cross_entropy(double q, double y) {
    return std::max(q, 0.0) - y * q + std::log1p(std::exp(-std::abs(q)));
}

} // namespace

double l0_value(const Matrix& W, const Dataset& data, const LossSpec& spec) {
    check_inputs(W, data, spec);
    if (spec.kind == LossKind::square) {
        return (W * data.Phi - data.Y).squaredNorm();
    }
    const Eigen::RowVectorXd q = W * data.Phi;
    double total = 0.0;
    for (Index i = 0; i < q.size(); ++i)
        total += binary_cross_entropy(q(i), data.Y(0, i)) + spec.tau * q(i) * q(i);
    return total;
}

Matrix l0_gradient(const Matrix& W, const Dataset& data, const LossSpec& spec) {
    check_inputs(W, data, spec);
    if (spec.kind == LossKind::square) {
        return 2.0 * (W * data.Phi - data.Y) * data.Phi.transpose();
    }
    const Eigen::RowVectorXd q = W * data.Phi;
    Eigen::RowVectorXd coeff(q.size());
    for (Index i = 0; i < q.size(); ++i)
        coeff(i) = sigmoid(q(i)) - data.Y(0, i) + 2.0 * spec.tau * q(i);
    return coeff * data.Phi.transpose();
}

Matrix l0_hessian(const Matrix& W, const Dataset& data, const LossSpec& spec) {
    check_inputs(W, data, spec);
    const Index m = data.feature_dim();
    const Index my = data.target_dim();
    if (spec.kind == LossKind::square) {
        const Matrix gram = data.Phi * data.Phi.transpose();
        Matrix H = Matrix::Zero(my * m, my * m);
        for (Index j = 0; j < m; ++j)
            for (Index jp = 0; jp < m; ++jp)
                H.block(j * my, jp * my, my, my) = 2.0 * gram(j, jp) * Matrix::Identity(my, my);
        return H;
    }
    const Eigen::RowVectorXd q = W * data.Phi;
    Vector weights(q.size());
    for (Index i = 0; i < q.size(); ++i) {
        const double p = sigmoid(q(i));
        weights(i) = p * (1.0 - p) + 2.0 * spec.tau;
    }
    return data.Phi * weights.asDiagonal() * data.Phi.transpose();
}

PLCertificate pl_constant(const Dataset& data, const LossSpec& spec, double radius) {
    spec.validate();
    data.validate();
    if (!(radius > 0.0)) throw InvalidInput("pl_constant: radius must be positive");
    const Index m = data.feature_dim();
    const Index n = data.n();
    const Index rank = numerical_rank(data.Phi);
    const double smin = smallest_singular_value(data.Phi);

    PLCertificate cert;
    cert.radius = radius;
    if (spec.kind == LossKind::square) {
        if (rank != std::min(m, n))
            throw PreconditionError("pl_constant: square loss requires rank(Phi) = min(n, m)");
        cert.kappa = 2.0 * smin * smin;
        cert.rho_R = 0.0;
        return cert;
    }
    if (rank != m) throw PreconditionError("pl_constant: logistic loss requires rank(Phi) = m");
    if (data.target_dim() != 1)
        throw UnsupportedConfig("pl_constant: logistic loss requires m_y = 1");
    double rho = 0.0;
    if (std::isfinite(radius)) {
        rho = 0.25; // sigmoid curvature at the origin caps the infimum
        for (Index i = 0; i < n; ++i) {
            const double reach = radius * data.Phi.col(i).lpNorm<1>();
            const double p = sigmoid(reach);
            rho = std::min(rho, p * (1.0 - p));
        }
    }
    cert.rho_R = rho;
    cert.kappa = (2.0 * spec.tau + rho) * smin * smin;
    return cert;
}

GlobalMin global_min_l0(const Dataset& data, const LossSpec& spec) {
    spec.validate();
    data.validate();
    if (spec.kind != LossKind::square)
        throw UnsupportedConfig("global_min_l0: closed form exists for the square loss only");
    GlobalMin result;
    result.minimizer = data.Y * pseudo_inverse(data.Phi);
    result.value = l0_value(result.minimizer, data, spec);
    return result;
}

namespace {

/// Euclidean projection of v onto the l1 ball of the given radius.
Vector project_l1_ball(const Vector& v, double radius) {
    if (v.lpNorm<1>() <= radius) return v;
    std::vector<double> mags(static_cast<size_t>(v.size()));
    for (Index i = 0; i < v.size(); ++i) mags[static_cast<size_t>(i)] = std::abs(v(i));
    std::sort(mags.begin(), mags.end(), std::greater<double>());
    double cumulative = 0.0;
    double theta = 0.0;
    for (size_t k = 0; k < mags.size(); ++k) {
        cumulative += mags[k];
        const double candidate = (cumulative - radius) / static_cast<double>(k + 1);
        if (candidate >= (k + 1 < mags.size() ? mags[k + 1] : 0.0)) {
            theta = candidate;
            break;
        }
    }
    Vector out(v.size());
    for (Index i = 0; i < v.size(); ++i) {
        const double mag = std::max(std::abs(v(i)) - theta, 0.0);
        out(i) = v(i) < 0.0 ? -mag : mag;
    }
    return out;
}

/// Projection onto { ||W||_1 <= radius } (induced norm: max column abs sum),
/// applied column by column.
Matrix project_induced_one_norm(const Matrix& W, double radius) {
    if (!std::isfinite(radius)) return W;
    Matrix out = W;
    for (Index j = 0; j < W.cols(); ++j)
        if (out.col(j).lpNorm<1>() > radius) out.col(j) = project_l1_ball(out.col(j), radius);
    return out;
}

} // namespace

GlobalMin l0_min_in_radius(const Dataset& data, const LossSpec& spec, double radius) {
    spec.validate();
    data.validate();
    if (!(radius > 0.0)) throw InvalidInput("l0_min_in_radius: radius must be positive");
    const Index m = data.feature_dim();
    const Index my = data.target_dim();
    const double ball = std::isfinite(radius) ? radius * (1.0 - 1e-6)
                                              : std::numeric_limits<double>::infinity();

    if (spec.kind == LossKind::square && !std::isfinite(radius)) return global_min_l0(data, spec);

    Matrix W = project_induced_one_norm(Matrix::Zero(my, m), ball);
    double value = l0_value(W, data, spec);
    for (int iter = 0; iter < 500; ++iter) {
        const Matrix grad = l0_gradient(W, data, spec);
        Matrix H = l0_hessian(W, data, spec);
        H.diagonal().array() += 1e-10 * (1.0 + H.diagonal().cwiseAbs().maxCoeff());
        const Vector dir = Eigen::LDLT<Matrix>(H).solve(vectorize(grad));
        const Matrix step = unvectorize(dir, my, m);

        bool moved = false;
        bool converged = false;
        for (const Matrix& dir_mat : {step, Matrix(grad / std::max(1.0, grad.norm()))}) {
            double t = 1.0;
            for (int bt = 0; bt < 60; ++bt) {
                const Matrix cand = project_induced_one_norm(W - t * dir_mat, ball);
                const double cand_value = l0_value(cand, data, spec);
                if (cand_value < value) {
                    converged = (value - cand_value) <= 1e-14 * (1.0 + std::abs(value));
                    W = cand;
                    value = cand_value;
                    moved = true;
                    break;
                }
                t *= 0.5;
            }
            if (moved) break;
        }
        if (!moved || converged) break;
    }
    return GlobalMin{value, W};
}

} // namespace deqflow
