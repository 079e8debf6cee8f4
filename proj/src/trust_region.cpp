#include "deqflow/trust_region.hpp"

#include <Eigen/Cholesky>
#include <Eigen/LU>
#include <cmath>

#include "deqflow/dynamics.hpp"
#include "deqflow/equilibrium.hpp"
#include "deqflow/errors.hpp"
#include "deqflow/linalg.hpp"
#include "deqflow/losses.hpp"
#include "deqflow/rng.hpp"

namespace deqflow {

namespace {

void require_single_output(const ModelParams& params) {
    params.validate();
    if (params.output_dim() != 1)
        throw UnsupportedConfig("trust_region: defined for a single output row (m_y = 1)");
}

struct State {
    Matrix S;    // softmax(A)
    Matrix U;    // I - gamma softmax(A)
    Matrix Uinv;
    Matrix Z;    // B U^{-1}, 1 x m
};

State make_state(const ModelParams& params) {
    State st;
    st.S = column_softmax(params.A);
    st.U = -params.gamma * st.S;
    st.U.diagonal().array() += 1.0;
    st.Uinv = Eigen::PartialPivLU<Matrix>(st.U).inverse();
    st.Z = params.B * st.Uinv;
    return st;
}

} // namespace

Matrix s_matrix(const ModelParams& params) {
    require_single_output(params);
    const State st = make_state(params);
    const Vector z = st.Z.transpose();
    const double g2 = params.gamma * params.gamma;
    Matrix S_mat = Matrix::Identity(params.m(), params.m());
    for (Index k = 0; k < params.m(); ++k) {
        const Vector s = st.S.col(k);
        const Vector jz = s.cwiseProduct(z) - s * s.dot(z); // J_k z
        S_mat(k, k) += g2 * jz.squaredNorm();
    }
    return S_mat;
}

Matrix f_matrix(const ModelParams& params, const Dataset& data, const LossSpec& spec) {
    require_single_output(params);
    spec.validate();
    data.validate();
    if (data.feature_dim() != params.m() || data.target_dim() != 1)
        throw InvalidInput("f_matrix: dataset does not match the model");
    const State st = make_state(params);
    const Matrix Zstar = st.Uinv * data.Phi; // equilibria, one per column
    Vector curvature(data.n());
    if (spec.kind == LossKind::square) {
        curvature.setConstant(2.0);
    } else {
        const Eigen::RowVectorXd q = st.Z * data.Phi;
        for (Index i = 0; i < data.n(); ++i) {
            const double p = 1.0 / (1.0 + std::exp(-q(i)));
            curvature(i) = p * (1.0 - p) + 2.0 * spec.tau;
        }
    }
    return Zstar * curvature.asDiagonal() * Zstar.transpose();
}

Matrix g_matrix(const ModelParams& params, const Dataset& data, const LossSpec& spec,
                double delta) {
    if (!(delta > 0.0)) throw InvalidInput("g_matrix: delta must be positive");
    const State st = make_state(params);
    const Matrix S_mat = s_matrix(params);
    const Matrix F = f_matrix(params, data, spec);
    Matrix inner = -delta * F;
    inner.diagonal() += S_mat.diagonal().cwiseInverse();
    return st.U * inner * st.U.transpose();
}

double delta_bar_search(const ModelParams& params, const Dataset& data, const LossSpec& spec,
                        double floor) {
    require_single_output(params);
    if (!(floor > 0.0)) throw InvalidInput("delta_bar_search: floor must be positive");
    const auto lambda_at = [&](double delta) {
        return smallest_eigenvalue(g_matrix(params, data, spec, delta));
    };
    if (lambda_at(kDeltaBarCap) >= floor) return kDeltaBarCap; // F (numerically) zero
    double lo = 0.0;
    double hi = 1.0;
    while (lambda_at(hi) >= floor) {
        lo = hi;
        hi *= 2.0;
        if (hi >= kDeltaBarCap) return kDeltaBarCap;
    }
    // lambda_min(G) is non-increasing in delta (F is PSD), so bisection is valid.
    while (hi - lo > 1e-12 * hi) {
        const double mid = 0.5 * (lo + hi);
        if (lambda_at(mid) >= floor)
            lo = mid;
        else
            hi = mid;
    }
    return lo;
}

TrustRegionCertificate certify_theorem2(const ModelParams& params, const Dataset& data,
                                        const LossSpec& spec, double delta, long n_probes,
                                        std::uint64_t probe_seed) {
    require_single_output(params);
    if (!(delta > 0.0)) throw InvalidInput("certify_theorem2: delta must be positive");
    TrustRegionCertificate cert;
    cert.delta_bar = delta_bar_search(params, data, spec);
    if (delta > cert.delta_bar * (1.0 + 1e-12))
        throw PreconditionError("certify_theorem2: delta exceeds the admissible bound");
    cert.delta_used = delta;
    cert.n_probes = n_probes;

    const State st = make_state(params);
    const Vector g0 = l0_gradient(st.Z, data, spec).transpose();
    const Matrix H = st.U * f_matrix(params, data, spec) * st.U.transpose();
    const Matrix G = g_matrix(params, data, spec, delta);
    cert.g_lambda_min = smallest_eigenvalue(G);

    // Update direction from the general preconditioner...
    const Vector v = -delta * (d_matrix(params) * g0);
    // ...and the induced-dynamics rate from the factored single-output form.
    const Vector dzdt = -(st.Uinv.transpose() * (s_matrix(params) * (st.Uinv * g0)));

    const Vector kkt = g0 + H * v + (1.0 / delta) * (G * v);
    cert.kkt_residual = kkt.norm();
    cert.kkt_scale = g0.norm() + (H * v).norm() + (G * v).norm() / delta + 1e-300;

    const auto g_norm = [&](const Vector& x) { return std::sqrt(x.dot(G * x)); };
    const double v_g = g_norm(v);
    const double rate_g = delta * g_norm(dzdt);
    cert.constraint_gap = std::abs(v_g - rate_g);
    cert.constraint_scale = v_g + rate_g + 1e-300;

    // Quadratic-model optimality against random feasible probes: points on
    // the G-ball boundary through the Cholesky factor, then the same points
    // shrunk by a uniform radius factor.
    const double l0_at = l0_value(st.Z, data, spec);
    const auto quad = [&](const Vector& x) {
        return l0_at + g0.dot(x) + 0.5 * x.dot(H * x);
    };
    const double quad_v = quad(v);
    Eigen::LLT<Matrix> llt(G);
    double worst = std::numeric_limits<double>::infinity();
    CounterRng rng(probe_seed, rng_stream::probes);
    for (long p = 0; p < n_probes; ++p) {
        Vector u(params.m());
        for (Index i = 0; i < u.size(); ++i) u(i) = rng.next_gaussian();
        // x solves L^T x = u, so ||x||_G = ||u||_2; rescale to the boundary.
        Vector x = llt.matrixU().solve(u);
        if (u.norm() == 0.0) continue;
        x *= v_g / u.norm();
        worst = std::min(worst, quad(x) - quad_v);
        const double shrink = rng.next_uniform();
        worst = std::min(worst, quad(Vector(shrink * x)) - quad_v);
    }
    cert.quad_model_gap = (n_probes > 0 && std::isfinite(worst)) ? worst : 0.0;
    return cert;
}

BiasDecomposition decompose_error_vector(const ModelParams& params, const Vector& r) {
    require_single_output(params);
    if (r.size() != params.m()) throw InvalidInput("decompose_error_vector: size mismatch");
    const State st = make_state(params);
    const Vector v_t = -(st.Uinv.transpose() * r); // V^T
    const double mean_r = r.mean();
    BiasDecomposition out;
    // ones is the left Perron eigenvector of the column-stochastic softmax,
    // so U^{-T} maps the ones-component of r by exactly 1/(1-gamma).
    out.aligned_component = -(mean_r / (1.0 - params.gamma)) * Vector::Ones(params.m());
    out.residual_component = v_t - out.aligned_component;
    out.aligned_norm = out.aligned_component.norm();
    out.residual_norm = out.residual_component.norm();
    return out;
}

Vector implicit_bias_error_vector(const ModelParams& params, const Dataset& data,
                                  const LossSpec& spec, double delta) {
    require_single_output(params);
    if (!(delta > 0.0)) throw InvalidInput("implicit_bias_error_vector: delta must be positive");
    const State st = make_state(params);
    const Vector g0 = l0_gradient(st.Z, data, spec).transpose();
    return delta * (s_matrix(params) * (st.Uinv * g0));
}

BiasDecomposition implicit_bias_decompose(const ModelParams& params, const Dataset& data,
                                          const LossSpec& spec, double delta) {
    return decompose_error_vector(params, implicit_bias_error_vector(params, data, spec, delta));
}

} // namespace deqflow
