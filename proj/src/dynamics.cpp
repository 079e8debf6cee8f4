#include "deqflow/dynamics.hpp"

#include <Eigen/LU>
#include <cmath>

#include "deqflow/equilibrium.hpp"
#include "deqflow/errors.hpp"
#include "deqflow/gradients.hpp"
#include "deqflow/linalg.hpp"
#include "deqflow/rng.hpp"

namespace deqflow {

Matrix d_matrix(const ModelParams& params) {
    params.validate();
    const Index m = params.m();
    const Index my = params.output_dim();
    const Matrix S = column_softmax(params.A);
    Matrix U = -params.gamma * S;
    U.diagonal().array() += 1.0;
    const Matrix Uinv = Eigen::PartialPivLU<Matrix>(U).inverse();
    const Matrix Z = params.B * Uinv;
    const double g2 = params.gamma * params.gamma;

    Matrix D = Matrix::Zero(m * my, m * my);
    for (Index k = 0; k < m; ++k) {
        const Vector s = S.col(k);
        // R = J_k Z^T with J_k = diag(s) - s s^T (symmetric).
        Matrix R = s.asDiagonal() * Z.transpose();
        R.noalias() -= s * (s.transpose() * Z.transpose());
        Matrix block = g2 * (R.transpose() * R);
        block.diagonal().array() += 1.0; // I_{m_y} + gamma^2 Z J_k J_k^T Z^T
        const Vector u = Uinv.row(k).transpose();
        for (Index j = 0; j < m; ++j)
            for (Index jp = 0; jp < m; ++jp)
                D.block(j * my, jp * my, my, my) += u(j) * u(jp) * block;
    }
    return D;
}

double d_lambda_lower_bound(Index m, double gamma) {
    return 1.0 / (static_cast<double>(m) * (1.0 + gamma) * (1.0 + gamma));
}

SpectralCertificate spectral_certificate(const ModelParams& params) {
    const Matrix D = d_matrix(params);
    SpectralCertificate cert;
    cert.symmetry_defect = symmetry_defect(D);
    cert.lambda_min = smallest_eigenvalue(D);
    cert.lower_bound_slack = cert.lambda_min - d_lambda_lower_bound(params.m(), params.gamma);
    return cert;
}

namespace {

// Shared per-step evaluation for the flow integrators. For the square loss
// the data enters only through Phi Phi^T, Phi Y^T and ||Y||_F^2, so steps
// cost O(m^3) regardless of the sample count.
class FlowWorkspace {
public:
    FlowWorkspace(const Dataset& data, const LossSpec& spec) : data_(data), spec_(spec) {
        if (spec.kind == LossKind::square) {
            gram_ = data.Phi * data.Phi.transpose();
            cross_ = data.Phi * data.Y.transpose();
            y_sq_ = data.Y.squaredNorm();
        }
    }

    struct Eval {
        double loss = 0.0;
        Matrix grad_A;
        Matrix grad_B;
    };

    Eval eval(const ModelParams& params) const {
        const Matrix S = column_softmax(params.A);
        Matrix U = -params.gamma * S;
        U.diagonal().array() += 1.0;
        const Matrix Uinv = Eigen::PartialPivLU<Matrix>(U).inverse();
        const Matrix Z = params.B * Uinv;

        Eval out;
        Matrix Q;
        if (spec_.kind == LossKind::square) {
            out.loss = (Z * gram_).cwiseProduct(Z).sum() - 2.0 * Z.cwiseProduct(cross_.transpose()).sum() + y_sq_;
            Q = 2.0 * (Z * gram_ - cross_.transpose());
        } else {
            out.loss = l0_value(Z, data_, spec_);
            Q = l0_gradient(Z, data_, spec_);
        }
        out.grad_B = Q * Uinv.transpose();

        // grad_A column k = gamma * J_k ( Z^T Q U^{-T} )_{*k}; with
        // T = S o M, M = Z^T Q U^{-T}, this is gamma * (T - S diag(colsum T)).
        const Matrix M = Z.transpose() * Q * Uinv.transpose();
        const Matrix T = S.cwiseProduct(M);
        const Vector colsum = T.colwise().sum().transpose();
        out.grad_A = params.gamma * (T - S * colsum.asDiagonal());
        return out;
    }

private:
    const Dataset& data_;
    LossSpec spec_;
    Matrix gram_;
    Matrix cross_;
    double y_sq_ = 0.0;
};

void validate_flow_config(const FlowConfig& cfg) {
    cfg.loss_spec.validate();
    if (!(cfg.step_size > 0.0)) throw InvalidInput("FlowConfig: step_size must be positive");
    if (cfg.steps < 0) throw InvalidInput("FlowConfig: steps must be >= 0");
    if (cfg.record_every < 1) throw InvalidInput("FlowConfig: record_every must be >= 1");
    if (!(cfg.radius_R > 0.0)) throw InvalidInput("FlowConfig: radius_R must be positive");
}

double l0_floor(const Dataset& data, const LossSpec& spec, double radius) {
    if (spec.kind == LossKind::square && !std::isfinite(radius))
        return global_min_l0(data, spec).value;
    return l0_min_in_radius(data, spec, radius).value;
}

} // namespace

Trajectory flow_integrate(const ModelParams& init, const Dataset& data, const FlowConfig& cfg) {
    init.validate();
    validate_flow_config(cfg);
    const FlowWorkspace ws(data, cfg.loss_spec);
    const double alpha = cfg.step_size;

    Trajectory traj;
    traj.kappa = pl_constant(data, cfg.loss_spec, cfg.radius_R).kappa;
    traj.loss_floor = l0_floor(data, cfg.loss_spec, cfg.radius_R);
    traj.lambda_lower = d_lambda_lower_bound(init.m(), init.gamma);

    ModelParams params = init;
    double gap0 = 0.0;
    double running_lambda = std::numeric_limits<double>::infinity();
    const double b_norm_limit =
        std::isfinite(cfg.radius_R) ? (1.0 - init.gamma) * cfg.radius_R
                                    : std::numeric_limits<double>::infinity();
    bool stop = false;

    const auto record = [&](long step, const FlowWorkspace::Eval& ev) {
        const double t = static_cast<double>(step) * alpha;
        const double lambda_min = spectral_certificate(params).lambda_min;
        running_lambda = std::min(running_lambda, lambda_min);
        if (step == 0) gap0 = ev.loss - traj.loss_floor;
        if (!traj.losses.empty() && ev.loss > traj.losses.back() + 1e-10)
            traj.loss_monotone = false;
        traj.steps.push_back(step);
        traj.times.push_back(t);
        traj.losses.push_back(ev.loss);
        traj.lambda_min_seq.push_back(lambda_min);
        traj.grad_norm_A.push_back(ev.grad_A.norm());
        traj.grad_norm_B.push_back(ev.grad_B.norm());
        traj.norm_B_1.push_back(induced_one_norm(params.B));
        traj.bound_indep.push_back(gap0 * std::exp(-2.0 * traj.kappa * traj.lambda_lower * t));
        traj.bound_dep.push_back(gap0 * std::exp(-2.0 * traj.kappa * running_lambda * t));
        if (cfg.stop_gap > 0.0 && ev.loss - traj.loss_floor <= cfg.stop_gap) stop = true;
    };

    for (long step = 0; step <= cfg.steps; ++step) {
        const FlowWorkspace::Eval ev = ws.eval(params);
        if (!std::isfinite(ev.loss))
            throw Divergence("flow_integrate: non-finite loss (step size too large?)", step);
        if (!traj.b_norm_violated && induced_one_norm(params.B) >= b_norm_limit) {
            traj.b_norm_violated = true;
            traj.b_norm_violation_step = step;
        }
        if (step % cfg.record_every == 0 || step == cfg.steps) record(step, ev);
        if (stop || step == cfg.steps) break;

        if (cfg.integrator == Integrator::euler) {
            params.A -= alpha * ev.grad_A;
            params.B -= alpha * ev.grad_B;
        } else {
            const auto& k1 = ev;
            ModelParams half = params;
            half.A = params.A - 0.5 * alpha * k1.grad_A;
            half.B = params.B - 0.5 * alpha * k1.grad_B;
            const auto k2 = ws.eval(half);
            half.A = params.A - 0.5 * alpha * k2.grad_A;
            half.B = params.B - 0.5 * alpha * k2.grad_B;
            const auto k3 = ws.eval(half);
            half.A = params.A - alpha * k3.grad_A;
            half.B = params.B - alpha * k3.grad_B;
            const auto k4 = ws.eval(half);
            params.A -= (alpha / 6.0) * (k1.grad_A + 2.0 * k2.grad_A + 2.0 * k3.grad_A + k4.grad_A);
            params.B -= (alpha / 6.0) * (k1.grad_B + 2.0 * k2.grad_B + 2.0 * k3.grad_B + k4.grad_B);
        }
    }
    traj.final_params = params;
    return traj;
}

double induced_dynamics_residual(const ModelParams& params, const Dataset& data,
                                 const LossSpec& spec, double alpha) {
    params.validate();
    if (!(alpha > 0.0)) throw InvalidInput("induced_dynamics_residual: alpha must be positive");

    const Matrix Uinv = resolvent(params);
    const Matrix Z = params.B * Uinv;
    const Vector rhs = d_matrix(params) * vectorize(l0_gradient(Z, data, spec));

    const GradientPair grads = grad_closed_form(params, data, spec);
    ModelParams stepped = params;
    stepped.A -= alpha * grads.grad_A;
    stepped.B -= alpha * grads.grad_B;
    const Matrix Z_next = stepped.B * resolvent(stepped);

    const Vector drift = (vectorize(Z_next) - vectorize(Z)) / alpha;
    return (drift + rhs).norm() / (rhs.norm() + 1e-12);
}

double time_to_accuracy(double kappa, Index m, double gamma, double init_gap, double epsilon) {
    if (!(kappa > 0.0) || m <= 0 || !(gamma > 0.0) || !(init_gap > 0.0) || !(epsilon > 0.0))
        throw InvalidInput("time_to_accuracy: all inputs must be positive");
    if (epsilon >= init_gap) return 0.0;
    const double mg = static_cast<double>(m) * (1.0 + gamma) * (1.0 + gamma);
    return mg / (2.0 * kappa) * std::log(init_gap / epsilon);
}

Trajectory baseline_linear_flow(const Matrix& init_W, const Dataset& data, const FlowConfig& cfg) {
    validate_flow_config(cfg);
    data.validate();
    if (init_W.cols() != data.feature_dim() || init_W.rows() != data.target_dim())
        throw InvalidInput("baseline_linear_flow: W shape does not match the dataset");

    Trajectory traj;
    traj.loss_floor = l0_floor(data, cfg.loss_spec, cfg.radius_R);

    Matrix W = init_W;
    const double alpha = cfg.step_size;
    bool stop = false;
    const auto record = [&](long step, double loss, const Matrix& grad) {
        traj.steps.push_back(step);
        traj.times.push_back(static_cast<double>(step) * alpha);
        traj.losses.push_back(loss);
        traj.grad_norm_B.push_back(grad.norm());
        traj.norm_B_1.push_back(induced_one_norm(W));
        if (cfg.stop_gap > 0.0 && loss - traj.loss_floor <= cfg.stop_gap) stop = true;
    };

    for (long step = 0; step <= cfg.steps; ++step) {
        const double loss = l0_value(W, data, cfg.loss_spec);
        if (!std::isfinite(loss)) throw Divergence("baseline_linear_flow: non-finite loss", step);
        const Matrix grad = l0_gradient(W, data, cfg.loss_spec);
        if (step % cfg.record_every == 0 || step == cfg.steps) record(step, loss, grad);
        if (stop || step == cfg.steps) break;
        if (cfg.integrator == Integrator::euler) {
            W -= alpha * grad;
        } else {
            const Matrix k1 = grad;
            const Matrix k2 = l0_gradient(W - 0.5 * alpha * k1, data, cfg.loss_spec);
            const Matrix k3 = l0_gradient(W - 0.5 * alpha * k2, data, cfg.loss_spec);
            const Matrix k4 = l0_gradient(W - alpha * k3, data, cfg.loss_spec);
            W -= (alpha / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
    }
    traj.final_W = W;
    return traj;
}

Trajectory resnet_linear_flow(int depth, const Dataset& data, const FlowConfig& cfg,
                              bool identity_init, std::uint64_t seed) {
    validate_flow_config(cfg);
    data.validate();
    if (cfg.loss_spec.kind != LossKind::square)
        throw UnsupportedConfig("resnet_linear_flow: square loss only");
    if (data.feature_dim() != data.target_dim())
        throw UnsupportedConfig("resnet_linear_flow: requires m_y = m");
    if (depth < 1) throw InvalidInput("resnet_linear_flow: depth must be >= 1");

    const Index m = data.feature_dim();
    const Matrix gram = data.Phi * data.Phi.transpose();
    const Matrix cross = data.Phi * data.Y.transpose();
    const double y_sq = data.Y.squaredNorm();

    std::vector<Matrix> layers(static_cast<size_t>(depth), Matrix::Zero(m, m));
    if (!identity_init) {
        CounterRng rng(seed, rng_stream::init_a);
        const double scale = 1.0 / std::sqrt(static_cast<double>(m));
        for (auto& W : layers)
            for (Index c = 0; c < m; ++c)
                for (Index r = 0; r < m; ++r) W(r, c) = scale * rng.next_gaussian();
    }

    Trajectory traj;
    traj.loss_floor = l0_floor(data, cfg.loss_spec, cfg.radius_R);

    const double alpha = cfg.step_size;
    Matrix product = Matrix::Identity(m, m);
    for (long step = 0; step <= cfg.steps; ++step) {
        // prefix[l] = (I + W_l) ... (I + W_1); suffix accumulated in reverse.
        std::vector<Matrix> prefix(static_cast<size_t>(depth) + 1);
        prefix[0] = Matrix::Identity(m, m);
        for (int l = 0; l < depth; ++l)
            prefix[static_cast<size_t>(l) + 1] =
                (Matrix::Identity(m, m) + layers[static_cast<size_t>(l)]) * prefix[static_cast<size_t>(l)];
        product = prefix[static_cast<size_t>(depth)];

        const double loss =
            (product * gram).cwiseProduct(product).sum() - 2.0 * product.cwiseProduct(cross.transpose()).sum() + y_sq;
        if (!std::isfinite(loss)) throw Divergence("resnet_linear_flow: non-finite loss", step);
        const Matrix E = 2.0 * (product * gram - cross.transpose());

        std::vector<Matrix> grads(static_cast<size_t>(depth));
        Matrix suffix = Matrix::Identity(m, m);
        double grad_sq = 0.0;
        for (int l = depth - 1; l >= 0; --l) {
            grads[static_cast<size_t>(l)] =
                suffix.transpose() * E * prefix[static_cast<size_t>(l)].transpose();
            grad_sq += grads[static_cast<size_t>(l)].squaredNorm();
            suffix = suffix * (Matrix::Identity(m, m) + layers[static_cast<size_t>(l)]);
        }

        if (step % cfg.record_every == 0 || step == cfg.steps) {
            traj.steps.push_back(step);
            traj.times.push_back(static_cast<double>(step) * alpha);
            traj.losses.push_back(loss);
            traj.grad_norm_B.push_back(std::sqrt(grad_sq));
            traj.norm_B_1.push_back(induced_one_norm(product));
        }
        if (step == cfg.steps) break;
        for (int l = 0; l < depth; ++l)
            layers[static_cast<size_t>(l)] -= alpha * grads[static_cast<size_t>(l)];
    }
    traj.final_W = product;
    return traj;
}

} // namespace deqflow
