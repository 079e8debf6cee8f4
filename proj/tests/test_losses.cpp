#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "deqflow/errors.hpp"
#include "deqflow/linalg.hpp"
#include "deqflow/losses.hpp"
#include "test_support.hpp"

using namespace deqflow;
using testutil::random_binary;
using testutil::random_matrix;
using testutil::random_regression;

namespace {

const LossSpec kSquare{LossKind::square, 0.0};

double fd_rel_error(const Matrix& analytic, const Matrix& fd) {
    double worst = 0.0;
    for (Index r = 0; r < analytic.rows(); ++r)
        for (Index c = 0; c < analytic.cols(); ++c) {
            const double denom = std::max({std::abs(analytic(r, c)), std::abs(fd(r, c)), 1e-8});
            worst = std::max(worst, std::abs(analytic(r, c) - fd(r, c)) / denom);
        }
    return worst;
}

} // namespace

TEST_CASE("square loss values") {
    Dataset data = random_regression(4, 2, 7, 1);
    const Matrix W0 = Matrix::Zero(2, 4);

    Dataset zero_target = data;
    zero_target.Y.setZero();
    CHECK(l0_value(W0, zero_target, kSquare) == 0.0);
    CHECK(l0_value(W0, data, kSquare) == doctest::Approx(data.Y.squaredNorm()).epsilon(1e-14));
}

TEST_CASE("logistic loss at the zero score is n log 2") {
    Dataset data = random_binary(3, 11, 2);
    const LossSpec spec{LossKind::logistic, 0.0};
    CHECK(l0_value(Matrix::Zero(1, 3), data, spec) ==
          doctest::Approx(11.0 * std::log(2.0)).epsilon(1e-13));
}

TEST_CASE("logistic loss rejects wide targets") {
    Dataset data = random_regression(3, 2, 5, 3);
    CHECK_THROWS_AS(l0_value(Matrix::Zero(2, 3), data, LossSpec{LossKind::logistic, 0.0}),
                    UnsupportedConfig);
}

TEST_CASE("square gradient vanishes at an interpolating W and has the 1x1 closed form") {
    const Matrix W_true = random_matrix(2, 4, 4, 21);
    Dataset data = random_regression(4, 2, 9, 4);
    data.Y = W_true * data.Phi;
    CHECK(l0_gradient(W_true, data, kSquare).cwiseAbs().maxCoeff() <= 1e-12);

    Dataset scalar;
    scalar.Phi = Matrix::Ones(1, 1);
    scalar.Y = Matrix::Ones(1, 1);
    CHECK(l0_gradient(Matrix::Zero(1, 1), scalar, kSquare)(0, 0) == doctest::Approx(-2.0));
}

TEST_CASE("gradients match finite differences of the value") {
    for (auto kind : {LossKind::square, LossKind::logistic}) {
        const LossSpec spec{kind, kind == LossKind::logistic ? 0.1 : 0.0};
        const Index m_y = kind == LossKind::logistic ? 1 : 3;
        Dataset data = kind == LossKind::logistic ? random_binary(5, 20, 5)
                                                  : random_regression(5, m_y, 20, 5);
        const Matrix W = random_matrix(m_y, 5, 6, 22, 0.5);
        const Matrix grad = l0_gradient(W, data, spec);
        const double h = 1e-5;
        Matrix fd(m_y, 5);
        for (Index r = 0; r < m_y; ++r)
            for (Index c = 0; c < 5; ++c) {
                Matrix up = W, down = W;
                up(r, c) += h;
                down(r, c) -= h;
                fd(r, c) = (l0_value(up, data, spec) - l0_value(down, data, spec)) / (2.0 * h);
            }
        CHECK(fd_rel_error(grad, fd) <= 1e-7);
    }
}

TEST_CASE("hessian matches finite differences of the gradient and known forms") {
    for (auto kind : {LossKind::square, LossKind::logistic}) {
        const LossSpec spec{kind, kind == LossKind::logistic ? 0.05 : 0.0};
        const Index m_y = kind == LossKind::logistic ? 1 : 2;
        Dataset data = kind == LossKind::logistic ? random_binary(4, 15, 7)
                                                  : random_regression(4, m_y, 15, 7);
        const Matrix W = random_matrix(m_y, 4, 8, 23, 0.3);
        const Matrix H = l0_hessian(W, data, spec);
        CHECK(symmetry_defect(H) <= 1e-13);

        const double h = 1e-5;
        for (Index col = 0; col < 4 * m_y; ++col) {
            Matrix up = W, down = W;
            up.data()[col] += h;
            down.data()[col] -= h;
            const Matrix diff =
                (l0_gradient(up, data, spec) - l0_gradient(down, data, spec)) / (2.0 * h);
            const Vector fd_col = vectorize(diff);
            for (Index r = 0; r < H.rows(); ++r) {
                const double denom = std::max({std::abs(H(r, col)), std::abs(fd_col(r)), 1e-6});
                CHECK(std::abs(H(r, col) - fd_col(r)) / denom <= 1e-6);
            }
        }
    }
}

TEST_CASE("square hessian is independent of W; logistic at zero scores collapses to (1/4 + 2 tau)") {
    Dataset data = random_regression(4, 2, 9, 9);
    const Matrix H1 = l0_hessian(random_matrix(2, 4, 1, 24), data, kSquare);
    const Matrix H2 = l0_hessian(random_matrix(2, 4, 2, 24), data, kSquare);
    CHECK((H1 - H2).cwiseAbs().maxCoeff() == 0.0);

    Dataset bin = random_binary(4, 12, 10);
    const double tau = 0.2;
    const Matrix H = l0_hessian(Matrix::Zero(1, 4), bin, LossSpec{LossKind::logistic, tau});
    const Matrix expected = (0.25 + 2.0 * tau) * (bin.Phi * bin.Phi.transpose());
    CHECK((H - expected).cwiseAbs().maxCoeff() <= 1e-12 * expected.norm());
}

TEST_CASE("square-loss hessian rank equals m_y * rank(Phi)") {
    // over-parameterised: m > n makes the hessian rank deficient
    Dataset data = random_regression(6, 2, 3, 11);
    const Matrix H = l0_hessian(Matrix::Zero(2, 6), data, kSquare);
    CHECK(numerical_rank(H) == 2 * numerical_rank(data.Phi));
    CHECK(numerical_rank(data.Phi) == 3);
}

TEST_CASE("pl constant for the identity features is exactly 2") {
    Dataset data;
    data.Phi = Matrix::Identity(5, 5);
    data.Y = random_matrix(2, 5, 12, 25);
    const auto cert = pl_constant(data, kSquare, std::numeric_limits<double>::infinity());
    CHECK(cert.kappa == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("pl constant for the logistic loss at infinite radius drops rho") {
    Dataset data = random_binary(3, 30, 13);
    const LossSpec spec{LossKind::logistic, 0.1};
    const auto cert = pl_constant(data, spec, std::numeric_limits<double>::infinity());
    const double smin = smallest_singular_value(data.Phi);
    CHECK(cert.rho_R == 0.0);
    CHECK(cert.kappa == doctest::Approx(0.2 * smin * smin).epsilon(1e-12));
}

TEST_CASE("rho(R) matches a boundary-sampling oracle") {
    Dataset data = random_binary(4, 12, 14);
    const LossSpec spec{LossKind::logistic, 0.0};
    const double R = 1.7;
    const auto cert = pl_constant(data, spec, R);

    // Oracle: sample W with max_j |W_j| = R (1 - eps) (the 1x1 induced
    // 1-norm boundary), keeping the minimum of p (1 - p); include the
    // per-sample sign-aligned extremisers, which attain the infimum.
    const double shrink = R * (1.0 - 1e-9);
    double oracle = std::numeric_limits<double>::infinity();
    const auto probe = [&](const Eigen::RowVectorXd& W) {
        for (Index i = 0; i < data.n(); ++i) {
            const double q = W * data.Phi.col(i);
            const double p = 1.0 / (1.0 + std::exp(-q));
            oracle = std::min(oracle, p * (1.0 - p));
        }
    };
    for (Index i = 0; i < data.n(); ++i) {
        probe(shrink * data.Phi.col(i).cwiseSign().transpose());
        probe(-shrink * data.Phi.col(i).cwiseSign().transpose());
    }
    CounterRng rng(15, 1);
    for (int draw = 0; draw < 500; ++draw) {
        Eigen::RowVectorXd W(4);
        for (Index j = 0; j < 4; ++j) W(j) = rng.next_uniform(-shrink, shrink);
        W(static_cast<Index>(rng.next_u64() % 4)) = rng.next_uniform() < 0.5 ? shrink : -shrink;
        probe(W);
    }
    CHECK(std::abs(cert.rho_R - oracle) <= 1e-6);
}

TEST_CASE("pl constant rejects rank-deficient features") {
    Dataset data;
    data.Phi = Matrix::Zero(4, 8);
    data.Phi.row(0) = random_matrix(1, 8, 16, 26);
    data.Y = random_matrix(4, 8, 16, 27);
    CHECK_THROWS_AS(pl_constant(data, kSquare, std::numeric_limits<double>::infinity()),
                    PreconditionError);
}

TEST_CASE("global minimum oracle") {
    const Matrix W_true = random_matrix(2, 4, 17, 28);
    Dataset exact = random_regression(4, 2, 10, 17);
    exact.Y = W_true * exact.Phi;
    CHECK(global_min_l0(exact, kSquare).value <= 1e-18);

    Dataset noisy = random_regression(3, 2, 12, 18); // n > m, full rank
    const auto opt = global_min_l0(noisy, kSquare);
    const Matrix residual_gram = (opt.minimizer * noisy.Phi - noisy.Y) * noisy.Phi.transpose();
    CHECK(residual_gram.cwiseAbs().maxCoeff() <= 1e-8);

    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        const Matrix W = random_matrix(2, 3, seed, 29);
        CHECK(opt.value <= l0_value(W, noisy, kSquare) + 1e-12);
    }

    CHECK_THROWS_AS(global_min_l0(random_binary(3, 5, 19), LossSpec{LossKind::logistic, 0.0}),
                    UnsupportedConfig);
}

TEST_CASE("radius-constrained minimisation") {
    // unconstrained square case agrees with the closed form
    Dataset data = random_regression(3, 1, 20, 20);
    const auto exact = global_min_l0(data, kSquare);
    const auto inf_ball =
        l0_min_in_radius(data, kSquare, std::numeric_limits<double>::infinity());
    CHECK(inf_ball.value == doctest::Approx(exact.value).epsilon(1e-10));

    // logistic with tau > 0: gradient nearly zero at the reported optimum
    Dataset bin = random_binary(3, 40, 21);
    const LossSpec spec{LossKind::logistic, 0.3};
    const auto opt = l0_min_in_radius(bin, spec, std::numeric_limits<double>::infinity());
    CHECK(l0_gradient(opt.minimizer, bin, spec).cwiseAbs().maxCoeff() <= 1e-8);

    // finite radius: minimiser stays inside the ball and beats interior probes
    const double R = 0.05;
    const auto constrained = l0_min_in_radius(bin, spec, R);
    CHECK(induced_one_norm(constrained.minimizer) <= R);
    CounterRng rng(22, 2);
    for (int draw = 0; draw < 200; ++draw) {
        Matrix W(1, 3);
        for (Index j = 0; j < 3; ++j) W(0, j) = rng.next_uniform(-R, R);
        if (induced_one_norm(W) >= R) continue;
        CHECK(constrained.value <= l0_value(W, bin, spec) + 1e-10);
    }
}

TEST_CASE("square PL inequality holds with the certified constant") {
    Dataset data = random_regression(5, 2, 30, 23); // n > m
    const auto cert = pl_constant(data, kSquare, std::numeric_limits<double>::infinity());
    const double floor = global_min_l0(data, kSquare).value;
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
        const Matrix W = random_matrix(2, 5, seed, 30);
        const double lhs = 0.5 * l0_gradient(W, data, kSquare).squaredNorm();
        const double rhs = cert.kappa * (l0_value(W, data, kSquare) - floor);
        CHECK(lhs - rhs >= -1e-9);
    }

    // over-parameterised case m > n
    Dataset wide = random_regression(20, 1, 8, 24);
    const auto cert_wide = pl_constant(wide, kSquare, std::numeric_limits<double>::infinity());
    const double floor_wide = global_min_l0(wide, kSquare).value;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        const Matrix W = random_matrix(1, 20, seed, 31);
        const double lhs = 0.5 * l0_gradient(W, wide, kSquare).squaredNorm();
        const double rhs = cert_wide.kappa * (l0_value(W, wide, kSquare) - floor_wide);
        CHECK(lhs - rhs >= -1e-9);
    }
}

TEST_CASE("logistic strong convexity on the radius ball") {
    Dataset data = random_binary(4, 25, 25);
    const LossSpec spec{LossKind::logistic, 0.1};
    const double R = 0.8;
    const auto cert = pl_constant(data, spec, R);
    const double bound =
        (2.0 * spec.tau + cert.rho_R) * std::pow(smallest_singular_value(data.Phi), 2);
    CounterRng rng(26, 3);
    for (int draw = 0; draw < 50; ++draw) {
        Matrix W(1, 4);
        for (Index j = 0; j < 4; ++j) W(0, j) = rng.next_uniform(-R, R);
        if (induced_one_norm(W) >= R) W *= 0.9 * R / induced_one_norm(W);
        const Matrix H = l0_hessian(W, data, spec);
        for (int probe = 0; probe < 50; ++probe) {
            Vector v(4);
            for (Index j = 0; j < 4; ++j) v(j) = rng.next_gaussian();
            v.normalize();
            CHECK(v.dot(H * v) >= bound - 1e-9);
        }
    }
}
