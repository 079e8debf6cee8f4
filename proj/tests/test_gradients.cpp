#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <thread>
#include <vector>

#include "deqflow/equilibrium.hpp"
#include "deqflow/errors.hpp"
#include "deqflow/gradients.hpp"
#include "deqflow/losses.hpp"
#include "test_support.hpp"

using namespace deqflow;
using testutil::random_binary;
using testutil::random_matrix;
using testutil::random_params;
using testutil::random_regression;

namespace {
const LossSpec kSquare{LossKind::square, 0.0};

double max_abs_diff(const Matrix& a, const Matrix& b) {
    return (a - b).cwiseAbs().maxCoeff();
}
} // namespace

TEST_CASE("zero readout kills grad_A and leaves the pushed-forward L0 gradient on B") {
    ModelParams params = random_params(5, 2, 0.7, 1);
    params.B.setZero();
    Dataset data = random_regression(5, 2, 12, 1);
    const auto grads = grad_closed_form(params, data, kSquare);
    CHECK(grads.grad_A.cwiseAbs().maxCoeff() == 0.0);
    const Matrix expected =
        l0_gradient(Matrix::Zero(2, 5), data, kSquare) * resolvent(params).transpose();
    CHECK(max_abs_diff(grads.grad_B, expected) <= 1e-12);
}

TEST_CASE("zero square-loss residual gives zero gradients") {
    ModelParams params = random_params(4, 2, 0.6, 2);
    Dataset data = random_regression(4, 2, 9, 2);
    data.Y = forward(params, data.Phi); // exact fit
    const auto closed = grad_closed_form(params, data, kSquare);
    CHECK(closed.grad_A.cwiseAbs().maxCoeff() <= 1e-12);
    CHECK(closed.grad_B.cwiseAbs().maxCoeff() <= 1e-12);
    const auto ift = grad_ift(params, data, kSquare);
    CHECK(ift.grad_A.cwiseAbs().maxCoeff() <= 1e-12);
    CHECK(ift.grad_B.cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("closed form matches finite differences on a random instance") {
    ModelParams params = random_params(6, 2, 0.8, 3);
    params.A *= 0.5;
    params.B *= 0.5;
    Dataset data = random_regression(6, 2, 15, 3);
    const auto closed = grad_closed_form(params, data, kSquare);
    const auto fd = grad_finite_diff(params, data, kSquare, 1e-5);
    for (Index r = 0; r < 6; ++r)
        for (Index c = 0; c < 6; ++c) {
            const double denom =
                std::max({std::abs(closed.grad_A(r, c)), std::abs(fd.grad_A(r, c)), 1e-8});
            CHECK(std::abs(closed.grad_A(r, c) - fd.grad_A(r, c)) / denom <= 1e-6);
        }
    for (Index r = 0; r < 2; ++r)
        for (Index c = 0; c < 6; ++c) {
            const double denom =
                std::max({std::abs(closed.grad_B(r, c)), std::abs(fd.grad_B(r, c)), 1e-8});
            CHECK(std::abs(closed.grad_B(r, c) - fd.grad_B(r, c)) / denom <= 1e-6);
        }
}

TEST_CASE("the two analytic routes agree to 1e-10") {
    for (std::uint64_t seed = 0; seed < 8; ++seed) {
        const bool logistic = seed % 2 == 1;
        const LossSpec spec{logistic ? LossKind::logistic : LossKind::square,
                            logistic ? 0.1 : 0.0};
        const Index m_y = logistic ? 1 : 2;
        ModelParams params = random_params(4, m_y, 0.75, seed);
        Dataset data = logistic ? random_binary(4, 8, seed) : random_regression(4, m_y, 8, seed);
        const auto closed = grad_closed_form(params, data, spec);
        const auto ift = grad_ift(params, data, spec);
        const double scale_a = std::max(1.0, closed.grad_A.cwiseAbs().maxCoeff());
        const double scale_b = std::max(1.0, closed.grad_B.cwiseAbs().maxCoeff());
        CHECK(max_abs_diff(closed.grad_A, ift.grad_A) / scale_a <= 1e-10);
        CHECK(max_abs_diff(closed.grad_B, ift.grad_B) / scale_b <= 1e-10);
    }
}

TEST_CASE("vanishing gamma reduces grad_B to the shallow gradient") {
    ModelParams params = random_params(5, 1, 1e-12, 4);
    Dataset data = random_regression(5, 1, 10, 4);
    const auto grads = grad_ift(params, data, kSquare);
    const Matrix shallow = l0_gradient(params.B, data, kSquare);
    CHECK(max_abs_diff(grads.grad_B, shallow) <= 1e-9 * std::max(1.0, shallow.norm()));
}

TEST_CASE("central differences converge at second order") {
    ModelParams params = random_params(4, 1, 0.7, 5);
    Dataset data = random_regression(4, 1, 8, 5);
    const auto exact = grad_closed_form(params, data, kSquare);
    const auto err_at = [&](double h) {
        const auto fd = grad_finite_diff(params, data, kSquare, h);
        return std::max(max_abs_diff(fd.grad_A, exact.grad_A),
                        max_abs_diff(fd.grad_B, exact.grad_B));
    };
    const double e1 = err_at(1e-3);
    const double e2 = err_at(5e-4);
    CHECK(e2 <= 0.30 * e1); // quartering with slack
}

TEST_CASE("empty dataset gives a constant objective and zero gradients") {
    ModelParams params = random_params(3, 1, 0.5, 6);
    Dataset data;
    data.Phi = Matrix::Zero(3, 0);
    data.Y = Matrix::Zero(1, 0);
    CHECK(objective_value(params, data, kSquare) == 0.0);
    const auto fd = grad_finite_diff(params, data, kSquare, 1e-5);
    CHECK(fd.grad_A.cwiseAbs().maxCoeff() == 0.0);
    const auto closed = grad_closed_form(params, data, kSquare);
    CHECK(closed.grad_A.cwiseAbs().maxCoeff() == 0.0);
    CHECK(closed.grad_B.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("gradcheck passes across seeds, shapes and losses") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        for (Index m : {3, 5, 10}) {
            for (Index m_y : {Index(1), Index(3)}) {
                for (const bool logistic : {false, true}) {
                    const Index rows = logistic ? 1 : m_y;
                    const LossSpec spec{logistic ? LossKind::logistic : LossKind::square,
                                        logistic ? 0.1 : 0.0};
                    ModelParams params = random_params(m, rows, 0.8, seed);
                    Dataset data = logistic ? random_binary(m, 12, seed + 100)
                                            : random_regression(m, rows, 12, seed + 100);
                    const auto report = gradcheck(params, data, spec);
                    CHECK(report.passed);
                }
            }
        }
    }
}

TEST_CASE("gradcheck rejects a corrupted gradient entry") {
    ModelParams params = random_params(5, 1, 0.8, 7);
    Dataset data = random_regression(5, 1, 10, 7);
    CHECK(gradcheck(params, data, kSquare).passed);

    const auto fd = grad_finite_diff(params, data, kSquare, kGradCheckStep);
    auto closed = grad_closed_form(params, data, kSquare);
    closed.grad_A(2, 3) += 1e-2;
    const double denom =
        std::max({std::abs(closed.grad_A(2, 3)), std::abs(fd.grad_A(2, 3)), 1e-8});
    CHECK(std::abs(closed.grad_A(2, 3) - fd.grad_A(2, 3)) / denom > kGradCheckTol);
}

TEST_CASE("gradcheck near the contraction boundary and at the scalar size") {
    ModelParams stress = random_params(10, 1, 0.99, 8);
    Dataset data = random_regression(10, 1, 15, 8);
    CHECK(gradcheck(stress, data, kSquare).passed);

    ModelParams tiny = random_params(1, 1, 0.5, 9);
    Dataset scalar = random_regression(1, 1, 4, 9);
    CHECK(gradcheck(tiny, scalar, kSquare).passed);
}

TEST_CASE("directional derivative matches the gradient pairing at second order") {
    ModelParams params = random_params(5, 2, 0.8, 10);
    Dataset data = random_regression(5, 2, 10, 10);
    const auto grads = grad_closed_form(params, data, kSquare);
    const Matrix dir_A = random_matrix(5, 5, 11, 41);
    const Matrix dir_B = random_matrix(2, 5, 11, 42);
    const double norm = std::sqrt(dir_A.squaredNorm() + dir_B.squaredNorm());
    const Matrix dA = dir_A / norm;
    const Matrix dB = dir_B / norm;
    const double pairing =
        grads.grad_A.cwiseProduct(dA).sum() + grads.grad_B.cwiseProduct(dB).sum();

    const auto slope_at = [&](double h) {
        ModelParams up = params, down = params;
        up.A += h * dA;
        up.B += h * dB;
        down.A -= h * dA;
        down.B -= h * dB;
        return (objective_value(up, data, kSquare) - objective_value(down, data, kSquare)) /
               (2.0 * h);
    };
    const double err1 = std::abs(slope_at(1e-3) - pairing);
    const double err2 = std::abs(slope_at(5e-4) - pairing);
    CHECK(err1 <= 1e-5 * std::max(1.0, std::abs(pairing)));
    CHECK(err2 <= 0.3 * err1 + 1e-12);
}

TEST_CASE("gradient evaluation is pure: concurrent calls agree bitwise") {
    ModelParams params = random_params(6, 2, 0.8, 13);
    Dataset data = random_regression(6, 2, 14, 13);
    const auto reference = grad_closed_form(params, data, kSquare);
    std::vector<GradientPair> results(4);
    std::vector<std::thread> pool;
    for (int t = 0; t < 4; ++t)
        pool.emplace_back([&, t] { results[static_cast<size_t>(t)] = grad_closed_form(params, data, kSquare); });
    for (auto& th : pool) th.join();
    for (const auto& r : results) {
        CHECK((r.grad_A - reference.grad_A).cwiseAbs().maxCoeff() == 0.0);
        CHECK((r.grad_B - reference.grad_B).cwiseAbs().maxCoeff() == 0.0);
    }
}

TEST_CASE("shape mismatches are rejected") {
    ModelParams params = random_params(5, 2, 0.8, 14);
    Dataset wrong_feat = random_regression(4, 2, 8, 14);
    CHECK_THROWS_AS(grad_closed_form(params, wrong_feat, kSquare), InvalidInput);
    Dataset wrong_target = random_regression(5, 3, 8, 14);
    CHECK_THROWS_AS(grad_ift(params, wrong_target, kSquare), InvalidInput);
    Dataset data = random_regression(5, 2, 8, 14);
    CHECK_THROWS_AS(grad_finite_diff(params, data, kSquare, 0.0), InvalidInput);
}

TEST_CASE("objective and gradients are invariant under per-column shifts of A") {
    ModelParams params = random_params(5, 2, 0.7, 12);
    Dataset data = random_regression(5, 2, 10, 12);
    ModelParams shifted = params;
    for (Index j = 0; j < 5; ++j) shifted.A.col(j).array() += 0.7 * static_cast<double>(j) - 1.4;

    CHECK(std::abs(objective_value(params, data, kSquare) -
                   objective_value(shifted, data, kSquare)) <= 1e-10);
    const auto g0 = grad_closed_form(params, data, kSquare);
    const auto g1 = grad_closed_form(shifted, data, kSquare);
    CHECK(max_abs_diff(g0.grad_B, g1.grad_B) <= 1e-10);
    // columns of grad_A live in the zero-sum subspace: J_k ones = 0
    for (Index k = 0; k < 5; ++k) {
        CHECK(std::abs(g0.grad_A.col(k).sum()) <= 1e-12);
        CHECK(std::abs(g1.grad_A.col(k).sum()) <= 1e-12);
    }
}
