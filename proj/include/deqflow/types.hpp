#pragma once

#include <Eigen/Dense>

#include "deqflow/errors.hpp"

namespace deqflow {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

/// Trainable pair (A, B) plus the fixed contraction factor gamma.
/// A is m x m (pre-softmax recurrence weights), B is m_y x m (readout).
struct ModelParams {
    Matrix A;
    Matrix B;
    double gamma = 0.8;

    Index m() const { return A.rows(); }
    Index output_dim() const { return B.rows(); }

    void validate() const {
        if (A.rows() != A.cols())
            throw InvalidInput("ModelParams: A must be square");
        if (B.cols() != A.rows())
            throw InvalidInput("ModelParams: B column count must equal A dimension");
        if (!(gamma > 0.0 && gamma < 1.0))
            throw InvalidInput("ModelParams: gamma must lie in (0, 1)");
        if (!A.allFinite() || !B.allFinite())
            throw InvalidInput("ModelParams: non-finite entries");
    }
};

enum class DataKind { regression, binary_labels };

/// Feature matrix Phi (m x n, one sample per column) and targets Y (m_y x n).
struct Dataset {
    Matrix Phi;
    Matrix Y;
    DataKind kind = DataKind::regression;

    Index n() const { return Phi.cols(); }
    Index feature_dim() const { return Phi.rows(); }
    Index target_dim() const { return Y.rows(); }

    void validate() const {
        if (Phi.cols() != Y.cols())
            throw InvalidInput("Dataset: Phi and Y must have the same sample count");
        if (kind == DataKind::binary_labels) {
            if (Y.rows() != 1)
                throw InvalidInput("Dataset: binary labels require one target row");
            for (Index i = 0; i < Y.cols(); ++i) {
                const double y = Y(0, i);
                if (y != 0.0 && y != 1.0)
                    throw InvalidInput("Dataset: binary labels must be 0 or 1");
            }
        }
    }
};

enum class LossKind { square, logistic };

/// Loss selector; tau is the quadratic regulariser of the logistic loss
/// and must be zero for the square loss.
struct LossSpec {
    LossKind kind = LossKind::square;
    double tau = 0.0;

    void validate() const {
        if (tau < 0.0) throw InvalidInput("LossSpec: tau must be >= 0");
        if (kind == LossKind::square && tau != 0.0)
            throw InvalidInput("LossSpec: square loss takes tau = 0");
    }
};

} // namespace deqflow
