#include "deqflow/linalg.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

namespace deqflow {

double smallest_eigenvalue(const Matrix& M) {
    const Matrix sym = 0.5 * (M + M.transpose());
    Eigen::SelfAdjointEigenSolver<Matrix> es(sym, Eigen::EigenvaluesOnly);
    return es.eigenvalues().minCoeff();
}

double symmetry_defect(const Matrix& M) {
    const double denom = std::max(M.norm(), 1e-300);
    return (M - M.transpose()).norm() / denom;
}

double induced_one_norm(const Matrix& M) {
    double best = 0.0;
    for (Index j = 0; j < M.cols(); ++j) best = std::max(best, M.col(j).cwiseAbs().sum());
    return best;
}

double smallest_singular_value(const Matrix& M) {
    if (M.rows() == 0 || M.cols() == 0) return 0.0;
    Eigen::BDCSVD<Matrix> svd(M);
    return svd.singularValues().tail(1)(0);
}

Index numerical_rank(const Matrix& M) {
    if (M.rows() == 0 || M.cols() == 0) return 0;
    Eigen::BDCSVD<Matrix> svd(M);
    const auto& sv = svd.singularValues();
    const double cutoff =
        sv(0) * static_cast<double>(std::max(M.rows(), M.cols())) * std::numeric_limits<double>::epsilon();
    Index r = 0;
    for (Index i = 0; i < sv.size(); ++i)
        if (sv(i) > cutoff) ++r;
    return r;
}

Matrix pseudo_inverse(const Matrix& M) {
    Eigen::BDCSVD<Matrix> svd(M, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const auto& sv = svd.singularValues();
    const double cutoff =
        sv.size() == 0 ? 0.0
                       : sv(0) * static_cast<double>(std::max(M.rows(), M.cols())) *
                             std::numeric_limits<double>::epsilon();
    Vector inv = Vector::Zero(sv.size());
    for (Index i = 0; i < sv.size(); ++i)
        if (sv(i) > cutoff) inv(i) = 1.0 / sv(i);
    return svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose();
}

Vector vectorize(const Matrix& M) {
    return Eigen::Map<const Vector>(M.data(), M.size());
}

Matrix unvectorize(const Vector& v, Index rows, Index cols) {
    if (v.size() != rows * cols) throw InvalidInput("unvectorize: size mismatch");
    return Eigen::Map<const Matrix>(v.data(), rows, cols);
}

} // namespace deqflow
