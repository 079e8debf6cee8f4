#pragma once

#include "deqflow/types.hpp"

namespace deqflow {

/// Smallest eigenvalue of the symmetrised input.
double smallest_eigenvalue(const Matrix& M);

/// ||M - M^T||_F / max(||M||_F, eps).
double symmetry_defect(const Matrix& M);

/// Matrix norm induced by the vector 1-norm: max column absolute sum.
double induced_one_norm(const Matrix& M);

/// Smallest singular value (the min(rows, cols)-th largest).
double smallest_singular_value(const Matrix& M);

/// Numerical rank via SVD with the usual max-dim * eps * sigma_max cutoff.
Index numerical_rank(const Matrix& M);

/// Moore-Penrose pseudoinverse via thin SVD.
Matrix pseudo_inverse(const Matrix& M);

/// Column-major vectorisation.
Vector vectorize(const Matrix& M);

/// Inverse of vectorize given the target shape.
Matrix unvectorize(const Vector& v, Index rows, Index cols);

} // namespace deqflow
