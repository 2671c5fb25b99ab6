#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <vector>

namespace ubct {

/// Row-major so that one row is one sample, matching the on-disk layout.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic>;

/// Rows are unit-L2-norm embeddings.
using FeatureMatrix = Matrix;

using ClassId = int;
using Labels = std::vector<ClassId>;

/// Normalizes every row to unit L2 norm in place. Rows with norm below
/// `min_norm` raise NumericalError.
void normalize_rows(Matrix& m, double min_norm = 1e-12);

/// Gathers the given rows of `m` into a new matrix.
Matrix gather_rows(const Matrix& m, const std::vector<std::size_t>& rows);

}  // namespace ubct
