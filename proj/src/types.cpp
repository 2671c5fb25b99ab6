#include "ubct/types.hpp"

#include "ubct/errors.hpp"

#include <string>

namespace ubct {

void normalize_rows(Matrix& m, double min_norm) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    const double n = m.row(i).norm();
    if (!(n >= min_norm)) {
      throw NumericalError("row " + std::to_string(i) + " has norm " + std::to_string(n) +
                           " and cannot be normalized");
    }
    m.row(i) /= n;
  }
}

Matrix gather_rows(const Matrix& m, const std::vector<std::size_t>& rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.row(static_cast<Eigen::Index>(i)) = m.row(static_cast<Eigen::Index>(rows[i]));
  }
  return out;
}

}  // namespace ubct
