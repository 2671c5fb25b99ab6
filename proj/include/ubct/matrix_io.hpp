#pragma once

#include "ubct/types.hpp"

#include <filesystem>

namespace ubct::io {

// Binary matrix file, little-endian:
//   bytes 0..7   magic "UBCTMAT1"
//   u64 rows, u64 cols
//   rows*cols f64, row-major
// Binary label file:
//   bytes 0..7   magic "UBCTLBL1"
//   u64 count
//   count i32
void write_matrix(const std::filesystem::path& path, const Matrix& m);
Matrix read_matrix(const std::filesystem::path& path);

void write_labels(const std::filesystem::path& path, const Labels& labels);
Labels read_labels(const std::filesystem::path& path);

/// Comma-separated, one row per line, `%.17g`.
void write_matrix_csv(const std::filesystem::path& path, const Matrix& m);
Matrix read_matrix_csv(const std::filesystem::path& path);

}  // namespace ubct::io
