#include "ubct/matrix_io.hpp"

#include "ubct/errors.hpp"

#include <array>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>

namespace ubct::io {
namespace {

constexpr std::array<char, 8> kMatrixMagic = {'U', 'B', 'C', 'T', 'M', 'A', 'T', '1'};
constexpr std::array<char, 8> kLabelMagic = {'U', 'B', 'C', 'T', 'L', 'B', 'L', '1'};

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  return out;
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  return in;
}

template <typename T>
void put(std::ofstream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::ifstream& in, const std::filesystem::path& path) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) {
    throw IoError("truncated file '" + path.string() + "'");
  }
  return v;
}

void expect_magic(std::ifstream& in, const std::array<char, 8>& magic,
                  const std::filesystem::path& path) {
  std::array<char, 8> got{};
  if (!in.read(got.data(), got.size()) || got != magic) {
    throw IoError("bad magic in '" + path.string() + "'");
  }
}

}  // namespace

void write_matrix(const std::filesystem::path& path, const Matrix& m) {
  auto out = open_out(path);
  out.write(kMatrixMagic.data(), kMatrixMagic.size());
  put<std::uint64_t>(out, static_cast<std::uint64_t>(m.rows()));
  put<std::uint64_t>(out, static_cast<std::uint64_t>(m.cols()));
  out.write(reinterpret_cast<const char*>(m.data()),
            static_cast<std::streamsize>(sizeof(double) * m.size()));
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

Matrix read_matrix(const std::filesystem::path& path) {
  auto in = open_in(path);
  expect_magic(in, kMatrixMagic, path);
  const auto rows = get<std::uint64_t>(in, path);
  const auto cols = get<std::uint64_t>(in, path);
  if (rows > (1ULL << 32) || cols > (1ULL << 32)) {
    throw IoError("implausible matrix dimensions in '" + path.string() + "'");
  }
  Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  if (!in.read(reinterpret_cast<char*>(m.data()),
               static_cast<std::streamsize>(sizeof(double) * m.size()))) {
    throw IoError("truncated matrix payload in '" + path.string() + "'");
  }
  return m;
}

void write_labels(const std::filesystem::path& path, const Labels& labels) {
  auto out = open_out(path);
  out.write(kLabelMagic.data(), kLabelMagic.size());
  put<std::uint64_t>(out, labels.size());
  for (ClassId c : labels) put<std::int32_t>(out, static_cast<std::int32_t>(c));
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

Labels read_labels(const std::filesystem::path& path) {
  auto in = open_in(path);
  expect_magic(in, kLabelMagic, path);
  const auto n = get<std::uint64_t>(in, path);
  if (n > (1ULL << 32)) throw IoError("implausible label count in '" + path.string() + "'");
  Labels labels(n);
  for (auto& c : labels) c = get<std::int32_t>(in, path);
  return labels;
}

void write_matrix_csv(const std::filesystem::path& path, const Matrix& m) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  char buf[32];
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      std::snprintf(buf, sizeof(buf), "%.17g", m(i, j));
      if (j) out << ',';
      out << buf;
    }
    out << '\n';
  }
}

Matrix read_matrix_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      try {
        row.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw IoError("non-numeric cell '" + cell + "' in '" + path.string() + "'");
      }
    }
    if (!rows.empty() && row.size() != rows.front().size()) {
      throw IoError("ragged CSV rows in '" + path.string() + "'");
    }
    rows.push_back(std::move(row));
  }
  const auto cols = rows.empty() ? 0 : rows.front().size();
  Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < cols; ++j)
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  return m;
}

}  // namespace ubct::io
