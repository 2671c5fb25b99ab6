#include "ubct/hashing.hpp"

#include "ubct/errors.hpp"

#include <cmath>

namespace ubct {

void Fnv1a::update(const void* data, std::size_t bytes) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < bytes; ++i) {
    state_ ^= p[i];
    state_ *= 0x100000001b3ULL;
  }
}

void Fnv1a::update(const Matrix& m) {
  const std::int64_t dims[2] = {m.rows(), m.cols()};
  update(dims, sizeof(dims));
  update(m.data(), sizeof(double) * static_cast<std::size_t>(m.size()));
}

void Fnv1a::update(const Vector& v) {
  const std::int64_t n = v.size();
  update(&n, sizeof(n));
  update(v.data(), sizeof(double) * static_cast<std::size_t>(v.size()));
}

std::uint64_t hash_matrix(const Matrix& m) {
  Fnv1a h;
  h.update(m);
  return h.digest();
}

}  // namespace ubct
