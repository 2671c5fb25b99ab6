#pragma once

#include "ubct/types.hpp"

#include <cstdint>
#include <span>

namespace ubct {

/// 64-bit FNV-1a over raw bytes.
class Fnv1a {
 public:
  void update(const void* data, std::size_t bytes);
  void update(const Matrix& m);
  void update(const Vector& v);
  std::uint64_t digest() const noexcept { return state_; }

 private:
  std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

std::uint64_t hash_matrix(const Matrix& m);

}  // namespace ubct
