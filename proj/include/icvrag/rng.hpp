#pragma once

#include "icvrag/tensor.hpp"

#include <cstdint>
#include <random>
#include <string_view>

namespace icvrag {

struct RngSeed {
  std::uint64_t value = 0;
};

using Rng = std::mt19937_64;

inline Rng make_rng(RngSeed seed, std::uint64_t stream = 0) {
  // splitmix64 finalizer so adjacent streams land far apart
  std::uint64_t z = seed.value + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return Rng(z ^ (z >> 31));
}

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Uniform(-bound, bound) entries drawn in row-major order.
template <typename Scalar>
Matrix<Scalar> uniform_matrix(Index rows, Index cols, double bound, Rng& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  Matrix<Scalar> m(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) m(i, j) = static_cast<Scalar>(dist(rng));
  return m;
}

}  // namespace icvrag
