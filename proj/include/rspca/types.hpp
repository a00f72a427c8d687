#pragma once

// Shared scalar-templated dense types, error classes and small numeric
// helpers used across the library.  Everything is built on Eigen dense
// matrices; complex quantities use std::complex<Scalar>.

#include <Eigen/Dense>

#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <string>

namespace rspca {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
using CMatrix = Eigen::Matrix<std::complex<Scalar>, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Scalar>
using CVector = Eigen::Matrix<std::complex<Scalar>, Eigen::Dynamic, 1>;

using Index = Eigen::Index;

// Thrown for malformed configuration or input data (CLI exit code 2).
struct InvalidInput : std::invalid_argument {
  explicit InvalidInput(const std::string& what) : std::invalid_argument(what) {}
};

// Thrown when a numerical procedure cannot deliver a trustworthy result
// (CLI exit code 3).
struct NumericalFailure : std::runtime_error {
  explicit NumericalFailure(const std::string& what) : std::runtime_error(what) {}
};

// Wraps an angle into the half-open interval (-pi, pi].
template <typename Scalar>
Scalar wrap_phase(Scalar x) {
  constexpr Scalar pi = std::numbers::pi_v<Scalar>;
  Scalar w = std::remainder(x, Scalar{2} * pi);
  if (w <= -pi) w = pi;  // remainder may return exactly -pi
  return w;
}

// splitmix64 step; used to derive independent substream seeds from one
// user-facing seed so that components draw decoupled random numbers.
inline std::uint64_t split_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

}  // namespace rspca
