#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "biascope/error.hpp"

namespace biascope {

using Vector = std::vector<double>;

inline double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw Error(ErrorCode::DimensionMismatch,
                "dot of length " + std::to_string(a.size()) + " and " + std::to_string(b.size()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double l2_norm(std::span<const double> v) { return std::sqrt(dot(v, v)); }

inline constexpr double kZeroNormThreshold = 1e-12;

/// Projects v onto the unit sphere. Zero vectors are rejected rather than
/// patched up: they mean an upstream encoder produced garbage.
inline Vector normalize_embedding(std::span<const double> v) {
  const double n = l2_norm(v);
  if (!(n >= kZeroNormThreshold)) {
    throw Error(ErrorCode::ZeroVector, "cannot normalize vector with norm " + std::to_string(n));
  }
  Vector out(v.begin(), v.end());
  for (double& x : out) x /= n;
  return out;
}

// Ingestion normalization: vectors already on the sphere (to a few ulps) pass
// through untouched so that load/save/load is exact.
inline Vector ensure_unit(std::span<const double> v) {
  const double n = l2_norm(v);
  if (std::abs(n - 1.0) <= 1e-14) return Vector(v.begin(), v.end());
  return normalize_embedding(v);
}

// y += a * x
inline void axpy(double a, std::span<const double> x, std::span<double> y) {
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += a * x[i];
}

}  // namespace biascope
