#pragma once

#include <Eigen/Core>

#include <array>
#include <cstddef>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace cranio {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Tri = std::array<int, 3>;
using Tet = std::array<int, 4>;

/// Thrown when inputs violate an operation's preconditions.
class InvalidInput : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Thrown when a numerical or geometric construction cannot be completed.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Worker count: hardware concurrency capped by CRANIO_EIT_THREADS.
int worker_count();

/// Runs body(i) for i in [0, n). Work is split into contiguous chunks so the
/// assignment of indices to workers depends only on n and the worker count;
/// callers write into per-index slots and reduce in index order afterwards.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

inline double signed_volume(const Vec3& a, const Vec3& b, const Vec3& c, const Vec3& d) {
  return (b - a).cross(c - a).dot(d - a) / 6.0;
}

inline double triangle_area(const Vec3& a, const Vec3& b, const Vec3& c) {
  return 0.5 * (b - a).cross(c - a).norm();
}

}  // namespace cranio
