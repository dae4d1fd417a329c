#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>

namespace partex {

/// Base class for all recoverable toolkit errors (load failures, contract
/// violations that depend on data rather than on programmer error).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;

/// Single RNG type used everywhere so seeded runs are reproducible.
using Rng = std::mt19937_64;

struct Aabb {
  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
  Vec3 hi = Vec3::Constant(-std::numeric_limits<double>::infinity());

  void expand(const Vec3& p) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  void expand(const Aabb& b) {
    lo = lo.cwiseMin(b.lo);
    hi = hi.cwiseMax(b.hi);
  }
  bool empty() const { return !(lo.array() <= hi.array()).all(); }
  Vec3 center() const { return 0.5 * (lo + hi); }
  Vec3 extent() const { return hi - lo; }
  double diagonal() const { return empty() ? 0.0 : extent().norm(); }
  /// Squared distance from p to the box (0 inside).
  double distance2(const Vec3& p) const {
    Vec3 d = (lo - p).cwiseMax(p - hi).cwiseMax(Vec3::Zero());
    return d.squaredNorm();
  }
};

}  // namespace partex
