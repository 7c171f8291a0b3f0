#pragma once

#include <cmath>
#include <cstdio>
#include <limits>
#include <stdexcept>
#include <utility>

#include <Eigen/Core>

namespace occfield {

/// Solves the C1-continuity conditions at the inside/outside seam for the
/// piecewise contraction and returns (a, b).
inline std::pair<double, double> derive_constants(double alpha) {
  if (!std::isfinite(alpha) || alpha <= 0.0 || alpha >= 1.0)
    throw std::invalid_argument("contraction alpha must lie in (0, 1)");
  const double a = (1.0 - alpha) * (1.0 - alpha) / alpha;
  const double b = (1.0 - 2.0 * alpha) / alpha;
  return {a, b};
}

/// Bounded reparameterization of ego space. The inside box maps linearly to
/// the central |c| <= alpha part of the (-1,1)^3 cube, everything beyond is
/// compressed toward the cube boundary. All math in double; the roundtrip has
/// to survive coordinates ~1e6x the inside bound.
struct ContractionParams {
  double alpha = 2.0 / 3.0;
  Eigen::Vector3d inside_min{-40.0, -40.0, -1.0};
  Eigen::Vector3d inside_max{40.0, 40.0, 5.4};
  double a = 1.0 / 6.0;
  double b = -0.5;

  static ContractionParams make(double alpha, const Eigen::Vector3d& inside_min,
                                const Eigen::Vector3d& inside_max) {
    auto [a, b] = derive_constants(alpha);
    if (alpha == 0.5)
      throw std::invalid_argument(
          "alpha = 0.5 degenerates the outer contraction branch (b = 0); pick a nearby value");
    ContractionParams p;
    p.alpha = alpha;
    p.a = a;
    p.b = b;
    p.inside_min = inside_min;
    p.inside_max = inside_max;
    for (int i = 0; i < 3; ++i)
      if (!(inside_max[i] - inside_min[i] > 0.0))
        throw std::invalid_argument("inside region must have positive extent on every axis");
    return p;
  }

  Eigen::Vector3d center() const { return 0.5 * (inside_min + inside_max); }
  Eigen::Vector3d edge_lengths() const { return inside_max - inside_min; }
  Eigen::Vector3d half_extents() const { return 0.5 * (inside_max - inside_min); }
};

namespace detail {
// Largest double below 1. Output of the contraction is clamped here so
// |f(r)| < 1 holds for every finite r, including magnitudes where
// a/(|r'|+b) underflows.
inline constexpr double kOneBelow = 1.0 - std::numeric_limits<double>::epsilon() / 2;
}  // namespace detail

/// Scalar contraction with bound r_b: f(r) = alpha*r/r_b inside, compressed
/// outside. Odd, strictly increasing, |f| < 1.
inline double contract_scalar(double r, double r_b, double alpha, double a, double b) {
  if (!std::isfinite(r)) throw std::invalid_argument("contract_scalar: non-finite input");
  const double rn = r / r_b;
  const double mag = std::abs(rn);
  double out;
  if (mag <= 1.0)
    out = alpha * rn;
  else
    out = std::copysign(1.0 - a / (mag + b), rn);
  if (std::abs(out) > detail::kOneBelow) out = std::copysign(detail::kOneBelow, out);
  return out;
}

/// Inverse of contract_scalar. Only defined for |c| < 1.
inline double invert_scalar(double c, double r_b, double alpha, double a, double b) {
  const double mag = std::abs(c);
  if (!(mag < 1.0)) throw std::domain_error("invert_scalar: |c| must be < 1");
  if (mag <= alpha) return r_b * (c / alpha);
  const double rn = a / (1.0 - mag) - b;
  return std::copysign(r_b * rn, c);
}

/// d f / d r. Continuous across the seam by construction of (a, b).
inline double contract_scalar_derivative(double r, double r_b, double alpha, double a, double b) {
  const double mag = std::abs(r / r_b);
  if (mag <= 1.0) return alpha / r_b;
  const double q = mag + b;
  return a / (q * q * r_b);
}

/// Per-axis contraction. r is measured from the inside-region center.
inline double contract_axis(double r, const ContractionParams& p, int axis) {
  return contract_scalar(r, p.half_extents()[axis], p.alpha, p.a, p.b);
}

inline double invert_axis(double c, const ContractionParams& p, int axis) {
  return invert_scalar(c, p.half_extents()[axis], p.alpha, p.a, p.b);
}

/// Ego-frame point -> parameterized cube (-1,1)^3, componentwise after
/// recentering on the inside region.
inline Eigen::Vector3d contract_point(const Eigen::Vector3d& p_ego, const ContractionParams& p) {
  const Eigen::Vector3d r = p_ego - p.center();
  const Eigen::Vector3d h = p.half_extents();
  return {contract_scalar(r.x(), h.x(), p.alpha, p.a, p.b),
          contract_scalar(r.y(), h.y(), p.alpha, p.a, p.b),
          contract_scalar(r.z(), h.z(), p.alpha, p.a, p.b)};
}

inline Eigen::Vector3d invert_point(const Eigen::Vector3d& c, const ContractionParams& p) {
  const Eigen::Vector3d h = p.half_extents();
  return Eigen::Vector3d{invert_scalar(c.x(), h.x(), p.alpha, p.a, p.b),
                         invert_scalar(c.y(), h.y(), p.alpha, p.a, p.b),
                         invert_scalar(c.z(), h.z(), p.alpha, p.a, p.b)} +
         p.center();
}

}  // namespace occfield
