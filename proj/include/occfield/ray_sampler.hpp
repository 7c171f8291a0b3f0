#pragma once

#include <cmath>
#include <random>
#include <stdexcept>
#include <vector>

#include <Eigen/Core>

#include "occfield/contraction.hpp"
#include "occfield/geometry.hpp"

namespace occfield {

enum class SampleMode { Stratified, Uniform };

/// Per-ray contraction bound: half the inside-region chord seen along the ray
/// direction. Invariant under positive rescaling of d.
inline double ray_bound(const Ray& ray, const ContractionParams& params) {
  const double norm = ray.dir.norm();
  if (!(norm > 0.0)) throw std::invalid_argument("ray_bound: zero direction");
  const Eigen::Vector3d l = params.edge_lengths();
  const Eigen::Vector3d s = ray.dir.cwiseProduct(l);
  return s.norm() / (2.0 * norm);
}

/// Sample count along a ray: one sample per voxel step of the linear region,
/// extended over the whole contracted span.
inline int sample_count(double r_b_ray, double alpha, double voxel_size) {
  if (!(voxel_size > 0.0)) throw std::invalid_argument("sample_count: voxel size must be > 0");
  // tiny slack so exactly-integer quotients do not ceil up
  const double raw = 2.0 * r_b_ray / (alpha * voxel_size);
  return std::max(2, static_cast<int>(std::ceil(raw - 1e-9)));
}

/// Metric sample positions along a ray plus their contracted-grid lookups.
/// t is measured in meters along the normalized direction from the ray
/// origin, strictly ascending. The last interval repeats the previous one.
struct RaySamples {
  int count = 0;
  double r_b = 0;
  std::vector<double> t;
  std::vector<double> delta;
  std::vector<Eigen::Vector3d> points_contracted;
};

namespace detail {
inline constexpr double kSampleClip = 1e-4;  // keeps u -> t finite at the far end
}

/// Draws L values in parameterized [0,1) (stratified or midpoint), maps them
/// through the scalar inverse contraction with the per-ray bound, and fills
/// the contracted lookup points. Fixed rng state gives a bit-identical
/// sample sequence.
inline void sample_ray(const Ray& ray, const ContractionParams& params, double voxel_size,
                       SampleMode mode, std::mt19937_64& rng, RaySamples& out) {
  const double r_b = ray_bound(ray, params);
  const int L = sample_count(r_b, params.alpha, voxel_size);
  out.count = L;
  out.r_b = r_b;
  out.t.resize(L);
  out.delta.resize(L);
  out.points_contracted.resize(L);

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int k = 0; k < L; ++k) {
    double jitter = mode == SampleMode::Stratified ? unit(rng) : 0.5;
    double u = (k + jitter) / L;
    u = std::clamp(u, detail::kSampleClip, 1.0 - detail::kSampleClip);
    out.t[k] = invert_scalar(u, r_b, params.alpha, params.a, params.b);
  }
  for (int k = 0; k + 1 < L; ++k) out.delta[k] = out.t[k + 1] - out.t[k];
  out.delta[L - 1] = L >= 2 ? out.delta[L - 2] : 0.0;

  const Eigen::Vector3d d_hat = ray.dir.normalized();
  for (int k = 0; k < L; ++k)
    out.points_contracted[k] = contract_point(ray.origin + out.t[k] * d_hat, params);
}

}  // namespace occfield
