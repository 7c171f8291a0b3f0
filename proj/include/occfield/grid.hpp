#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "occfield/contraction.hpp"

namespace occfield {

/// Dense voxel field over the contracted cube [-1,1]^3. Cell-centered: voxel
/// (i,j,k) covers [-1 + i*h, -1 + (i+1)*h) with h = 2/N per axis, so when
/// inside_dims/dims == alpha the central block lands exactly on the linear
/// part of the contraction.
///
/// opacity_raw is unconstrained; the renderer applies sigmoid (weight mode)
/// or softplus (density mode) after interpolation. semantic_raw holds one
/// unnormalized logit per class, softmax only ever happens inside the loss.
struct OccupancyGrid {
  Eigen::Vector3i dims{0, 0, 0};
  Eigen::Vector3i inside_dims{0, 0, 0};
  int num_classes = 0;
  ContractionParams contraction;
  double voxel_size = 0;  // metric edge of an inside voxel

  std::vector<float> opacity_raw;
  std::vector<float> semantic_raw;  // dims-major, classes innermost

  static OccupancyGrid make(const Eigen::Vector3i& dims, const Eigen::Vector3i& inside_dims,
                            int num_classes, const ContractionParams& contraction,
                            float opacity_init_raw) {
    OccupancyGrid g;
    g.dims = dims;
    g.inside_dims = inside_dims;
    g.num_classes = num_classes;
    g.contraction = contraction;
    for (int i = 0; i < 3; ++i) {
      if (dims[i] < 2) throw std::invalid_argument("grid dims must be >= 2 on every axis");
      if (inside_dims[i] < 1 || inside_dims[i] > dims[i])
        throw std::invalid_argument("inside_dims must be within dims");
    }
    const Eigen::Vector3d l = contraction.edge_lengths();
    const double dv = l.x() / inside_dims.x();
    for (int i = 0; i < 3; ++i) {
      const double dvi = l[i] / inside_dims[i];
      if (std::abs(dvi - dv) > 1e-9 * dv)
        throw std::invalid_argument("inside voxels must be cubic (l_axis / n_axis equal per axis)");
    }
    g.voxel_size = dv;
    g.opacity_raw.assign(g.voxel_count(), opacity_init_raw);
    g.semantic_raw.assign(g.voxel_count() * std::max(num_classes, 0), 0.f);
    return g;
  }

  size_t voxel_count() const {
    return static_cast<size_t>(dims.x()) * dims.y() * dims.z();
  }
  /// x-major linear index: x slowest, z fastest.
  size_t index(int ix, int iy, int iz) const {
    return (static_cast<size_t>(ix) * dims.y() + iy) * dims.z() + iz;
  }
  /// Contracted-cube coordinate of a voxel center.
  Eigen::Vector3d voxel_center(int ix, int iy, int iz) const {
    return {-1.0 + (ix + 0.5) * 2.0 / dims.x(), -1.0 + (iy + 0.5) * 2.0 / dims.y(),
            -1.0 + (iz + 0.5) * 2.0 / dims.z()};
  }
  /// Ego-frame center of an inside-block voxel, (0,0,0) being the lowest corner
  /// of the inside region.
  Eigen::Vector3d inside_voxel_center_ego(int ix, int iy, int iz) const {
    const Eigen::Vector3d lo = contraction.inside_min;
    return {lo.x() + (ix + 0.5) * voxel_size, lo.y() + (iy + 0.5) * voxel_size,
            lo.z() + (iz + 0.5) * voxel_size};
  }
  size_t inside_voxel_count() const {
    return static_cast<size_t>(inside_dims.x()) * inside_dims.y() * inside_dims.z();
  }
  /// Offset of the inside block inside the full grid.
  Eigen::Vector3i inside_offset() const { return (dims - inside_dims) / 2; }
};

/// The 8 corner voxels and weights that interpolate one contracted-cube
/// query point. Shared by the forward gather and the gradient scatter so the
/// two can never disagree.
struct TrilinearStencil {
  std::array<size_t, 8> index;
  std::array<double, 8> weight;
};

inline TrilinearStencil make_stencil(const OccupancyGrid& g, const Eigen::Vector3d& p_contracted) {
  TrilinearStencil s;
  double f[3];
  int i0[3], i1[3];
  for (int a = 0; a < 3; ++a) {
    const double h = 2.0 / g.dims[a];
    // voxel-center coordinates; contraction keeps |c| < 1 so only roundoff
    // ever needs the clamp
    double x = (p_contracted[a] + 1.0) / h - 0.5;
    x = std::clamp(x, 0.0, static_cast<double>(g.dims[a] - 1));
    i0[a] = static_cast<int>(std::floor(x));
    i0[a] = std::min(i0[a], g.dims[a] - 1);
    i1[a] = std::min(i0[a] + 1, g.dims[a] - 1);
    f[a] = x - i0[a];
  }
  int n = 0;
  for (int dx = 0; dx < 2; ++dx)
    for (int dy = 0; dy < 2; ++dy)
      for (int dz = 0; dz < 2; ++dz, ++n) {
        const double w = (dx ? f[0] : 1 - f[0]) * (dy ? f[1] : 1 - f[1]) * (dz ? f[2] : 1 - f[2]);
        s.index[n] = g.index(dx ? i1[0] : i0[0], dy ? i1[1] : i0[1], dz ? i1[2] : i0[2]);
        s.weight[n] = w;
      }
  return s;
}

inline double gather(const std::vector<float>& values, const TrilinearStencil& s) {
  double acc = 0;
  for (int n = 0; n < 8; ++n) acc += s.weight[n] * values[s.index[n]];
  return acc;
}

/// Interpolated raw opacity (and logits when requested) at a contracted point.
inline double sample_trilinear(const OccupancyGrid& g, const Eigen::Vector3d& p_contracted,
                               double* semantic_out = nullptr) {
  const TrilinearStencil s = make_stencil(g, p_contracted);
  if (semantic_out) {
    for (int c = 0; c < g.num_classes; ++c) semantic_out[c] = 0.0;
    for (int n = 0; n < 8; ++n) {
      const double w = s.weight[n];
      const float* base = g.semantic_raw.data() + s.index[n] * g.num_classes;
      for (int c = 0; c < g.num_classes; ++c) semantic_out[c] += w * base[c];
    }
  }
  return gather(g.opacity_raw, s);
}

/// Per-step gradient accumulators, same layout as the grid parameters.
struct GradientBuffers {
  std::vector<double> opacity;
  std::vector<double> semantic;

  static GradientBuffers zeros(const OccupancyGrid& g) {
    GradientBuffers b;
    b.opacity.assign(g.voxel_count(), 0.0);
    b.semantic.assign(g.voxel_count() * std::max(g.num_classes, 0), 0.0);
    return b;
  }
  void zero() {
    std::fill(opacity.begin(), opacity.end(), 0.0);
    std::fill(semantic.begin(), semantic.end(), 0.0);
  }
  void add(const GradientBuffers& o) {
    for (size_t i = 0; i < opacity.size(); ++i) opacity[i] += o.opacity[i];
    for (size_t i = 0; i < semantic.size(); ++i) semantic[i] += o.semantic[i];
  }
};

/// Accumulates upstream * trilinear weight into the 8 corner slots of the
/// matching forward query.
inline void scatter_gradient(const OccupancyGrid& g, GradientBuffers& buf,
                             const Eigen::Vector3d& p_contracted, double upstream_opacity,
                             const double* upstream_semantic = nullptr) {
  const TrilinearStencil s = make_stencil(g, p_contracted);
  for (int n = 0; n < 8; ++n) {
    buf.opacity[s.index[n]] += upstream_opacity * s.weight[n];
    if (upstream_semantic) {
      double* base = buf.semantic.data() + s.index[n] * g.num_classes;
      for (int c = 0; c < g.num_classes; ++c) base[c] += upstream_semantic[c] * s.weight[n];
    }
  }
}

// ---------------------------------------------------------------------------
// Grid checkpoint format "OCCF" v1, little-endian:
//   char[4]  magic "OCCF"
//   u32      version (1)
//   u32[3]   dims, u32[3] inside_dims, u32 num_classes
//   f32      alpha, f32[3] inside_min, f32[3] inside_max
//   f32[Nx*Ny*Nz]               opacity_raw   (x-major, z fastest)
//   f32[Nx*Ny*Nz*num_classes]   semantic_raw  (class innermost)
// ---------------------------------------------------------------------------

inline void save_grid(const OccupancyGrid& g, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  auto put_u32 = [&](uint32_t v) { f.write(reinterpret_cast<const char*>(&v), 4); };
  auto put_f32 = [&](float v) { f.write(reinterpret_cast<const char*>(&v), 4); };
  f.write("OCCF", 4);
  put_u32(1);
  for (int i = 0; i < 3; ++i) put_u32(static_cast<uint32_t>(g.dims[i]));
  for (int i = 0; i < 3; ++i) put_u32(static_cast<uint32_t>(g.inside_dims[i]));
  put_u32(static_cast<uint32_t>(g.num_classes));
  put_f32(static_cast<float>(g.contraction.alpha));
  for (int i = 0; i < 3; ++i) put_f32(static_cast<float>(g.contraction.inside_min[i]));
  for (int i = 0; i < 3; ++i) put_f32(static_cast<float>(g.contraction.inside_max[i]));
  f.write(reinterpret_cast<const char*>(g.opacity_raw.data()),
          static_cast<std::streamsize>(g.opacity_raw.size() * 4));
  f.write(reinterpret_cast<const char*>(g.semantic_raw.data()),
          static_cast<std::streamsize>(g.semantic_raw.size() * 4));
  if (!f) throw std::runtime_error("short write to " + path);
}

inline OccupancyGrid load_grid(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, "OCCF", 4) != 0)
    throw std::runtime_error(path + ": not an OCCF grid file");
  auto get_u32 = [&]() {
    uint32_t v = 0;
    f.read(reinterpret_cast<char*>(&v), 4);
    return v;
  };
  auto get_f32 = [&]() {
    float v = 0;
    f.read(reinterpret_cast<char*>(&v), 4);
    return v;
  };
  const uint32_t version = get_u32();
  if (version != 1) throw std::runtime_error(path + ": unsupported OCCF version");
  Eigen::Vector3i dims, inside;
  for (int i = 0; i < 3; ++i) dims[i] = static_cast<int>(get_u32());
  for (int i = 0; i < 3; ++i) inside[i] = static_cast<int>(get_u32());
  const int num_classes = static_cast<int>(get_u32());
  const double alpha = get_f32();
  Eigen::Vector3d lo, hi;
  for (int i = 0; i < 3; ++i) lo[i] = get_f32();
  for (int i = 0; i < 3; ++i) hi[i] = get_f32();
  OccupancyGrid g = OccupancyGrid::make(dims, inside, num_classes,
                                        ContractionParams::make(alpha, lo, hi), 0.f);
  f.read(reinterpret_cast<char*>(g.opacity_raw.data()),
         static_cast<std::streamsize>(g.opacity_raw.size() * 4));
  f.read(reinterpret_cast<char*>(g.semantic_raw.data()),
         static_cast<std::streamsize>(g.semantic_raw.size() * 4));
  if (!f) throw std::runtime_error(path + ": truncated OCCF payload");
  return g;
}

}  // namespace occfield
