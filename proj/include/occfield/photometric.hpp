#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "occfield/geometry.hpp"
#include "occfield/image.hpp"

namespace occfield {

struct LossConfig {
  double beta = 0.85;        // SSIM share of the photometric mix
  double lambda = 0.05;      // semantic loss weight
  int ssim_window = 3;
  double c1 = 0.01 * 0.01;
  double c2 = 0.03 * 0.03;
  bool automask = true;

  void validate() const {
    if (!(beta >= 0.0 && beta <= 1.0)) throw std::invalid_argument("beta must be in [0,1]");
    if (!(lambda >= 0.0)) throw std::invalid_argument("lambda must be >= 0");
    if (ssim_window < 3 || ssim_window % 2 == 0)
      throw std::invalid_argument("ssim_window must be odd and >= 3");
  }
};

/// Per-pixel photometric error and which pixels it is defined on.
struct LossMap {
  int width = 0, height = 0;
  std::vector<double> loss;
  std::vector<uint8_t> valid;
};

struct WarpResult {
  Image warped;
  std::vector<uint8_t> valid;
};

/// Backprojects every target pixel with its z-depth, moves it through
/// relative_pose (source-frame ego from target-frame ego) and samples the
/// source image where it lands. Out-of-view or depth<=0 pixels are flagged
/// invalid rather than clamped.
inline WarpResult warp_adjacent(const Image& depth, const CameraModel& target_cam,
                                const CameraModel& source_cam, const Pose& relative_pose,
                                const Image& source_image) {
  if (depth.channels != 1) throw std::invalid_argument("warp_adjacent: depth must be 1-channel");
  WarpResult out;
  out.warped = Image(depth.width, depth.height, source_image.channels);
  out.valid.assign(depth.pixel_count(), 0);
  const Pose cam_from_ego = source_cam.ego_from_camera.inverse();
  for (int v = 0; v < depth.height; ++v) {
    for (int u = 0; u < depth.width; ++u) {
      const double z = depth.at(u, v, 0);
      if (!(z > 0.0) || !std::isfinite(z)) continue;
      const Eigen::Vector3d p_cam(z * (u - target_cam.cx) / target_cam.fx,
                                  z * (v - target_cam.cy) / target_cam.fy, z);
      const Eigen::Vector3d p_src_ego = relative_pose * (target_cam.ego_from_camera * p_cam);
      const Eigen::Vector3d p_src_cam = cam_from_ego * p_src_ego;
      if (!(p_src_cam.z() > 0.0)) continue;
      const double us = source_cam.fx * p_src_cam.x() / p_src_cam.z() + source_cam.cx;
      const double vs = source_cam.fy * p_src_cam.y() / p_src_cam.z() + source_cam.cy;
      const ImageSample s = bilinear_sample(source_image, us, vs);
      if (!s.valid) continue;
      for (int c = 0; c < source_image.channels; ++c) out.warped.at(u, v, c) = s.value[c];
      out.valid[static_cast<size_t>(v) * depth.width + u] = 1;
    }
  }
  return out;
}

namespace detail {

struct WindowStats {
  double mu_x = 0, mu_y = 0, var_x = 0, var_y = 0, cov = 0;
  int n = 0;
};

template <typename Visit>
inline void for_window(int u, int v, int w, int h, int half, Visit&& visit) {
  for (int dv = -half; dv <= half; ++dv)
    for (int du = -half; du <= half; ++du) {
      const int qu = u + du, qv = v + dv;
      if (qu < 0 || qv < 0 || qu >= w || qv >= h) continue;
      visit(qu, qv);
    }
}

template <typename Ok>
inline WindowStats window_stats(const Image& target, const Image& warped, int u, int v, int c,
                                int half, Ok&& ok) {
  WindowStats st;
  for_window(u, v, target.width, target.height, half, [&](int qu, int qv) {
    if (!ok(qu, qv)) return;
    st.mu_x += target.at(qu, qv, c);
    st.mu_y += warped.at(qu, qv, c);
    ++st.n;
  });
  st.mu_x /= st.n;
  st.mu_y /= st.n;
  for_window(u, v, target.width, target.height, half, [&](int qu, int qv) {
    if (!ok(qu, qv)) return;
    const double dx = target.at(qu, qv, c) - st.mu_x;
    const double dy = warped.at(qu, qv, c) - st.mu_y;
    st.var_x += dx * dx;
    st.var_y += dy * dy;
    st.cov += dx * dy;
  });
  st.var_x /= st.n;
  st.var_y /= st.n;
  st.cov /= st.n;
  return st;
}

inline double ssim_from_stats(const WindowStats& st, double c1, double c2) {
  const double n1 = 2 * st.mu_x * st.mu_y + c1;
  const double n2 = 2 * st.cov + c2;
  const double d1 = st.mu_x * st.mu_x + st.mu_y * st.mu_y + c1;
  const double d2 = st.var_x + st.var_y + c2;
  return (n1 * n2) / (d1 * d2);
}

}  // namespace detail

/// SSIM(+L1) photometric error (the beta mix), pooled with a box window over
/// the pixels that are both in-bounds and valid. Pixels whose own warp was
/// invalid produce no loss. branch_flags, when given, records the per-pixel
/// non-smooth branch choices (L1 signs, SSIM clamp) for finite-difference
/// guards.
inline LossMap photometric_error(const Image& target, const Image& warped,
                                 const std::vector<uint8_t>& valid, const LossConfig& cfg,
                                 std::vector<uint16_t>* branch_flags = nullptr) {
  if (!target.same_shape(warped)) throw std::invalid_argument("photometric_error: shape mismatch");
  cfg.validate();
  const int w = target.width, h = target.height, C = target.channels;
  const int half = cfg.ssim_window / 2;
  LossMap out;
  out.width = w;
  out.height = h;
  out.loss.assign(target.pixel_count(), 0.0);
  out.valid.assign(target.pixel_count(), 0);
  if (branch_flags) branch_flags->assign(target.pixel_count(), 0);
  auto ok = [&](int u, int v) {
    return valid.empty() || valid[static_cast<size_t>(v) * w + u] != 0;
  };
  for (int v = 0; v < h; ++v) {
    for (int u = 0; u < w; ++u) {
      if (!ok(u, v)) continue;
      double ssim_sum = 0, l1_sum = 0;
      uint16_t flags = 0;
      for (int c = 0; c < C; ++c) {
        ssim_sum += detail::ssim_from_stats(detail::window_stats(target, warped, u, v, c, half, ok),
                                            cfg.c1, cfg.c2);
        const double diff = warped.at(u, v, c) - target.at(u, v, c);
        l1_sum += std::abs(diff);
        flags |= static_cast<uint16_t>((diff > 0 ? 2 : (diff < 0 ? 1 : 0)) << (2 * c));
      }
      const double dissim_raw = (1.0 - ssim_sum / C) * 0.5;
      if (dissim_raw <= 0.0 || dissim_raw >= 1.0) flags |= 1u << 12;
      const double dissim = std::clamp(dissim_raw, 0.0, 1.0);
      out.loss[static_cast<size_t>(v) * w + u] = cfg.beta * dissim + (1.0 - cfg.beta) * l1_sum / C;
      out.valid[static_cast<size_t>(v) * w + u] = 1;
      if (branch_flags) (*branch_flags)[static_cast<size_t>(v) * w + u] = flags;
    }
  }
  return out;
}

/// d(sum_p upstream[p] * loss[p]) / d(warped pixel values). The SSIM window
/// couples each loss center to its neighbourhood, so gradients scatter over
/// the window. When the dissimilarity clamp saturates, the SSIM branch goes
/// flat and only the L1 term contributes.
inline void photometric_error_backward(const Image& target, const Image& warped,
                                       const std::vector<uint8_t>& valid, const LossConfig& cfg,
                                       const std::vector<double>& upstream,
                                       std::vector<double>& g_warped) {
  if (!target.same_shape(warped)) throw std::invalid_argument("photometric_error: shape mismatch");
  const int w = target.width, h = target.height, C = target.channels;
  const int half = cfg.ssim_window / 2;
  g_warped.assign(static_cast<size_t>(w) * h * C, 0.0);
  auto ok = [&](int u, int v) {
    return valid.empty() || valid[static_cast<size_t>(v) * w + u] != 0;
  };
  std::array<detail::WindowStats, 4> stats{};
  for (int v = 0; v < h; ++v) {
    for (int u = 0; u < w; ++u) {
      const double g_up = upstream[static_cast<size_t>(v) * w + u];
      if (g_up == 0.0 || !ok(u, v)) continue;

      double ssim_sum = 0;
      for (int c = 0; c < C; ++c) {
        stats[c] = detail::window_stats(target, warped, u, v, c, half, ok);
        ssim_sum += detail::ssim_from_stats(stats[c], cfg.c1, cfg.c2);
      }
      const double dissim = (1.0 - ssim_sum / C) * 0.5;
      const bool clamped = dissim <= 0.0 || dissim >= 1.0;

      for (int c = 0; c < C; ++c) {
        const double diff = warped.at(u, v, c) - target.at(u, v, c);
        const double sign = diff > 0 ? 1.0 : (diff < 0 ? -1.0 : 0.0);
        g_warped[(static_cast<size_t>(v) * w + u) * C + c] += g_up * (1.0 - cfg.beta) / C * sign;

        if (clamped || cfg.beta == 0.0) continue;
        const detail::WindowStats& st = stats[c];
        const double n1 = 2 * st.mu_x * st.mu_y + cfg.c1;
        const double n2 = 2 * st.cov + cfg.c2;
        const double d1 = st.mu_x * st.mu_x + st.mu_y * st.mu_y + cfg.c1;
        const double d2 = st.var_x + st.var_y + cfg.c2;
        const double dd1d2 = d1 * d2;
        detail::for_window(u, v, w, h, half, [&](int qu, int qv) {
          if (!ok(qu, qv)) return;
          const double iq = target.at(qu, qv, c);
          const double yq = warped.at(qu, qv, c);
          const double dn1 = 2 * st.mu_x / st.n;
          const double dn2 = 2 * (iq - st.mu_x) / st.n;
          const double dd1 = 2 * st.mu_y / st.n;
          const double dd2 = 2 * (yq - st.mu_y) / st.n;
          const double dssim =
              ((dn1 * n2 + n1 * dn2) * dd1d2 - n1 * n2 * (dd1 * d2 + d1 * dd2)) / (dd1d2 * dd1d2);
          g_warped[(static_cast<size_t>(qv) * w + qu) * C + c] +=
              g_up * cfg.beta * (-0.5 / C) * dssim;
        });
      }
    }
  }
}

struct MinReprojection {
  std::vector<double> loss;
  std::vector<uint8_t> mask;  // pixels that survive validity + automask
  std::vector<int> source;    // argmin source index, -1 where masked
};

/// Per-pixel minimum over source-frame losses, with the stationary-pixel
/// automask: a pixel is kept only if some warped loss beats every identity
/// (unwarped) loss. Ties between sources go to the lower index.
inline MinReprojection min_reprojection(const std::vector<LossMap>& losses,
                                        const std::vector<LossMap>& identity_losses,
                                        bool automask) {
  if (losses.empty()) throw std::invalid_argument("min_reprojection: need at least one source");
  const size_t n = losses[0].loss.size();
  MinReprojection out;
  out.loss.assign(n, 0.0);
  out.mask.assign(n, 0);
  out.source.assign(n, -1);
  for (size_t p = 0; p < n; ++p) {
    double best = std::numeric_limits<double>::infinity();
    int best_s = -1;
    for (size_t s = 0; s < losses.size(); ++s) {
      if (!losses[s].valid[p]) continue;
      if (losses[s].loss[p] < best) {
        best = losses[s].loss[p];
        best_s = static_cast<int>(s);
      }
    }
    if (best_s < 0) continue;
    if (automask) {
      double best_id = std::numeric_limits<double>::infinity();
      for (const auto& id : identity_losses)
        if (id.valid[p]) best_id = std::min(best_id, id.loss[p]);
      if (!(best < best_id)) continue;
    }
    out.loss[p] = best;
    out.mask[p] = 1;
    out.source[p] = best_s;
  }
  return out;
}

/// Total objective: per-camera photometric mean plus weighted semantic mean,
/// summed over cameras.
inline double total_loss(const std::vector<double>& per_camera_photometric,
                         const std::vector<double>& per_camera_semantic, double lambda) {
  double total = 0;
  for (size_t i = 0; i < per_camera_photometric.size(); ++i) {
    total += per_camera_photometric[i];
    if (i < per_camera_semantic.size()) total += lambda * per_camera_semantic[i];
  }
  return total;
}

}  // namespace occfield
