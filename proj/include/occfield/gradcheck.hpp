#pragma once

#include <random>
#include <vector>

#include "occfield/fit.hpp"
#include "occfield/synth.hpp"

namespace occfield {

struct GradCheckReport {
  int renderer_tested = 0;
  double renderer_max_rel_err = 0;
  int full_tested = 0;
  double full_max_rel_err = 0;
  int skipped_branch_changes = 0;
  int requested_params = 200;
  size_t fixture_params = 0;

  bool pass(double tol_renderer = 1e-3, double tol_full = 5e-3) const {
    return renderer_tested > 0 && full_tested >= requested_params &&
           renderer_max_rel_err < tol_renderer && full_max_rel_err < tol_full;
  }
};

struct GradCheckFixture {
  SceneSpec scene;
  FrameSet frames;
  FitConfig config;
};

namespace gradcheckdetail {

inline CameraModel small_camera(const std::string& name, double yaw_deg, double pitch_deg) {
  CameraModel cam;
  cam.name = name;
  cam.width = 16;
  cam.height = 12;
  cam.fx = cam.fy = 13.0;
  cam.cx = 7.5;
  cam.cy = 5.5;
  // camera x right, y down, z forward; ego x right, y forward, z up
  Pose base;
  base.rotation << 1, 0, 0, 0, 0, 1, 0, -1, 0;
  const Pose yaw = Pose::axis_rotation(2, yaw_deg * M_PI / 180.0);
  Pose pitch = Pose::axis_rotation(0, pitch_deg * M_PI / 180.0);
  Pose mount = yaw * pitch;
  cam.ego_from_camera.rotation = mount.rotation * base.rotation;
  cam.ego_from_camera.translation = Eigen::Vector3d(0.05 * yaw_deg / 10.0, 0.2, 0.35);
  return cam;
}

}  // namespace gradcheckdetail

/// Small textured scene + tiny grid used by the finite-difference checks:
/// 12x12x6 inside voxels, two 16x12 cameras, 5 frames.
inline GradCheckFixture make_gradcheck_fixture(bool with_semantics = false) {
  GradCheckFixture fx;
  Primitive ground;
  ground.kind = Primitive::Kind::Box;
  ground.pose.translation = {0, 2, -1.15};
  ground.size = {4.5, 4.5, 0.5};
  ground.texture.kind = Texture::Kind::Checker;
  ground.texture.period = 0.57;
  ground.texture.color_a = {0.12, 0.10, 0.12};
  ground.texture.color_b = {0.88, 0.85, 0.80};
  ground.category_id = 10;
  fx.scene.primitives.push_back(ground);

  Primitive block;
  block.kind = Primitive::Kind::Box;
  block.pose.translation = {0.45, 2.1, -0.55};
  block.size = {0.9, 0.9, 0.7};
  block.texture.kind = Texture::Kind::Stripes;
  block.texture.period = 0.31;
  block.texture.color_a = {0.85, 0.3, 0.2};
  block.texture.color_b = {0.1, 0.2, 0.75};
  block.category_id = 3;
  fx.scene.primitives.push_back(block);

  Primitive backdrop;
  backdrop.kind = Primitive::Kind::Sphere;
  backdrop.pose.translation = {0, 2, 0};
  backdrop.radius = 60.0;
  backdrop.texture.kind = Texture::Kind::Noise;
  backdrop.texture.period = 9.0;
  backdrop.texture.seed = 5;
  backdrop.category_id = kUncertainLabel;
  fx.scene.primitives.push_back(backdrop);

  fx.scene.rig.push_back(gradcheckdetail::small_camera("cam_l", 9.0, -7.0));
  fx.scene.rig.push_back(gradcheckdetail::small_camera("cam_r", -11.0, -6.0));
  for (int f = 0; f < 5; ++f) {
    Pose p;
    p.translation = {0.015 * f, -0.45 + 0.23 * f, 0};
    fx.scene.trajectory.push_back(p);
  }

  fx.frames.cameras = fx.scene.rig;
  for (int f = 0; f < 5; ++f) {
    const auto views = render_ground_truth(fx.scene, f);
    FrameData frame;
    frame.index = f;
    frame.world_from_ego = fx.scene.trajectory[f];
    for (size_t ci = 0; ci < fx.scene.rig.size(); ++ci) {
      frame.images[fx.scene.rig[ci].name] = views[ci].image;
      frame.labels[fx.scene.rig[ci].name] = views[ci].labels;
    }
    fx.frames.frames.push_back(std::move(frame));
  }

  fx.config.grid.alpha = 2.0 / 3.0;
  fx.config.grid.inside_min = {-2, 0, -1};
  fx.config.grid.inside_max = {2, 4, 1};
  fx.config.grid.inside_dims = {12, 12, 6};
  fx.config.grid.dims = {18, 18, 9};
  if (with_semantics) fx.config.grid.class_ids = {3, 10};
  fx.config.loss.lambda = with_semantics ? 0.05 : 0.0;
  fx.config.seed = 11;
  fx.config.frames_rendered = 3;
  fx.config.supervision_window = 5;
  return fx;
}

/// Randomizes the raw parameters so the field (and thus every code path) is
/// non-trivial without being trained.
inline void randomize_grid(OccupancyGrid& grid, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> op(-5.5, -1.5);  // alphas roughly 0.004 .. 0.18
  std::uniform_real_distribution<double> sem(-0.6, 0.6);
  for (auto& p : grid.opacity_raw) p = static_cast<float>(op(rng));
  for (auto& p : grid.semantic_raw) p = static_cast<float>(sem(rng));
}

/// (a) analytic depth gradients w.r.t. per-sample opacity vs central
/// differences on random rays, both render modes.
inline void gradcheck_renderer(GradCheckReport& report, int rays = 64, int samples_per_ray = 16,
                               double h = 1e-4) {
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int mode_i = 0; mode_i < 2; ++mode_i) {
    const RenderMode mode = mode_i == 0 ? RenderMode::Weight : RenderMode::Density;
    for (int r = 0; r < rays; ++r) {
      RaySamples s;
      s.count = samples_per_ray;
      s.t.resize(s.count);
      s.delta.resize(s.count);
      s.points_contracted.assign(s.count, Eigen::Vector3d::Zero());
      double t = 0.3 + unit(rng);
      for (int k = 0; k < s.count; ++k) {
        s.t[k] = t;
        t += 0.2 + unit(rng);
      }
      for (int k = 0; k + 1 < s.count; ++k) s.delta[k] = s.t[k + 1] - s.t[k];
      s.delta[s.count - 1] = s.delta[s.count - 2];
      std::vector<double> values(s.count);
      for (auto& v : values)
        v = mode == RenderMode::Weight ? 0.05 + 0.85 * unit(rng) : 0.05 + 1.5 * unit(rng);

      RenderedPixel px;
      render_depth(s, values, mode, px);
      RenderUpstream up;
      up.depth = 1.0;
      std::vector<double> g;
      render_backward(s, values, mode, px, up, g);

      for (int k = 0; k < s.count; ++k) {
        std::vector<double> vp = values, vm = values;
        vp[k] += h;
        vm[k] -= h;
        RenderedPixel pp, pm;
        render_depth(s, vp, mode, pp);
        render_depth(s, vm, mode, pm);
        const double fd = (pp.depth - pm.depth) / (2 * h);
        const double denom = std::max(std::abs(g[k]), std::abs(fd));
        if (denom < 1e-8) continue;
        report.renderer_max_rel_err =
            std::max(report.renderer_max_rel_err, std::abs(g[k] - fd) / denom);
        ++report.renderer_tested;
      }
    }
  }
}

/// (b) analytic gradient of the full photometric (+ optional semantic) loss
/// w.r.t. raw grid parameters vs central differences at h. Parameters whose
/// perturbation flips a non-smooth branch (bilinear cell, min-reprojection
/// source, automask, L1 sign, SSIM clamp) are re-drawn: the derivative is
/// compared only where it exists.
inline void gradcheck_full(GradCheckReport& report, bool with_semantics = false,
                           int target_params = 200, double h = 1e-3) {
  report.requested_params = target_params;
  GradCheckFixture fx = make_gradcheck_fixture(with_semantics);
  OccupancyGrid grid = make_grid(fx.config.grid);
  randomize_grid(grid, 2024);
  report.fixture_params = grid.opacity_raw.size() + grid.semantic_raw.size();

  GradientBuffers grads = GradientBuffers::zeros(grid);
  const LossBreakdown base = evaluate_loss(grid, fx.frames, fx.config, &grads);

  // restrict the draw to parameters that actually participate
  std::vector<size_t> supported;
  for (size_t i = 0; i < grads.opacity.size(); ++i)
    if (grads.opacity[i] != 0.0) supported.push_back(i);
  std::vector<size_t> supported_sem;
  for (size_t i = 0; i < grads.semantic.size(); ++i)
    if (grads.semantic[i] != 0.0) supported_sem.push_back(i);

  std::mt19937_64 rng(4242);
  int attempts = 0;
  const int max_attempts = target_params * 20;
  while (report.full_tested < target_params && attempts < max_attempts) {
    ++attempts;
    const bool use_sem = with_semantics && !supported_sem.empty() && attempts % 3 == 0;
    std::vector<float>& params = use_sem ? grid.semantic_raw : grid.opacity_raw;
    const std::vector<double>& g_vec = use_sem ? grads.semantic : grads.opacity;
    const auto& pool = use_sem ? supported_sem : supported;
    if (pool.empty()) break;
    const size_t idx = pool[rng() % pool.size()];

    const float saved = params[idx];
    const float plus = static_cast<float>(saved + h);
    const float minus = static_cast<float>(saved - h);
    params[idx] = plus;
    const LossBreakdown lp = evaluate_loss(grid, fx.frames, fx.config);
    params[idx] = minus;
    const LossBreakdown lm = evaluate_loss(grid, fx.frames, fx.config);
    params[idx] = saved;

    if (lp.branch_hash != base.branch_hash || lm.branch_hash != base.branch_hash) {
      ++report.skipped_branch_changes;
      continue;
    }
    // float storage quantizes the nominal +-h step
    const double fd = (lp.total - lm.total) / (static_cast<double>(plus) - minus);
    const double g = g_vec[idx];
    const double denom = std::max(std::abs(g), std::abs(fd));
    ++report.full_tested;
    if (denom < 1e-8) continue;
    report.full_max_rel_err = std::max(report.full_max_rel_err, std::abs(g - fd) / denom);
  }
}

inline GradCheckReport gradient_check(bool with_semantics = false, int target_params = 200) {
  GradCheckReport report;
  gradcheck_renderer(report);
  gradcheck_full(report, with_semantics, target_params);
  return report;
}

}  // namespace occfield
