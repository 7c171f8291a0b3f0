#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include <json.hpp>

#include "occfield/dataset.hpp"
#include "occfield/grid.hpp"
#include "occfield/photometric.hpp"
#include "occfield/renderer.hpp"

namespace occfield {

struct GridConfig {
  Eigen::Vector3i inside_dims{72, 72, 12};
  Eigen::Vector3i dims{0, 0, 0};  // 0 = derive as round(inside_dims / alpha)
  double alpha = 2.0 / 3.0;
  Eigen::Vector3d inside_min{-6, 0, -1};
  Eigen::Vector3d inside_max{6, 12, 1};
  std::vector<int> class_ids;   // semantic channel -> category id; empty = geometry only
  double opacity_init = 0.01;   // initial activation value
};

struct FitConfig {
  int steps = 2000;
  double learning_rate = 1e-2;
  std::string optimizer = "adam";  // or "sgd"
  int patches_per_step = 128;
  int patch_size = 6;
  int frames_rendered = 3;
  int supervision_window = 5;
  int semantic_stride = 4;  // L_s = L / stride
  uint64_t seed = 0;
  SampleMode sample_mode = SampleMode::Stratified;
  RenderMode render_mode = RenderMode::Weight;
  LossConfig loss;
  GridConfig grid;
  std::vector<std::string> exclude_cameras;
  int threads = 0;  // 0 = library default
  int log_every = 1;

  void validate() const {
    if (steps < 0 || patches_per_step < 1 || patch_size < 1 || semantic_stride < 1)
      throw std::invalid_argument("fit config: counts must be positive");
    if (frames_rendered < 1 || frames_rendered % 2 == 0)
      throw std::invalid_argument("fit config: frames_rendered must be odd");
    if (supervision_window < frames_rendered + 2)
      throw std::invalid_argument("fit config: supervision window too small for rendered frames");
    loss.validate();
  }
};

inline OccupancyGrid make_grid(const GridConfig& gc) {
  Eigen::Vector3i dims = gc.dims;
  for (int i = 0; i < 3; ++i)
    if (dims[i] <= 0) dims[i] = static_cast<int>(std::lround(gc.inside_dims[i] / gc.alpha));
  const auto params = ContractionParams::make(gc.alpha, gc.inside_min, gc.inside_max);
  const float raw0 = static_cast<float>(std::log(gc.opacity_init / (1.0 - gc.opacity_init)));
  OccupancyGrid g = OccupancyGrid::make(dims, gc.inside_dims,
                                        static_cast<int>(gc.class_ids.size()), params, raw0);
  return g;
}

// ---------------------------------------------------------------------------
// JSON config parsing
// ---------------------------------------------------------------------------

inline GridConfig grid_config_from_json(const nlohmann::json& j) {
  GridConfig gc;
  gc.alpha = j.at("alpha").get<double>();
  gc.inside_min = vec3_from_json(j.at("inside_min"));
  gc.inside_max = vec3_from_json(j.at("inside_max"));
  const auto id = j.at("inside_dims");
  gc.inside_dims = {id[0].get<int>(), id[1].get<int>(), id[2].get<int>()};
  if (j.contains("dims")) {
    const auto d = j.at("dims");
    gc.dims = {d[0].get<int>(), d[1].get<int>(), d[2].get<int>()};
  }
  if (j.contains("class_ids")) gc.class_ids = j.at("class_ids").get<std::vector<int>>();
  gc.opacity_init = j.value("opacity_init", 0.01);
  return gc;
}

inline FitConfig fit_config_from_json(const nlohmann::json& j) {
  FitConfig c;
  c.steps = j.value("steps", c.steps);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.optimizer = j.value("optimizer", c.optimizer);
  c.patches_per_step = j.value("patches_per_step", c.patches_per_step);
  c.patch_size = j.value("patch_size", c.patch_size);
  c.frames_rendered = j.value("frames_rendered", c.frames_rendered);
  c.supervision_window = j.value("supervision_window", c.supervision_window);
  c.semantic_stride = j.value("semantic_stride", c.semantic_stride);
  c.seed = j.value("seed", c.seed);
  if (j.contains("sample_mode")) {
    const std::string m = j["sample_mode"].get<std::string>();
    if (m == "stratified")
      c.sample_mode = SampleMode::Stratified;
    else if (m == "uniform")
      c.sample_mode = SampleMode::Uniform;
    else
      throw std::invalid_argument("unknown sample_mode '" + m + "'");
  }
  if (j.contains("render_mode")) {
    const std::string m = j["render_mode"].get<std::string>();
    if (m == "weight")
      c.render_mode = RenderMode::Weight;
    else if (m == "density")
      c.render_mode = RenderMode::Density;
    else
      throw std::invalid_argument("unknown render_mode '" + m + "'");
  }
  if (j.contains("loss")) {
    const auto& l = j["loss"];
    c.loss.beta = l.value("beta", c.loss.beta);
    c.loss.lambda = l.value("lambda", c.loss.lambda);
    c.loss.ssim_window = l.value("ssim_window", c.loss.ssim_window);
    c.loss.c1 = l.value("c1", c.loss.c1);
    c.loss.c2 = l.value("c2", c.loss.c2);
    c.loss.automask = l.value("automask", c.loss.automask);
  }
  c.grid = grid_config_from_json(j.at("grid"));
  if (j.contains("exclude_cameras"))
    c.exclude_cameras = j.at("exclude_cameras").get<std::vector<std::string>>();
  c.threads = j.value("threads", 0);
  c.log_every = j.value("log_every", 1);
  c.validate();
  return c;
}

inline nlohmann::json to_json(const FitConfig& c) {
  nlohmann::json j;
  j["steps"] = c.steps;
  j["learning_rate"] = c.learning_rate;
  j["optimizer"] = c.optimizer;
  j["patches_per_step"] = c.patches_per_step;
  j["patch_size"] = c.patch_size;
  j["frames_rendered"] = c.frames_rendered;
  j["supervision_window"] = c.supervision_window;
  j["semantic_stride"] = c.semantic_stride;
  j["seed"] = c.seed;
  j["sample_mode"] = c.sample_mode == SampleMode::Stratified ? "stratified" : "uniform";
  j["render_mode"] = c.render_mode == RenderMode::Weight ? "weight" : "density";
  j["loss"] = {{"beta", c.loss.beta},   {"lambda", c.loss.lambda},
               {"ssim_window", c.loss.ssim_window}, {"c1", c.loss.c1},
               {"c2", c.loss.c2},       {"automask", c.loss.automask}};
  j["grid"] = {{"alpha", c.grid.alpha},
               {"inside_min", to_json(c.grid.inside_min)},
               {"inside_max", to_json(c.grid.inside_max)},
               {"inside_dims", {c.grid.inside_dims[0], c.grid.inside_dims[1], c.grid.inside_dims[2]}},
               {"dims", {c.grid.dims[0], c.grid.dims[1], c.grid.dims[2]}},
               {"class_ids", c.grid.class_ids},
               {"opacity_init", c.grid.opacity_init}};
  j["exclude_cameras"] = c.exclude_cameras;
  j["threads"] = c.threads;
  j["log_every"] = c.log_every;
  return j;
}

// ---------------------------------------------------------------------------
// Internal forward/backward machinery. A "block" is a rectangle of pixels of
// one (frame, camera): a training patch or a whole image during evaluation.
// ---------------------------------------------------------------------------

namespace fitdetail {

inline uint64_t mix(uint64_t h, uint64_t v) {
  h ^= v + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
  return h;
}

struct RayWork {
  RaySamples samples;
  std::vector<double> raw;    // interpolated raw opacity per sample
  std::vector<double> alpha;  // activated
  RenderedPixel px;
  Eigen::Vector3d dir_unit;   // field frame
};

/// Everything shared by the rays of one (frame, camera) pairing.
struct ViewGeometry {
  int frame = 0;
  int cam_index = 0;
  bool is_center = false;
  const CameraModel* cam = nullptr;
  Pose field_from_cam;
  const Image* target = nullptr;
  const std::vector<uint8_t>* labels = nullptr;      // raw category ids
  std::vector<const Image*> sources;                 // adjacent frames, same camera
  std::vector<Pose> srccam_from_field;
};

struct BlockForward {
  const ViewGeometry* view = nullptr;
  int u0 = 0, v0 = 0, bw = 0, bh = 0;
  Image target_block;
  std::vector<RayWork> rays;
  std::vector<Image> warped;
  std::vector<std::vector<uint8_t>> wvalid;
  std::vector<LossMap> loss_src, loss_id;
  MinReprojection minrep;
  std::vector<int> sem_channel;                 // -1 = no semantic loss at this pixel
  std::vector<std::vector<double>> sem_softmax; // per pixel, filled when labeled
  std::vector<double> sem_ce;
  double pe_sum = 0;
  size_t kept = 0;
  double sem_sum = 0;
  size_t labeled = 0;
  uint64_t branch_hash = 1469598103934665603ull;
};

inline uint64_t ray_seed(uint64_t seed, int step, uint64_t ray_index) {
  uint64_t x = seed;
  x = detail::splitmix64(x ^ (0x632be59bd9b4e019ull * (static_cast<uint64_t>(step) + 1)));
  x = detail::splitmix64(x ^ (0x9e3779b97f4a7c15ull * (ray_index + 1)));
  return x;
}

inline void forward_ray(const OccupancyGrid& grid, const FitConfig& cfg, const ViewGeometry& view,
                        double u, double v, uint64_t jitter_seed, RayWork& out) {
  Ray ray;
  ray.origin = view.field_from_cam.translation;
  const Eigen::Vector3d d_cam((u - view.cam->cx) / view.cam->fx,
                              (v - view.cam->cy) / view.cam->fy, 1.0);
  ray.dir = view.field_from_cam.rotation * d_cam;
  ray.u = u;
  ray.v = v;
  std::mt19937_64 rng(jitter_seed);
  sample_ray(ray, grid.contraction, grid.voxel_size, cfg.sample_mode, rng, out.samples);
  const int L = out.samples.count;
  out.raw.resize(L);
  out.alpha.resize(L);
  for (int k = 0; k < L; ++k) {
    out.raw[k] = sample_trilinear(grid, out.samples.points_contracted[k]);
    out.alpha[k] = activate_opacity(out.raw[k], cfg.render_mode);
  }
  render_depth(out.samples, out.alpha, cfg.render_mode, out.px);
  out.dir_unit = ray.dir.normalized();
}

/// Strided sub-ray used for semantic rendering (L_s = L / stride).
inline void make_subset(const RayWork& ray, int stride, RaySamples& sub, std::vector<double>& alphas) {
  const int L = ray.samples.count;
  sub.count = 0;
  sub.t.clear();
  sub.delta.clear();
  sub.points_contracted.clear();
  alphas.clear();
  for (int k = 0; k < L; k += stride) {
    sub.t.push_back(ray.samples.t[k]);
    sub.points_contracted.push_back(ray.samples.points_contracted[k]);
    alphas.push_back(ray.alpha[k]);
    ++sub.count;
  }
  sub.delta.resize(sub.count);
  for (int k = 0; k + 1 < sub.count; ++k) sub.delta[k] = sub.t[k + 1] - sub.t[k];
  sub.delta[sub.count - 1] = sub.count >= 2 ? sub.delta[sub.count - 2] : ray.samples.delta.back();
  sub.r_b = ray.samples.r_b;
}

/// keep_rays retains the per-sample arrays every backward pass needs; loss
/// evaluation at full-image scale runs with keep_rays = false to stay lean.
inline void forward_block(const OccupancyGrid& grid, const FitConfig& cfg,
                          const std::vector<int8_t>& label_to_channel, const ViewGeometry& view,
                          int u0, int v0, int bw, int bh, int step, uint64_t ray_index_base,
                          BlockForward& blk, bool keep_rays = true) {
  const int C = view.target->channels;
  blk.view = &view;
  blk.u0 = u0;
  blk.v0 = v0;
  blk.bw = bw;
  blk.bh = bh;
  blk.target_block = Image(bw, bh, C);
  blk.rays.clear();
  if (keep_rays) blk.rays.resize(static_cast<size_t>(bw) * bh);
  RayWork scratch;
  const size_t n_src = view.sources.size();
  blk.warped.assign(n_src, Image(bw, bh, C));
  blk.wvalid.assign(n_src, std::vector<uint8_t>(static_cast<size_t>(bw) * bh, 0));
  blk.sem_channel.assign(static_cast<size_t>(bw) * bh, -1);
  blk.sem_softmax.assign(static_cast<size_t>(bw) * bh, {});
  blk.sem_ce.assign(static_cast<size_t>(bw) * bh, 0.0);
  blk.pe_sum = 0;
  blk.kept = 0;
  blk.sem_sum = 0;
  blk.labeled = 0;
  blk.branch_hash = 1469598103934665603ull;

  const bool semantics = cfg.loss.lambda > 0 && view.is_center && view.labels && grid.num_classes > 0;

  for (int j = 0; j < bh; ++j) {
    for (int i = 0; i < bw; ++i) {
      const int u = u0 + i, v = v0 + j;
      const size_t p = static_cast<size_t>(j) * bw + i;
      for (int c = 0; c < C; ++c) blk.target_block.at(i, j, c) = view.target->at(u, v, c);

      RayWork& ray = keep_rays ? blk.rays[p] : scratch;
      forward_ray(grid, cfg, view, u, v, ray_seed(cfg.seed, step, ray_index_base + p), ray);
      const double range = ray.px.depth;

      // warp into each source frame
      const Eigen::Vector3d p_field =
          view.field_from_cam.translation + range * ray.dir_unit;
      for (size_t s = 0; s < n_src; ++s) {
        const Eigen::Vector3d pc = view.srccam_from_field[s] * p_field;
        if (!(pc.z() > 0.0)) continue;
        const double us = view.cam->fx * pc.x() / pc.z() + view.cam->cx;
        const double vs = view.cam->fy * pc.y() / pc.z() + view.cam->cy;
        const ImageSample smp = bilinear_sample(*view.sources[s], us, vs);
        if (!smp.valid) continue;
        for (int c = 0; c < C; ++c) blk.warped[s].at(i, j, c) = smp.value[c];
        blk.wvalid[s][p] = 1;
        blk.branch_hash = mix(blk.branch_hash, 0x51d >> 0);
        blk.branch_hash = mix(blk.branch_hash, static_cast<uint64_t>(std::floor(us)) * 2654435761u +
                                                   static_cast<uint64_t>(std::floor(vs)));
      }

      // per-pixel semantic cross entropy on the (strided) sub-ray
      if (semantics) {
        const uint8_t raw_label = (*view.labels)[static_cast<size_t>(v) * view.target->width + u];
        const int ch = label_to_channel[raw_label];
        if (ch >= 0) {
          RaySamples sub;
          std::vector<double> sub_alpha;
          make_subset(ray, cfg.semantic_stride, sub, sub_alpha);
          std::vector<double> logits(static_cast<size_t>(sub.count) * grid.num_classes);
          for (int k = 0; k < sub.count; ++k)
            sample_trilinear(grid, sub.points_contracted[k], &logits[static_cast<size_t>(k) * grid.num_classes]);
          RenderedPixel sub_px;
          const std::vector<double> s_hat =
              render_semantics(sub, sub_alpha, logits, grid.num_classes, cfg.render_mode, &sub_px);
          double mx = s_hat[0];
          for (double x : s_hat) mx = std::max(mx, x);
          double denom = 0;
          std::vector<double> soft(grid.num_classes);
          for (int c = 0; c < grid.num_classes; ++c) denom += std::exp(s_hat[c] - mx);
          for (int c = 0; c < grid.num_classes; ++c) soft[c] = std::exp(s_hat[c] - mx) / denom;
          blk.sem_channel[p] = ch;
          blk.sem_softmax[p] = soft;
          blk.sem_ce[p] = -(s_hat[ch] - mx - std::log(denom));
          blk.sem_sum += blk.sem_ce[p];
          ++blk.labeled;
        }
      }
    }
  }

  // photometric losses per source + identity losses, then min/automask
  blk.loss_src.clear();
  blk.loss_id.clear();
  std::vector<std::vector<uint16_t>> flags(n_src);
  for (size_t s = 0; s < n_src; ++s) {
    blk.loss_src.push_back(
        photometric_error(blk.target_block, blk.warped[s], blk.wvalid[s], cfg.loss, &flags[s]));
    Image id_block(bw, bh, C);
    for (int j = 0; j < bh; ++j)
      for (int i = 0; i < bw; ++i)
        for (int c = 0; c < C; ++c)
          id_block.at(i, j, c) = view.sources[s]->at(u0 + i, v0 + j, c);
    blk.loss_id.push_back(photometric_error(blk.target_block, id_block, {}, cfg.loss));
  }
  blk.minrep = min_reprojection(blk.loss_src, blk.loss_id, cfg.loss.automask);
  for (size_t p = 0; p < blk.minrep.mask.size(); ++p) {
    if (!blk.minrep.mask[p]) continue;
    blk.pe_sum += blk.minrep.loss[p];
    ++blk.kept;
    const int s = blk.minrep.source[p];
    blk.branch_hash = mix(blk.branch_hash, 0xA0B1ull * (p + 1) + s);
    blk.branch_hash = mix(blk.branch_hash, flags[s][p]);
  }
}

/// Backpropagates pe_upstream (per kept pixel) and sem_upstream (per labeled
/// pixel, already including lambda) through one forwarded block into grid
/// gradients.
inline void backward_block(const OccupancyGrid& grid, const FitConfig& cfg,
                           const BlockForward& blk, double pe_upstream, double sem_upstream,
                           GradientBuffers& grads) {
  const ViewGeometry& view = *blk.view;
  const int C = blk.target_block.channels;
  const size_t n_px = static_cast<size_t>(blk.bw) * blk.bh;
  const size_t n_src = view.sources.size();

  // photometric: upstream into each source's warped image
  std::vector<std::vector<double>> g_warped(n_src);
  if (pe_upstream != 0.0) {
    std::vector<double> upstream(n_px);
    for (size_t s = 0; s < n_src; ++s) {
      bool any = false;
      std::fill(upstream.begin(), upstream.end(), 0.0);
      for (size_t p = 0; p < n_px; ++p)
        if (blk.minrep.mask[p] && blk.minrep.source[p] == static_cast<int>(s)) {
          upstream[p] = pe_upstream;
          any = true;
        }
      if (any)
        photometric_error_backward(blk.target_block, blk.warped[s], blk.wvalid[s], cfg.loss,
                                   upstream, g_warped[s]);
    }
  }

  std::vector<double> g_alpha, g_values, g_logits, sub_alpha, logits;
  RaySamples sub;
  for (int j = 0; j < blk.bh; ++j) {
    for (int i = 0; i < blk.bw; ++i) {
      const size_t p = static_cast<size_t>(j) * blk.bw + i;
      const RayWork& ray = blk.rays[p];
      const int L = ray.samples.count;

      // chain d(loss)/d(warped) -> d(loss)/d(range) through the reprojection
      double g_range = 0.0;
      if (pe_upstream != 0.0) {
        const Eigen::Vector3d p_field =
            view.field_from_cam.translation + ray.px.depth * ray.dir_unit;
        for (size_t s = 0; s < n_src; ++s) {
          if (g_warped[s].empty() || !blk.wvalid[s][p]) continue;
          double gsum = 0;
          for (int c = 0; c < C; ++c) gsum += std::abs(g_warped[s][p * C + c]);
          if (gsum == 0) continue;
          const Eigen::Vector3d pc = view.srccam_from_field[s] * p_field;
          const Eigen::Vector3d e = view.srccam_from_field[s].rotation * ray.dir_unit;
          const double z = pc.z();
          const double us = view.cam->fx * pc.x() / z + view.cam->cx;
          const double vs = view.cam->fy * pc.y() / z + view.cam->cy;
          const double dus_dD = view.cam->fx * (e.x() * z - pc.x() * e.z()) / (z * z);
          const double dvs_dD = view.cam->fy * (e.y() * z - pc.y() * e.z()) / (z * z);
          std::array<double, 4> du{}, dv{};
          if (!bilinear_gradient(*view.sources[s], us, vs, du, dv)) continue;
          for (int c = 0; c < C; ++c)
            g_range += g_warped[s][p * C + c] * (du[c] * dus_dD + dv[c] * dvs_dD);
        }
      }

      const bool has_sem = blk.sem_channel[p] >= 0 && sem_upstream != 0.0;
      if (g_range == 0.0 && !has_sem) continue;

      RenderUpstream up;
      up.depth = g_range;
      render_backward(ray.samples, ray.alpha, cfg.render_mode, ray.px, up, g_alpha);

      // semantic branch: gradients into the strided subset's alphas + logits
      if (has_sem) {
        make_subset(ray, cfg.semantic_stride, sub, sub_alpha);
        logits.resize(static_cast<size_t>(sub.count) * grid.num_classes);
        for (int k = 0; k < sub.count; ++k)
          sample_trilinear(grid, sub.points_contracted[k], &logits[static_cast<size_t>(k) * grid.num_classes]);
        RenderedPixel sub_px;
        render_semantics(sub, sub_alpha, logits, grid.num_classes, cfg.render_mode, &sub_px);
        std::vector<double> g_sem(grid.num_classes);
        for (int c = 0; c < grid.num_classes; ++c) {
          const double onehot = c == blk.sem_channel[p] ? 1.0 : 0.0;
          g_sem[c] = sem_upstream * (blk.sem_softmax[p][c] - onehot);
        }
        RenderUpstream sup;
        sup.semantics = g_sem.data();
        sup.num_classes = grid.num_classes;
        render_backward(sub, sub_alpha, cfg.render_mode, sub_px, sup, g_values, &logits, &g_logits);
        for (int k = 0; k < sub.count; ++k) g_alpha[static_cast<size_t>(k) * cfg.semantic_stride] += g_values[k];
        for (int k = 0; k < sub.count; ++k)
          scatter_gradient(grid, grads, sub.points_contracted[k], 0.0,
                           &g_logits[static_cast<size_t>(k) * grid.num_classes]);
      }

      for (int k = 0; k < L; ++k) {
        if (g_alpha[k] == 0.0) continue;
        const double g_raw = g_alpha[k] * activate_opacity_derivative(ray.raw[k], cfg.render_mode);
        scatter_gradient(grid, grads, ray.samples.points_contracted[k], g_raw);
      }
    }
  }
}

/// View geometries for the rendered frames of the active window: the field
/// frame is the ego frame of the window's central frame.
inline std::vector<ViewGeometry> build_views(const FrameSet& frames, const FitConfig& cfg,
                                             const std::vector<int>& train_cams) {
  const int n = static_cast<int>(frames.frames.size());
  if (n < cfg.supervision_window)
    throw std::invalid_argument("dataset has fewer frames than the supervision window");
  const int start = (n - cfg.supervision_window) / 2;
  const int center = start + cfg.supervision_window / 2;
  const Pose ego_from_world = frames.frames[center].world_from_ego.inverse();

  std::vector<ViewGeometry> views;
  const int half_rendered = cfg.frames_rendered / 2;
  for (int df = -half_rendered; df <= half_rendered; ++df) {
    const int f = center + df;
    for (int ci : train_cams) {
      const CameraModel& cam = frames.cameras[ci];
      ViewGeometry view;
      view.frame = f;
      view.cam_index = ci;
      view.is_center = f == center;
      view.cam = &cam;
      view.field_from_cam =
          ego_from_world * frames.frames[f].world_from_ego * cam.ego_from_camera;
      view.target = &frames.frames[f].images.at(cam.name);
      const auto lbl = frames.frames[f].labels.find(cam.name);
      view.labels = lbl == frames.frames[f].labels.end() ? nullptr : &lbl->second;
      for (int s : {f - 1, f + 1}) {
        view.sources.push_back(&frames.frames[s].images.at(cam.name));
        view.srccam_from_field.push_back(
            (frames.frames[s].world_from_ego * cam.ego_from_camera).inverse() *
            frames.frames[center].world_from_ego);
      }
      views.push_back(std::move(view));
    }
  }
  return views;
}

inline std::vector<int> select_train_cameras(const FrameSet& frames, const FitConfig& cfg) {
  std::vector<int> out;
  for (int i = 0; i < static_cast<int>(frames.cameras.size()); ++i) {
    bool excluded = false;
    for (const auto& name : cfg.exclude_cameras) excluded |= frames.cameras[i].name == name;
    if (!excluded) out.push_back(i);
  }
  if (out.empty()) throw std::invalid_argument("all cameras excluded from training");
  return out;
}

inline std::vector<int8_t> build_label_lut(const GridConfig& gc) {
  std::vector<int8_t> lut(256, -1);
  for (size_t ch = 0; ch < gc.class_ids.size(); ++ch) {
    const int id = gc.class_ids[ch];
    if (id < 0 || id > 254) throw std::invalid_argument("class ids must lie in [0, 254]");
    lut[id] = static_cast<int8_t>(ch);
  }
  return lut;
}

}  // namespace fitdetail

// ---------------------------------------------------------------------------
// Public entry points
// ---------------------------------------------------------------------------

struct LossBreakdown {
  double photometric = 0;
  double semantic = 0;  // mean cross entropy, not yet weighted by lambda
  double total = 0;
  size_t kept_pixels = 0;
  uint64_t branch_hash = 0;
};

/// Deterministic full-image loss: photometric mean over kept pixels per
/// camera (summed over cameras) plus lambda-weighted semantic mean. Uses
/// midpoint sampling so two calls on the same grid agree bit for bit.
inline LossBreakdown evaluate_loss(const OccupancyGrid& grid, const FrameSet& frames,
                                   const FitConfig& cfg,
                                   GradientBuffers* gradients = nullptr) {
  FitConfig ecfg = cfg;
  ecfg.sample_mode = SampleMode::Uniform;
  const auto train_cams = fitdetail::select_train_cameras(frames, ecfg);
  const auto views = fitdetail::build_views(frames, ecfg, train_cams);
  const auto lut = fitdetail::build_label_lut(ecfg.grid);

  std::vector<fitdetail::BlockForward> blocks(views.size());
#pragma omp parallel for schedule(dynamic)
  for (int vi = 0; vi < static_cast<int>(views.size()); ++vi) {
    forward_block(grid, ecfg, lut, views[vi], 0, 0, views[vi].cam->width, views[vi].cam->height,
                  /*step=*/0, /*ray_index_base=*/static_cast<uint64_t>(vi) << 32, blocks[vi],
                  /*keep_rays=*/gradients != nullptr);
  }

  // per-camera reductions over the camera's rendered frames
  const size_t n_cams = frames.cameras.size();
  std::vector<double> pe_sum(n_cams, 0), sem_sum(n_cams, 0);
  std::vector<size_t> kept(n_cams, 0), labeled(n_cams, 0);
  LossBreakdown out;
  for (const auto& blk : blocks) {
    const int ci = blk.view->cam_index;
    pe_sum[ci] += blk.pe_sum;
    kept[ci] += blk.kept;
    sem_sum[ci] += blk.sem_sum;
    labeled[ci] += blk.labeled;
    out.branch_hash = fitdetail::mix(out.branch_hash, blk.branch_hash);
  }
  for (size_t ci = 0; ci < n_cams; ++ci) {
    if (kept[ci]) out.photometric += pe_sum[ci] / kept[ci];
    if (labeled[ci]) out.semantic += sem_sum[ci] / labeled[ci];
    out.kept_pixels += kept[ci];
  }
  out.total = out.photometric + cfg.loss.lambda * out.semantic;

  if (gradients) {
    for (auto& blk : blocks) {
      const int ci = blk.view->cam_index;
      const double pe_up = kept[ci] ? 1.0 / static_cast<double>(kept[ci]) : 0.0;
      const double sem_up =
          labeled[ci] ? cfg.loss.lambda / static_cast<double>(labeled[ci]) : 0.0;
      fitdetail::backward_block(grid, ecfg, blk, pe_up, sem_up, *gradients);
    }
  }
  return out;
}

struct LossRow {
  int step = 0;
  double photometric = 0, semantic = 0, total = 0;
};

struct FitResult {
  std::vector<LossRow> log;
};

namespace fitdetail {

struct AdamState {
  std::vector<double> m, v;
  int t = 0;
  explicit AdamState(size_t n) : m(n, 0.0), v(n, 0.0) {}

  void update(std::vector<float>& params, const std::vector<double>& grad, double lr) {
    ++t;
    const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    const double c1 = 1.0 - std::pow(b1, t);
    const double c2 = 1.0 - std::pow(b2, t);
    for (size_t i = 0; i < params.size(); ++i) {
      m[i] = b1 * m[i] + (1 - b1) * grad[i];
      v[i] = b2 * v[i] + (1 - b2) * grad[i] * grad[i];
      const double update = lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
      params[i] = static_cast<float>(params[i] - update);
    }
  }
};

inline void sgd_update(std::vector<float>& params, const std::vector<double>& grad, double lr) {
  for (size_t i = 0; i < params.size(); ++i)
    params[i] = static_cast<float>(params[i] - lr * grad[i]);
}

}  // namespace fitdetail

/// The fitting loop. Renders random patches of the rendered frames, computes
/// the min-reprojection photometric loss (plus semantic cross entropy on the
/// central frame), backpropagates to the raw grid parameters and applies
/// Adam or SGD. Deterministic for a fixed seed and thread count.
inline FitResult fit(OccupancyGrid& grid, const FrameSet& frames, const FitConfig& cfg,
                     std::ostream* loss_csv = nullptr) {
  cfg.validate();
  if (cfg.loss.lambda > 0) {
    if (grid.num_classes == 0)
      throw std::invalid_argument("lambda > 0 requires semantic classes in the grid config");
    bool any_labels = false;
    for (const auto& f : frames.frames) any_labels |= !f.labels.empty();
    if (!any_labels)
      throw std::invalid_argument("lambda > 0 but the dataset provides no label maps");
  }
  const auto train_cams = fitdetail::select_train_cameras(frames, cfg);
  const auto views = fitdetail::build_views(frames, cfg, train_cams);
  const auto lut = fitdetail::build_label_lut(cfg.grid);
  const int P = cfg.patch_size;
  for (const auto& view : views)
    if (view.cam->width < P || view.cam->height < P)
      throw std::invalid_argument("patch_size exceeds image dimensions");

#ifdef _OPENMP
  const int n_threads = cfg.threads > 0 ? cfg.threads : omp_get_max_threads();
#else
  const int n_threads = 1;
#endif
  std::vector<GradientBuffers> thread_grads;
  for (int i = 0; i < n_threads; ++i) thread_grads.push_back(GradientBuffers::zeros(grid));
  GradientBuffers grads = GradientBuffers::zeros(grid);

  fitdetail::AdamState adam_opacity(grid.opacity_raw.size());
  fitdetail::AdamState adam_semantic(grid.semantic_raw.size());
  const bool use_adam = cfg.optimizer == "adam";
  if (!use_adam && cfg.optimizer != "sgd")
    throw std::invalid_argument("unknown optimizer '" + cfg.optimizer + "'");

  std::mt19937_64 step_rng(detail::splitmix64(cfg.seed ^ 0x5bf0364fe5b8c2a1ull));
  const size_t n_cams = frames.cameras.size();

  FitResult result;
  if (loss_csv) *loss_csv << "step,photometric,semantic,total\n";

  struct PatchDraw {
    int view_index, u0, v0;
  };
  std::vector<PatchDraw> draws(cfg.patches_per_step);
  std::vector<fitdetail::BlockForward> blocks(cfg.patches_per_step);

  for (int step = 0; step < cfg.steps; ++step) {
    // draw this step's patches (single RNG stream, order fixed)
    std::vector<size_t> drawn_px(n_cams, 0), drawn_sem(n_cams, 0);
    for (int pi = 0; pi < cfg.patches_per_step; ++pi) {
      const int vi = static_cast<int>(step_rng() % views.size());
      const auto& view = views[vi];
      draws[pi].view_index = vi;
      draws[pi].u0 = static_cast<int>(step_rng() % (view.cam->width - P + 1));
      draws[pi].v0 = static_cast<int>(step_rng() % (view.cam->height - P + 1));
      drawn_px[view.cam_index] += static_cast<size_t>(P) * P;
      if (view.is_center) drawn_sem[view.cam_index] += static_cast<size_t>(P) * P;
    }

    for (auto& tg : thread_grads) tg.zero();

#pragma omp parallel for schedule(static) num_threads(n_threads)
    for (int pi = 0; pi < cfg.patches_per_step; ++pi) {
      const auto& d = draws[pi];
      const auto& view = views[d.view_index];
      fitdetail::BlockForward& blk = blocks[pi];
      forward_block(grid, cfg, lut, view, d.u0, d.v0, P, P, step,
                    static_cast<uint64_t>(pi) * P * P, blk);
      const double pe_up = 1.0 / static_cast<double>(drawn_px[view.cam_index]);
      const double sem_up = drawn_sem[view.cam_index]
                                ? cfg.loss.lambda / static_cast<double>(drawn_sem[view.cam_index])
                                : 0.0;
#ifdef _OPENMP
      GradientBuffers& tg = thread_grads[omp_get_thread_num()];
#else
      GradientBuffers& tg = thread_grads[0];
#endif
      fitdetail::backward_block(grid, cfg, blk, pe_up, sem_up, tg);
    }

    grads.zero();
    for (const auto& tg : thread_grads) grads.add(tg);

    // loss bookkeeping, normalized the same way the gradients were
    double pe = 0, sem = 0;
    {
      std::vector<double> pe_sum(n_cams, 0), sem_sum(n_cams, 0);
      for (int pi = 0; pi < cfg.patches_per_step; ++pi) {
        const auto& blk = blocks[pi];
        pe_sum[blk.view->cam_index] += blk.pe_sum;
        sem_sum[blk.view->cam_index] += blk.sem_sum;
      }
      for (size_t ci = 0; ci < n_cams; ++ci) {
        if (drawn_px[ci]) pe += pe_sum[ci] / drawn_px[ci];
        if (drawn_sem[ci]) sem += sem_sum[ci] / drawn_sem[ci];
      }
    }
    const double total = pe + cfg.loss.lambda * sem;
    if (!std::isfinite(total))
      throw std::runtime_error("fit: non-finite loss at step " + std::to_string(step));

    if (use_adam) {
      adam_opacity.update(grid.opacity_raw, grads.opacity, cfg.learning_rate);
      if (!grid.semantic_raw.empty())
        adam_semantic.update(grid.semantic_raw, grads.semantic, cfg.learning_rate);
    } else {
      fitdetail::sgd_update(grid.opacity_raw, grads.opacity, cfg.learning_rate);
      if (!grid.semantic_raw.empty())
        fitdetail::sgd_update(grid.semantic_raw, grads.semantic, cfg.learning_rate);
    }

    if (step % cfg.log_every == 0 || step + 1 == cfg.steps) {
      result.log.push_back({step, pe, sem, total});
      if (loss_csv) *loss_csv << step << "," << pe << "," << sem << "," << total << "\n";
    }
  }
  return result;
}

/// Full-image depth render from a fitted grid: z-depth map plus accumulated
/// opacity, deterministic midpoint sampling.
inline std::pair<Image, Image> render_depth_map(const OccupancyGrid& grid, const CameraModel& cam,
                                                const Pose& field_from_cam, RenderMode mode) {
  Image depth(cam.width, cam.height, 1);
  Image acc(cam.width, cam.height, 1);
#pragma omp parallel for schedule(dynamic)
  for (int v = 0; v < cam.height; ++v) {
    RaySamples samples;
    std::vector<double> alphas;
    RenderedPixel px;
    std::mt19937_64 rng(0);
    for (int u = 0; u < cam.width; ++u) {
      Ray ray;
      ray.origin = field_from_cam.translation;
      const Eigen::Vector3d d_cam((u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, 1.0);
      ray.dir = field_from_cam.rotation * d_cam;
      sample_ray(ray, grid.contraction, grid.voxel_size, SampleMode::Uniform, rng, samples);
      alphas.resize(samples.count);
      for (int k = 0; k < samples.count; ++k)
        alphas[k] = activate_opacity(sample_trilinear(grid, samples.points_contracted[k]), mode);
      render_depth(samples, alphas, mode, px);
      const double cosz = 1.0 / d_cam.norm();  // range along unit ray -> z-depth
      depth.at(u, v, 0) = px.depth * cosz;
      acc.at(u, v, 0) = px.accumulated_opacity;
    }
  }
  return {depth, acc};
}

/// Semantic argmax map rendered from a fitted grid (needs semantic channels).
inline std::vector<uint8_t> render_semantic_map(const OccupancyGrid& grid, const CameraModel& cam,
                                                const Pose& field_from_cam, RenderMode mode,
                                                int stride, const std::vector<int>& class_ids) {
  std::vector<uint8_t> out(static_cast<size_t>(cam.width) * cam.height, kUncertainLabel);
  if (grid.num_classes == 0) return out;
#pragma omp parallel for schedule(dynamic)
  for (int v = 0; v < cam.height; ++v) {
    RaySamples samples, sub;
    RenderedPixel px;
    std::mt19937_64 rng(0);
    for (int u = 0; u < cam.width; ++u) {
      Ray ray;
      ray.origin = field_from_cam.translation;
      const Eigen::Vector3d d_cam((u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, 1.0);
      ray.dir = field_from_cam.rotation * d_cam;
      sample_ray(ray, grid.contraction, grid.voxel_size, SampleMode::Uniform, rng, samples);
      sub.count = 0;
      sub.t.clear();
      sub.delta.clear();
      sub.points_contracted.clear();
      std::vector<double> alphas;
      for (int k = 0; k < samples.count; k += stride) {
        sub.t.push_back(samples.t[k]);
        sub.points_contracted.push_back(samples.points_contracted[k]);
        alphas.push_back(activate_opacity(sample_trilinear(grid, samples.points_contracted[k]), mode));
        ++sub.count;
      }
      sub.delta.resize(sub.count);
      for (int k = 0; k + 1 < sub.count; ++k) sub.delta[k] = sub.t[k + 1] - sub.t[k];
      if (sub.count >= 2) sub.delta[sub.count - 1] = sub.delta[sub.count - 2];
      std::vector<double> logits(static_cast<size_t>(sub.count) * grid.num_classes);
      for (int k = 0; k < sub.count; ++k)
        sample_trilinear(grid, sub.points_contracted[k], &logits[static_cast<size_t>(k) * grid.num_classes]);
      const auto s_hat = render_semantics(sub, alphas, logits, grid.num_classes, mode, &px);
      if (px.accumulated_opacity < 1e-3) continue;
      int best = 0;
      for (int c = 1; c < grid.num_classes; ++c)
        if (s_hat[c] > s_hat[best]) best = c;
      out[static_cast<size_t>(v) * cam.width + u] =
          static_cast<uint8_t>(class_ids.empty() ? best : class_ids[best]);
    }
  }
  return out;
}

}  // namespace occfield
