#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <vector>

#include <json.hpp>

#include "occfield/grid.hpp"
#include "occfield/image.hpp"
#include "occfield/label_fusion.hpp"
#include "occfield/renderer.hpp"

namespace occfield {

struct DepthMetrics {
  double abs_rel = 0, sq_rel = 0, rmse = 0, rmse_log = 0;
  double delta_1 = 0, delta_2 = 0, delta_3 = 0;
  size_t valid_count = 0;
};

/// Standard depth-error statistics over pixels whose ground truth lies inside
/// the clip range. Predictions are clamped into the range, no median scaling.
inline DepthMetrics depth_metrics(const Image& pred, const Image& gt, double clip_min = 0.1,
                                  double clip_max = 80.0) {
  if (!pred.same_shape(gt) || pred.channels != 1)
    throw std::invalid_argument("depth_metrics: need matching 1-channel depth maps");
  DepthMetrics m;
  double abs_rel = 0, sq_rel = 0, sq = 0, sq_log = 0;
  size_t n = 0, d1 = 0, d2 = 0, d3 = 0;
  for (size_t i = 0; i < gt.data.size(); ++i) {
    const double g = gt.data[i];
    if (!std::isfinite(g) || g < clip_min || g > clip_max) continue;
    double d = pred.data[i];
    if (!std::isfinite(d)) d = clip_min;
    d = std::clamp(d, clip_min, clip_max);
    const double diff = d - g;
    abs_rel += std::abs(diff) / g;
    sq_rel += diff * diff / g;
    sq += diff * diff;
    const double dl = std::log(d) - std::log(g);
    sq_log += dl * dl;
    const double ratio = std::max(d / g, g / d);
    d1 += ratio < 1.25;
    d2 += ratio < 1.25 * 1.25;
    d3 += ratio < 1.25 * 1.25 * 1.25;
    ++n;
  }
  if (n == 0) throw std::runtime_error("depth_metrics: no valid pixels");
  m.abs_rel = abs_rel / n;
  m.sq_rel = sq_rel / n;
  m.rmse = std::sqrt(sq / n);
  m.rmse_log = std::sqrt(sq_log / n);
  m.delta_1 = static_cast<double>(d1) / n;
  m.delta_2 = static_cast<double>(d2) / n;
  m.delta_3 = static_cast<double>(d3) / n;
  m.valid_count = n;
  return m;
}

struct OccMetrics {
  std::map<int, double> class_iou;
  double miou = 0;
  double binary_iou = 0, precision = 0, recall = 0;
  size_t tp = 0, fp = 0, fn = 0;  // binary occupied-vs-free counts
};

/// Confusion-derived occupancy metrics between two voxel label grids
/// (255 = free). mIoU averages only the requested class ids. Voxels equal to
/// ignore_label in the ground truth are skipped entirely.
inline OccMetrics occupancy_metrics(const std::vector<uint8_t>& pred,
                                    const std::vector<uint8_t>& gt,
                                    const std::vector<int>& class_ids, int ignore_label = -1) {
  if (pred.size() != gt.size()) throw std::invalid_argument("occupancy_metrics: size mismatch");
  if (class_ids.empty()) throw std::invalid_argument("occupancy_metrics: empty class set");
  OccMetrics m;
  std::map<int, std::array<size_t, 3>> conf;  // id -> {tp, fp, fn}
  for (int id : class_ids) conf[id] = {0, 0, 0};
  for (size_t i = 0; i < pred.size(); ++i) {
    if (ignore_label >= 0 && gt[i] == ignore_label) continue;
    const bool p_occ = pred[i] != kUncertainLabel;
    const bool g_occ = gt[i] != kUncertainLabel;
    m.tp += p_occ && g_occ;
    m.fp += p_occ && !g_occ;
    m.fn += !p_occ && g_occ;
    for (auto& [id, c] : conf) {
      const bool p = p_occ && pred[i] == id;
      const bool g = g_occ && gt[i] == id;
      c[0] += p && g;
      c[1] += p && !g;
      c[2] += !p && g;
    }
  }
  double iou_sum = 0;
  for (auto& [id, c] : conf) {
    const size_t denom = c[0] + c[1] + c[2];
    const double iou = denom == 0 ? 0.0 : static_cast<double>(c[0]) / denom;
    m.class_iou[id] = iou;
    iou_sum += iou;
  }
  m.miou = iou_sum / conf.size();
  const size_t bden = m.tp + m.fp + m.fn;
  m.binary_iou = bden == 0 ? 0.0 : static_cast<double>(m.tp) / bden;
  m.precision = (m.tp + m.fp) == 0 ? 0.0 : static_cast<double>(m.tp) / (m.tp + m.fp);
  m.recall = (m.tp + m.fn) == 0 ? 0.0 : static_cast<double>(m.tp) / (m.tp + m.fn);
  return m;
}

/// Thresholds the continuous field into an inside-region voxel label grid.
/// The field is sampled at the metric centers of the inside lattice, so the
/// output aligns with voxelize_occupancy regardless of the outer margin.
/// class_ids maps semantic channel -> category id; with no semantics,
/// occupied voxels get label 0.
inline std::vector<uint8_t> extract_occupancy(const OccupancyGrid& grid, double threshold,
                                              RenderMode mode = RenderMode::Weight,
                                              const std::vector<int>& class_ids = {}) {
  if (!class_ids.empty() && static_cast<int>(class_ids.size()) != grid.num_classes)
    throw std::invalid_argument("extract_occupancy: class_ids size must match grid channels");
  std::vector<uint8_t> out(grid.inside_voxel_count(), kUncertainLabel);
  std::vector<double> logits(std::max(grid.num_classes, 1));
  size_t p = 0;
  for (int ix = 0; ix < grid.inside_dims.x(); ++ix)
    for (int iy = 0; iy < grid.inside_dims.y(); ++iy)
      for (int iz = 0; iz < grid.inside_dims.z(); ++iz, ++p) {
        const Eigen::Vector3d c =
            contract_point(grid.inside_voxel_center_ego(ix, iy, iz), grid.contraction);
        const double raw =
            sample_trilinear(grid, c, grid.num_classes > 0 ? logits.data() : nullptr);
        if (!(activate_opacity(raw, mode) > threshold)) continue;
        uint8_t label = 0;
        if (grid.num_classes > 0) {
          int best = 0;
          for (int k = 1; k < grid.num_classes; ++k)
            if (logits[k] > logits[best]) best = k;
          label = static_cast<uint8_t>(class_ids.empty() ? best : class_ids[best]);
        }
        out[p] = label;
      }
  return out;
}

inline nlohmann::json to_json(const DepthMetrics& m) {
  return {{"abs_rel", m.abs_rel},   {"sq_rel", m.sq_rel},   {"rmse", m.rmse},
          {"rmse_log", m.rmse_log}, {"delta_1", m.delta_1}, {"delta_2", m.delta_2},
          {"delta_3", m.delta_3},   {"valid_pixels", m.valid_count}};
}

inline nlohmann::json to_json(const OccMetrics& m) {
  nlohmann::json per_class = nlohmann::json::object();
  for (const auto& [id, iou] : m.class_iou) per_class[std::to_string(id)] = iou;
  return {{"miou", m.miou},           {"class_iou", per_class}, {"binary_iou", m.binary_iou},
          {"precision", m.precision}, {"recall", m.recall},     {"tp", m.tp},
          {"fp", m.fp},               {"fn", m.fn}};
}

inline std::string format_depth_report(const DepthMetrics& m) {
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "abs_rel %8.4f | sq_rel %8.4f | rmse %8.4f | rmse_log %8.4f | "
                "d1 %6.4f | d2 %6.4f | d3 %6.4f | n %zu",
                m.abs_rel, m.sq_rel, m.rmse, m.rmse_log, m.delta_1, m.delta_2, m.delta_3,
                m.valid_count);
  return buf;
}

inline std::string format_occ_report(const OccMetrics& m) {
  std::string s;
  char buf[160];
  std::snprintf(buf, sizeof(buf), "mIoU %6.4f | IoU %6.4f | precision %6.4f | recall %6.4f\n",
                m.miou, m.binary_iou, m.precision, m.recall);
  s += buf;
  for (const auto& [id, iou] : m.class_iou) {
    std::snprintf(buf, sizeof(buf), "  class %3d IoU %6.4f\n", id, iou);
    s += buf;
  }
  return s;
}

}  // namespace occfield
