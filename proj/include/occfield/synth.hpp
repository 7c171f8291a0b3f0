#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "occfield/geometry.hpp"
#include "occfield/grid.hpp"
#include "occfield/image.hpp"
#include "occfield/json_util.hpp"
#include "occfield/label_fusion.hpp"

namespace occfield {

// ---------------------------------------------------------------------------
// Procedural textures. Smooth sine-based patterns on purpose: bilinear warping
// between frames has to reproduce them to a few percent, which hard-edged
// checkers cannot do at high frequency.
// ---------------------------------------------------------------------------

struct Texture {
  enum class Kind { Checker, Stripes, Noise };
  Kind kind = Kind::Checker;
  double period = 0.5;  // meters in surface coordinates
  uint32_t seed = 0;
  Eigen::Vector3d color_a{0.15, 0.15, 0.15};
  Eigen::Vector3d color_b{0.85, 0.85, 0.85};
};

namespace detail {
inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}
inline double unit_from_bits(uint64_t bits) {
  return static_cast<double>(bits >> 11) * (1.0 / 9007199254740992.0);
}
}  // namespace detail

/// Texture intensity in [0, 1] at surface coordinates (u, v) in meters.
inline double texture_value(const Texture& t, double u, double v) {
  const double two_pi = 2.0 * M_PI;
  switch (t.kind) {
    case Texture::Kind::Checker:
      return 0.5 + 0.5 * std::sin(two_pi * u / t.period) * std::sin(two_pi * v / t.period);
    case Texture::Kind::Stripes:
      return 0.5 + 0.5 * std::sin(two_pi * u / t.period);
    case Texture::Kind::Noise: {
      double acc = 0, norm = 0;
      for (int o = 0; o < 4; ++o) {
        const uint64_t h = detail::splitmix64(t.seed * 1315423911ull + o);
        const double angle = two_pi * detail::unit_from_bits(h);
        const double phase = two_pi * detail::unit_from_bits(detail::splitmix64(h));
        const double freq = (1 << o) / t.period;
        const double amp = 1.0 / (1 << o);
        acc += amp * std::sin(two_pi * freq * (std::cos(angle) * u + std::sin(angle) * v) + phase);
        norm += amp;
      }
      return 0.5 + 0.5 * acc / norm;
    }
  }
  return 0.5;
}

inline Eigen::Vector3d texture_color(const Texture& t, double u, double v) {
  const double a = texture_value(t, u, v);
  return t.color_a + a * (t.color_b - t.color_a);
}

// ---------------------------------------------------------------------------
// Primitives
// ---------------------------------------------------------------------------

struct Primitive {
  enum class Kind { Plane, Sphere, Box };
  Kind kind = Kind::Plane;
  Pose pose;                          // world placement; plane normal = local +z
  Eigen::Vector3d size{1, 1, 1};      // box edge lengths
  double radius = 1;                  // sphere
  Texture texture;
  int category_id = 0;                // 255 = unlabeled scenery (skipped in voxelization)
};

struct RayHit {
  bool hit = false;
  double t = std::numeric_limits<double>::infinity();
  int primitive = -1;
  double u = 0, v = 0;  // texture coordinates at the hit
};

namespace detail {

inline std::optional<RayHit> intersect_plane(const Primitive& prim, const Eigen::Vector3d& o,
                                             const Eigen::Vector3d& d) {
  const Eigen::Vector3d n = prim.pose.rotation.col(2);
  const double denom = n.dot(d);
  if (std::abs(denom) < 1e-12) return std::nullopt;
  const double t = -n.dot(o - prim.pose.translation) / denom;
  if (t <= 1e-9) return std::nullopt;
  RayHit h;
  h.hit = true;
  h.t = t;
  const Eigen::Vector3d local = prim.pose.rotation.transpose() * (o + t * d - prim.pose.translation);
  h.u = local.x();
  h.v = local.y();
  return h;
}

inline std::optional<RayHit> intersect_sphere(const Primitive& prim, const Eigen::Vector3d& o,
                                              const Eigen::Vector3d& d) {
  const Eigen::Vector3d oc = o - prim.pose.translation;
  const double b = oc.dot(d);
  const double c = oc.squaredNorm() - prim.radius * prim.radius;
  const double disc = b * b - c;
  if (disc < 0) return std::nullopt;
  const double s = std::sqrt(disc);
  double t = -b - s;
  if (t <= 1e-9) t = -b + s;
  if (t <= 1e-9) return std::nullopt;
  RayHit h;
  h.hit = true;
  h.t = t;
  const Eigen::Vector3d dir = (oc + t * d) / prim.radius;
  h.u = std::atan2(dir.y(), dir.x()) * prim.radius;
  h.v = std::asin(std::clamp(dir.z(), -1.0, 1.0)) * prim.radius;
  return h;
}

inline std::optional<RayHit> intersect_box(const Primitive& prim, const Eigen::Vector3d& o,
                                           const Eigen::Vector3d& d) {
  const Eigen::Vector3d ol = prim.pose.rotation.transpose() * (o - prim.pose.translation);
  const Eigen::Vector3d dl = prim.pose.rotation.transpose() * d;
  const Eigen::Vector3d half = 0.5 * prim.size;
  double t0 = -std::numeric_limits<double>::infinity();
  double t1 = std::numeric_limits<double>::infinity();
  int axis0 = -1, axis1 = -1;
  for (int a = 0; a < 3; ++a) {
    if (std::abs(dl[a]) < 1e-12) {
      if (std::abs(ol[a]) > half[a]) return std::nullopt;
      continue;
    }
    double ta = (-half[a] - ol[a]) / dl[a];
    double tb = (half[a] - ol[a]) / dl[a];
    if (ta > tb) std::swap(ta, tb);
    if (ta > t0) {
      t0 = ta;
      axis0 = a;
    }
    if (tb < t1) {
      t1 = tb;
      axis1 = a;
    }
    if (t0 > t1) return std::nullopt;
  }
  double t = t0;
  int axis = axis0;
  if (t <= 1e-9) {
    t = t1;
    axis = axis1;
  }
  if (t <= 1e-9 || axis < 0) return std::nullopt;
  RayHit h;
  h.hit = true;
  h.t = t;
  const Eigen::Vector3d p = ol + t * dl;
  h.u = p[(axis + 1) % 3];
  h.v = p[(axis + 2) % 3];
  return h;
}

}  // namespace detail

/// Closest hit along a world-space ray with unit direction.
inline RayHit intersect_scene(const std::vector<Primitive>& prims, const Eigen::Vector3d& origin,
                              const Eigen::Vector3d& dir_unit) {
  RayHit best;
  for (size_t i = 0; i < prims.size(); ++i) {
    std::optional<RayHit> h;
    switch (prims[i].kind) {
      case Primitive::Kind::Plane: h = detail::intersect_plane(prims[i], origin, dir_unit); break;
      case Primitive::Kind::Sphere: h = detail::intersect_sphere(prims[i], origin, dir_unit); break;
      case Primitive::Kind::Box: h = detail::intersect_box(prims[i], origin, dir_unit); break;
    }
    if (h && h->t < best.t) {
      best = *h;
      best.primitive = static_cast<int>(i);
    }
  }
  return best;
}

/// Signed distance to the primitive surface, negative inside. A plane's
/// inside is the halfspace behind its normal.
inline double signed_distance(const Primitive& prim, const Eigen::Vector3d& p) {
  switch (prim.kind) {
    case Primitive::Kind::Plane:
      return prim.pose.rotation.col(2).dot(p - prim.pose.translation);
    case Primitive::Kind::Sphere:
      return (p - prim.pose.translation).norm() - prim.radius;
    case Primitive::Kind::Box: {
      const Eigen::Vector3d local = prim.pose.rotation.transpose() * (p - prim.pose.translation);
      const Eigen::Vector3d q = local.cwiseAbs() - 0.5 * prim.size;
      const double outside = q.cwiseMax(0.0).norm();
      const double inside = std::min(q.maxCoeff(), 0.0);
      return outside + inside;
    }
  }
  return std::numeric_limits<double>::infinity();
}

// ---------------------------------------------------------------------------
// Scene
// ---------------------------------------------------------------------------

struct SceneSpec {
  std::vector<Primitive> primitives;
  std::vector<CameraModel> rig;
  std::vector<Pose> trajectory;  // world_from_ego per frame
};

struct GroundTruthView {
  Image image;           // RGB in [0,1]
  Image depth;           // z-depth meters, +inf where nothing is hit
  std::vector<uint8_t> labels;  // category ids, 255 uncertain
};

/// Analytic render of one frame: exact closest-hit depth, flat texture color,
/// per-pixel category. Deterministic.
inline std::vector<GroundTruthView> render_ground_truth(const SceneSpec& scene, int frame) {
  if (scene.primitives.empty()) throw std::invalid_argument("scene has no primitives");
  if (frame < 0 || frame >= static_cast<int>(scene.trajectory.size()))
    throw std::invalid_argument("frame index out of range");
  const Pose& world_from_ego = scene.trajectory[frame];
  std::vector<GroundTruthView> views(scene.rig.size());
  for (size_t ci = 0; ci < scene.rig.size(); ++ci) {
    const CameraModel& cam = scene.rig[ci];
    GroundTruthView& view = views[ci];
    view.image = Image(cam.width, cam.height, 3);
    view.depth = Image(cam.width, cam.height, 1, std::numeric_limits<double>::infinity());
    view.labels.assign(static_cast<size_t>(cam.width) * cam.height, kUncertainLabel);
    const Pose world_from_cam = world_from_ego * cam.ego_from_camera;
#pragma omp parallel for schedule(static)
    for (int y = 0; y < cam.height; ++y) {
      for (int x = 0; x < cam.width; ++x) {
        const Eigen::Vector3d d_cam =
            Eigen::Vector3d((x - cam.cx) / cam.fx, (y - cam.cy) / cam.fy, 1.0).normalized();
        const Eigen::Vector3d d_world = world_from_cam.rotation * d_cam;
        const RayHit hit = intersect_scene(scene.primitives, world_from_cam.translation, d_world);
        if (!hit.hit) continue;
        const Primitive& prim = scene.primitives[hit.primitive];
        const Eigen::Vector3d color = texture_color(prim.texture, hit.u, hit.v);
        for (int c = 0; c < 3; ++c) view.image.at(x, y, c) = std::clamp(color[c], 0.0, 1.0);
        view.depth.at(x, y, 0) = hit.t * d_cam.z();  // range -> z-depth
        view.labels[static_cast<size_t>(y) * cam.width + x] =
            static_cast<uint8_t>(prim.category_id);
      }
    }
  }
  return views;
}

enum class VoxelizeMode { Solid, Shell };

/// Ground-truth voxel labels over the inside lattice of `grid` (x-major, z
/// fastest — the same order extract_occupancy emits). Solid marks voxel
/// centers inside a primitive, Shell marks centers within shell_width of a
/// surface. Category-255 primitives (backdrops) are skipped.
inline std::vector<uint8_t> voxelize_occupancy(const SceneSpec& scene, const OccupancyGrid& grid,
                                               VoxelizeMode mode = VoxelizeMode::Solid,
                                               double shell_width = 0.0) {
  std::vector<uint8_t> out(grid.inside_voxel_count(), kUncertainLabel);
  size_t p = 0;
  for (int ix = 0; ix < grid.inside_dims.x(); ++ix)
    for (int iy = 0; iy < grid.inside_dims.y(); ++iy)
      for (int iz = 0; iz < grid.inside_dims.z(); ++iz, ++p) {
        const Eigen::Vector3d c = grid.inside_voxel_center_ego(ix, iy, iz);
        double best = std::numeric_limits<double>::infinity();
        int best_prim = -1;
        for (size_t i = 0; i < scene.primitives.size(); ++i) {
          if (scene.primitives[i].category_id == kUncertainLabel) continue;
          const double sd = signed_distance(scene.primitives[i], c);
          const bool occupied =
              mode == VoxelizeMode::Solid ? sd <= 0.0 : std::abs(sd) <= shell_width;
          if (occupied && std::abs(sd) < best) {
            best = std::abs(sd);
            best_prim = static_cast<int>(i);
          }
        }
        if (best_prim >= 0)
          out[p] = static_cast<uint8_t>(scene.primitives[best_prim].category_id);
      }
  return out;
}

// ---------------------------------------------------------------------------
// Scene spec JSON
// ---------------------------------------------------------------------------

inline nlohmann::json to_json(const Texture& t) {
  const char* kind = t.kind == Texture::Kind::Checker ? "checker"
                     : t.kind == Texture::Kind::Stripes ? "stripes"
                                                        : "noise";
  return {{"kind", kind}, {"period", t.period}, {"seed", t.seed},
          {"color_a", to_json(t.color_a)}, {"color_b", to_json(t.color_b)}};
}

inline Texture texture_from_json(const nlohmann::json& j) {
  Texture t;
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "checker")
    t.kind = Texture::Kind::Checker;
  else if (kind == "stripes")
    t.kind = Texture::Kind::Stripes;
  else if (kind == "noise")
    t.kind = Texture::Kind::Noise;
  else
    throw std::invalid_argument("unknown texture kind '" + kind + "'");
  t.period = j.at("period").get<double>();
  if (!(t.period > 0)) throw std::invalid_argument("texture period must be > 0");
  t.seed = j.value("seed", 0u);
  if (j.contains("color_a")) t.color_a = vec3_from_json(j.at("color_a"));
  if (j.contains("color_b")) t.color_b = vec3_from_json(j.at("color_b"));
  return t;
}

inline nlohmann::json to_json(const SceneSpec& scene) {
  nlohmann::json j;
  j["cameras"] = nlohmann::json::array();
  for (const auto& cam : scene.rig) j["cameras"].push_back(to_json(cam));
  j["trajectory"] = nlohmann::json::array();
  for (const auto& pose : scene.trajectory) j["trajectory"].push_back(to_json(pose));
  j["primitives"] = nlohmann::json::array();
  for (const auto& prim : scene.primitives) {
    nlohmann::json p;
    p["kind"] = prim.kind == Primitive::Kind::Plane ? "plane"
                : prim.kind == Primitive::Kind::Sphere ? "sphere"
                                                       : "box";
    p["pose"] = to_json(prim.pose);
    if (prim.kind == Primitive::Kind::Box) p["size"] = to_json(prim.size);
    if (prim.kind == Primitive::Kind::Sphere) p["radius"] = prim.radius;
    p["texture"] = to_json(prim.texture);
    p["category_id"] = prim.category_id;
    j["primitives"].push_back(p);
  }
  return j;
}

inline SceneSpec scene_from_json(const nlohmann::json& j) {
  SceneSpec scene;
  for (const auto& cj : j.at("cameras")) scene.rig.push_back(camera_from_json(cj));
  for (const auto& pj : j.at("trajectory")) scene.trajectory.push_back(pose_from_json(pj));
  for (const auto& pj : j.at("primitives")) {
    Primitive prim;
    const std::string kind = pj.at("kind").get<std::string>();
    if (kind == "plane")
      prim.kind = Primitive::Kind::Plane;
    else if (kind == "sphere")
      prim.kind = Primitive::Kind::Sphere;
    else if (kind == "box")
      prim.kind = Primitive::Kind::Box;
    else
      throw std::invalid_argument("unknown primitive kind '" + kind + "'");
    prim.pose = pose_from_json(pj.at("pose"));
    if (prim.kind == Primitive::Kind::Box) prim.size = vec3_from_json(pj.at("size"));
    if (prim.kind == Primitive::Kind::Sphere) prim.radius = pj.at("radius").get<double>();
    if (pj.contains("texture")) prim.texture = texture_from_json(pj.at("texture"));
    prim.category_id = pj.value("category_id", 0);
    scene.primitives.push_back(prim);
  }
  if (scene.primitives.empty()) throw std::invalid_argument("scene needs at least one primitive");
  if (scene.rig.empty()) throw std::invalid_argument("scene needs at least one camera");
  if (scene.trajectory.empty()) throw std::invalid_argument("scene needs at least one frame");
  return scene;
}

}  // namespace occfield
