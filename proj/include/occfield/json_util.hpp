#pragma once

#include <stdexcept>
#include <string>

#include <json.hpp>

#include "occfield/contraction.hpp"
#include "occfield/geometry.hpp"

namespace occfield {

inline nlohmann::json to_json(const Eigen::Vector3d& v) { return {v.x(), v.y(), v.z()}; }

inline Eigen::Vector3d vec3_from_json(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 3) throw std::invalid_argument("expected a 3-vector");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

/// 4x4 row-major flat array <-> rigid pose.
inline nlohmann::json to_json(const Pose& p) {
  const Eigen::Matrix4d m = p.matrix();
  nlohmann::json j = nlohmann::json::array();
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) j.push_back(m(r, c));
  return j;
}

inline Pose pose_from_json(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 16) throw std::invalid_argument("expected a 4x4 row-major pose");
  Eigen::Matrix4d m;
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) m(r, c) = j[static_cast<size_t>(r) * 4 + c].get<double>();
  Pose p = Pose::from_matrix(m);
  if (!p.is_rigid(1e-9)) throw std::invalid_argument("pose matrix is not rigid");
  return p;
}

inline nlohmann::json to_json(const CameraModel& cam) {
  return {{"name", cam.name},     {"fx", cam.fx},           {"fy", cam.fy},
          {"cx", cam.cx},         {"cy", cam.cy},           {"width", cam.width},
          {"height", cam.height}, {"ego_from_camera", to_json(cam.ego_from_camera)}};
}

inline CameraModel camera_from_json(const nlohmann::json& j) {
  CameraModel cam;
  cam.name = j.at("name").get<std::string>();
  cam.fx = j.at("fx").get<double>();
  cam.fy = j.at("fy").get<double>();
  cam.cx = j.at("cx").get<double>();
  cam.cy = j.at("cy").get<double>();
  cam.width = j.at("width").get<int>();
  cam.height = j.at("height").get<int>();
  cam.ego_from_camera = pose_from_json(j.at("ego_from_camera"));
  cam.validate();
  return cam;
}

inline nlohmann::json to_json(const ContractionParams& p) {
  return {{"alpha", p.alpha}, {"inside_min", to_json(p.inside_min)},
          {"inside_max", to_json(p.inside_max)}};
}

inline ContractionParams contraction_from_json(const nlohmann::json& j) {
  return ContractionParams::make(j.at("alpha").get<double>(), vec3_from_json(j.at("inside_min")),
                                 vec3_from_json(j.at("inside_max")));
}

}  // namespace occfield
