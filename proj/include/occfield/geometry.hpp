#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace occfield {

/// Rigid transform, rotation then translation: p' = R p + t.
struct Pose {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  static Pose identity() { return {}; }

  static Pose from_matrix(const Eigen::Matrix4d& m) {
    Pose p;
    p.rotation = m.block<3, 3>(0, 0);
    p.translation = m.block<3, 1>(0, 3);
    return p;
  }

  Eigen::Matrix4d matrix() const {
    Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
    m.block<3, 3>(0, 0) = rotation;
    m.block<3, 1>(0, 3) = translation;
    return m;
  }

  Pose inverse() const {
    Pose p;
    p.rotation = rotation.transpose();
    p.translation = -(rotation.transpose() * translation);
    return p;
  }

  Pose operator*(const Pose& rhs) const {
    Pose p;
    p.rotation = rotation * rhs.rotation;
    p.translation = rotation * rhs.translation + translation;
    return p;
  }

  Eigen::Vector3d operator*(const Eigen::Vector3d& point) const {
    return rotation * point + translation;
  }

  bool is_rigid(double tol = 1e-9) const {
    const Eigen::Matrix3d err = rotation * rotation.transpose() - Eigen::Matrix3d::Identity();
    return err.cwiseAbs().maxCoeff() <= tol && std::abs(rotation.determinant() - 1.0) <= tol &&
           translation.allFinite();
  }

  /// Rotation about one of the ego axes (0=x, 1=y, 2=z), angle in radians.
  static Pose axis_rotation(int axis, double angle, const Eigen::Vector3d& t = Eigen::Vector3d::Zero()) {
    Pose p;
    p.rotation = Eigen::AngleAxisd(angle, Eigen::Vector3d::Unit(axis)).toRotationMatrix();
    p.translation = t;
    return p;
  }
};

/// Pinhole camera. Extrinsic is stored ego-from-camera so the camera center
/// in ego coordinates is just the translation. Camera frame: x right, y down,
/// z along the optical axis.
struct CameraModel {
  std::string name;
  double fx = 0, fy = 0, cx = 0, cy = 0;
  int width = 0, height = 0;
  Pose ego_from_camera;

  void validate() const {
    if (!(fx > 0) || !(fy > 0)) throw std::invalid_argument("camera " + name + ": fx, fy must be > 0");
    if (!(cx > 0 && cx < width) || !(cy > 0 && cy < height))
      throw std::invalid_argument("camera " + name + ": principal point outside image");
    if (!ego_from_camera.is_rigid())
      throw std::invalid_argument("camera " + name + ": extrinsic is not a rigid transform");
  }
};

struct PixelProjection {
  double u = 0, v = 0;
  double depth = 0;  // z in the camera frame, meters
  bool valid = false;
};

/// Projects an ego-frame point. Points at or behind the camera plane come
/// back with valid = false instead of throwing.
inline PixelProjection project(const Eigen::Vector3d& point_ego, const CameraModel& cam) {
  const Eigen::Vector3d pc = cam.ego_from_camera.inverse() * point_ego;
  PixelProjection out;
  out.depth = pc.z();
  if (!(pc.z() > 0.0)) return out;
  out.u = cam.fx * pc.x() / pc.z() + cam.cx;
  out.v = cam.fy * pc.y() / pc.z() + cam.cy;
  out.valid = true;
  return out;
}

struct Ray {
  Eigen::Vector3d origin = Eigen::Vector3d::Zero();
  Eigen::Vector3d dir = Eigen::Vector3d::UnitZ();  // not normalized
  double u = 0, v = 0;                             // originating pixel
};

/// Ray through pixel (u, v) in the ego frame. Direction is the unnormalized
/// pinhole direction rotated into ego coordinates.
inline Ray generate_ray(const CameraModel& cam, double u, double v) {
  Ray r;
  r.origin = cam.ego_from_camera.translation;
  const Eigen::Vector3d d_cam((u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, 1.0);
  r.dir = cam.ego_from_camera.rotation * d_cam;
  r.u = u;
  r.v = v;
  return r;
}

inline std::vector<Ray> generate_rays(const CameraModel& cam,
                                      const std::vector<std::pair<double, double>>& pixels) {
  std::vector<Ray> rays;
  rays.reserve(pixels.size());
  for (const auto& [u, v] : pixels) rays.push_back(generate_ray(cam, u, v));
  return rays;
}

}  // namespace occfield
