#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "occfield/image_io.hpp"
#include "occfield/json_util.hpp"
#include "occfield/synth.hpp"

namespace occfield {

struct FrameData {
  int index = 0;
  Pose world_from_ego;
  std::map<std::string, Image> images;            // camera name -> RGB
  std::map<std::string, Image> depths;            // optional ground truth, z meters
  std::map<std::string, std::vector<uint8_t>> labels;  // optional category ids
};

struct FrameSet {
  std::vector<CameraModel> cameras;
  std::vector<FrameData> frames;
  nlohmann::json scene;  // embedded scene spec when the set came from synth

  const CameraModel& camera(const std::string& name) const {
    for (const auto& c : cameras)
      if (c.name == name) return c;
    throw std::invalid_argument("no camera named '" + name + "'");
  }
};

namespace detail {
inline std::string frame_cam_stem(int frame, const std::string& cam) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "f%03d_%s", frame, cam.c_str());
  return buf;
}
}  // namespace detail

/// Renders every frame of the scene and writes the on-disk dataset layout:
/// images/*.ppm, depth/*.pfm, labels/*.png (+palette.json), manifest.json.
inline void write_dataset(const std::string& dir, const SceneSpec& scene) {
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(dir) / "images");
  fs::create_directories(fs::path(dir) / "depth");
  fs::create_directories(fs::path(dir) / "labels");

  nlohmann::json manifest;
  manifest["cameras"] = nlohmann::json::array();
  for (const auto& cam : scene.rig) manifest["cameras"].push_back(to_json(cam));
  manifest["frames"] = nlohmann::json::array();
  manifest["scene"] = to_json(scene);

  const auto palette = label_palette();
  nlohmann::json palette_json = nlohmann::json::array();
  for (const auto& prim : scene.primitives)
    if (prim.category_id != kUncertainLabel)
      palette_json.push_back({{"id", prim.category_id},
                              {"rgb", {palette[prim.category_id][0], palette[prim.category_id][1],
                                       palette[prim.category_id][2]}}});
  palette_json.push_back({{"id", kUncertainLabel}, {"rgb", {128, 128, 128}}, {"name", "uncertain"}});
  write_text_file((fs::path(dir) / "labels" / "palette.json").string(), palette_json.dump(2) + "\n");

  for (int f = 0; f < static_cast<int>(scene.trajectory.size()); ++f) {
    const auto views = render_ground_truth(scene, f);
    nlohmann::json fj;
    fj["index"] = f;
    fj["world_from_ego"] = to_json(scene.trajectory[f]);
    for (size_t ci = 0; ci < scene.rig.size(); ++ci) {
      const std::string stem = detail::frame_cam_stem(f, scene.rig[ci].name);
      const std::string img_rel = "images/" + stem + ".ppm";
      const std::string depth_rel = "depth/" + stem + ".pfm";
      const std::string label_rel = "labels/" + stem + ".png";
      write_ppm((fs::path(dir) / img_rel).string(), views[ci].image);
      write_pfm((fs::path(dir) / depth_rel).string(), views[ci].depth);
      write_png_labels((fs::path(dir) / label_rel).string(), views[ci].labels,
                       views[ci].image.width, views[ci].image.height, palette);
      fj["images"][scene.rig[ci].name] = img_rel;
      fj["depths"][scene.rig[ci].name] = depth_rel;
      fj["labels"][scene.rig[ci].name] = label_rel;
    }
    manifest["frames"].push_back(fj);
  }
  write_text_file((fs::path(dir) / "manifest.json").string(), manifest.dump(2) + "\n");
}

inline FrameSet load_dataset(const std::string& dir, bool load_depth = true,
                             bool load_labels = true) {
  namespace fs = std::filesystem;
  const auto manifest = nlohmann::json::parse(read_text_file((fs::path(dir) / "manifest.json").string()));
  FrameSet set;
  for (const auto& cj : manifest.at("cameras")) set.cameras.push_back(camera_from_json(cj));
  if (manifest.contains("scene")) set.scene = manifest["scene"];
  for (const auto& fj : manifest.at("frames")) {
    FrameData frame;
    frame.index = fj.at("index").get<int>();
    frame.world_from_ego = pose_from_json(fj.at("world_from_ego"));
    for (const auto& [cam, rel] : fj.at("images").items())
      frame.images[cam] = read_ppm((fs::path(dir) / rel.get<std::string>()).string());
    if (load_depth && fj.contains("depths"))
      for (const auto& [cam, rel] : fj.at("depths").items())
        frame.depths[cam] = read_pfm((fs::path(dir) / rel.get<std::string>()).string());
    if (load_labels && fj.contains("labels"))
      for (const auto& [cam, rel] : fj.at("labels").items()) {
        const RawPng png = read_png_raw8((fs::path(dir) / rel.get<std::string>()).string());
        frame.labels[cam] = png.values;
      }
    set.frames.push_back(std::move(frame));
  }
  if (set.frames.empty()) throw std::runtime_error(dir + ": dataset has no frames");
  return set;
}

}  // namespace occfield
