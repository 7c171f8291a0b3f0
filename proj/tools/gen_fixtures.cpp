// Regenerates the shipped fixture files (acceptance scene + fit configs +
// the fuse-labels demo masks). Run from the repo root:
//   build/tools/occfield-gen-fixtures fixtures

#include <filesystem>
#include <iostream>

#include <json.hpp>

#include "occfield/fit.hpp"
#include "occfield/image_io.hpp"
#include "occfield/synth.hpp"

using namespace occfield;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

CameraModel rig_camera(const std::string& name, double x_offset, double yaw_deg,
                       double pitch_deg) {
  CameraModel cam;
  cam.name = name;
  cam.width = 96;
  cam.height = 64;
  cam.fx = cam.fy = 75.0;
  cam.cx = 47.5;
  cam.cy = 31.5;
  Pose base;  // camera x right, y down, z forward -> ego x right, y forward, z up
  base.rotation << 1, 0, 0, 0, 0, 1, 0, -1, 0;
  const Pose mount = Pose::axis_rotation(2, yaw_deg * M_PI / 180.0) *
                     Pose::axis_rotation(0, pitch_deg * M_PI / 180.0);
  cam.ego_from_camera.rotation = mount.rotation * base.rotation;
  cam.ego_from_camera.translation = Eigen::Vector3d(x_offset, 0.3, 1.0);
  return cam;
}

Primitive box(const Eigen::Vector3d& center, const Eigen::Vector3d& size, int category,
              Texture tex) {
  Primitive p;
  p.kind = Primitive::Kind::Box;
  p.pose.translation = center;
  p.size = size;
  p.category_id = category;
  p.texture = tex;
  return p;
}

Texture tex(Texture::Kind kind, double period, uint32_t seed, const Eigen::Vector3d& a,
            const Eigen::Vector3d& b) {
  Texture t;
  t.kind = kind;
  t.period = period;
  t.seed = seed;
  t.color_a = a;
  t.color_b = b;
  return t;
}

SceneSpec acceptance_scene() {
  // the rig travels inside the region of interest (as on a road scene); the
  // noise sphere closes the background beyond the 80 m depth clip
  SceneSpec scene;
  scene.primitives.push_back(box({0, 3.5, -1.15}, {10.8, 9.2, 0.5}, 10,
                                 tex(Texture::Kind::Checker, 0.55, 0, {0.08, 0.10, 0.12},
                                     {0.90, 0.85, 0.80})));
  scene.primitives.push_back(box({-1.6, 3.6, -0.5}, {1.2, 2.0, 0.8}, 13,
                                 tex(Texture::Kind::Stripes, 0.28, 0, {0.85, 0.25, 0.20},
                                     {0.15, 0.20, 0.70})));
  scene.primitives.push_back(box({2.2, 5.2, -0.45}, {1.4, 2.4, 0.9}, 13,
                                 tex(Texture::Kind::Checker, 0.33, 0, {0.90, 0.80, 0.20},
                                     {0.20, 0.50, 0.20})));
  // building fronts: thin vertical surfaces the rays meet near head-on
  scene.primitives.push_back(box({-4.6, 3.5, 0.2}, {0.25, 9.2, 2.8}, 13,
                                 tex(Texture::Kind::Checker, 0.45, 0, {0.75, 0.70, 0.60},
                                     {0.25, 0.20, 0.15})));
  scene.primitives.push_back(box({4.6, 3.5, 0.2}, {0.25, 9.2, 2.8}, 13,
                                 tex(Texture::Kind::Noise, 0.6, 11, {0.80, 0.75, 0.65},
                                     {0.30, 0.25, 0.35})));
  scene.primitives.push_back(box({0, 6.8, 0.2}, {10.8, 0.25, 2.8}, 13,
                                 tex(Texture::Kind::Stripes, 0.5, 0, {0.55, 0.60, 0.70},
                                     {0.15, 0.15, 0.25})));
  Primitive backdrop;
  backdrop.kind = Primitive::Kind::Sphere;
  backdrop.pose.translation = {0, 3.5, 0};
  backdrop.radius = 100.0;
  backdrop.category_id = kUncertainLabel;
  backdrop.texture =
      tex(Texture::Kind::Noise, 14.0, 7, {0.30, 0.35, 0.45}, {0.70, 0.75, 0.85});
  scene.primitives.push_back(backdrop);

  scene.rig.push_back(rig_camera("cam_a", -0.25, 36.0, -18.0));
  scene.rig.push_back(rig_camera("cam_b", -0.08, 12.0, -10.0));
  scene.rig.push_back(rig_camera("cam_c", 0.08, -12.0, -14.0));
  scene.rig.push_back(rig_camera("cam_d", 0.25, -36.0, -20.0));

  for (int f = 0; f < 5; ++f) {
    Pose p;
    p.translation = {0, -0.7 + 0.35 * f, 0};
    scene.trajectory.push_back(p);
  }
  return scene;
}

FitConfig base_fit_config() {
  FitConfig cfg;
  cfg.steps = 2000;
  cfg.learning_rate = 0.012;
  cfg.optimizer = "adam";
  cfg.patches_per_step = 96;
  cfg.patch_size = 8;
  cfg.frames_rendered = 3;
  cfg.supervision_window = 5;
  cfg.semantic_stride = 4;
  cfg.seed = 7;
  cfg.sample_mode = SampleMode::Stratified;
  cfg.render_mode = RenderMode::Weight;
  cfg.loss.lambda = 0.0;
  cfg.grid.alpha = 2.0 / 3.0;
  cfg.grid.inside_min = {-5, 0, -1};
  cfg.grid.inside_max = {5, 7, 1};
  cfg.grid.inside_dims = {60, 42, 12};
  cfg.grid.dims = {90, 63, 18};
  cfg.grid.opacity_init = 0.01;
  cfg.exclude_cameras = {"cam_c"};
  cfg.log_every = 10;
  return cfg;
}

void write_demo_masks(const fs::path& dir) {
  fs::create_directories(dir);
  const int w = 48, h = 32;
  std::vector<uint8_t> car(w * h, 0), road(w * h, 0);
  for (int y = 12; y < 24; ++y)
    for (int x = 8; x < 22; ++x) car[y * w + x] = 1;
  for (int y = 20; y < h; ++y)
    for (int x = 0; x < w; ++x) road[y * w + x] = 1;
  write_png_mask((dir / "car.png").string(), car, w, h);
  write_png_mask((dir / "road.png").string(), road, w, h);
  json manifest = {{"image_id", "demo0"},
                   {"width", w},
                   {"height", h},
                   {"entries",
                    {{{"mask_path", "car.png"}, {"logit", 0.82}, {"phrase", "sedan"}},
                     {{"mask_path", "road.png"}, {"logit", 0.67}, {"phrase", "highway"}}}},
                   {"detector_thresholds", {{"text", 0.2}, {"box", 0.2}}}};
  write_text_file((dir / "masks.json").string(), manifest.dump(2) + "\n");
}

}  // namespace

int main(int argc, char** argv) {
  const fs::path out = argc > 1 ? argv[1] : "fixtures";
  fs::create_directories(out);

  const SceneSpec scene = acceptance_scene();
  write_text_file((out / "scene_accept.json").string(), to_json(scene).dump(2) + "\n");

  const FitConfig fit_cfg = base_fit_config();
  write_text_file((out / "fit_accept.json").string(), to_json(fit_cfg).dump(2) + "\n");

  FitConfig sem = base_fit_config();
  sem.steps = 10000;
  sem.learning_rate = 0.02;
  sem.loss.lambda = 0.05;
  sem.grid.class_ids = {10, 13};
  json sem_json = to_json(sem);
  sem_json["eval"] = {{"voxelize", "shell"}, {"shell_width", 1.0 / 6.0}};
  write_text_file((out / "fit_semantic.json").string(), sem_json.dump(2) + "\n");

  FitConfig smoke = base_fit_config();
  smoke.steps = 25;
  smoke.patches_per_step = 32;
  smoke.log_every = 5;
  write_text_file((out / "fit_smoke.json").string(), to_json(smoke).dump(2) + "\n");

  write_demo_masks(out / "masks_demo");
  std::cout << "fixtures written to " << out << "\n";
  return 0;
}
