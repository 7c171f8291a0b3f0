#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <random>

#include "occfield/dataset.hpp"
#include "occfield/image_io.hpp"
#include "occfield/label_fusion.hpp"

using namespace occfield;
namespace fs = std::filesystem;

namespace {
struct TempDir {
  fs::path path;
  TempDir() : path(fs::temp_directory_path() / ("occio_" + std::to_string(std::random_device{}()))) {
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};
}  // namespace

TEST_CASE("PFM roundtrip", "[io]") {
  TempDir tmp;
  Image depth(7, 5, 1);
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<float> u(0.1f, 50.f);
  for (auto& v : depth.data) v = u(rng);
  depth.at(3, 2, 0) = std::numeric_limits<float>::infinity();
  const std::string path = (tmp.path / "d.pfm").string();
  write_pfm(path, depth);
  const Image back = read_pfm(path);
  REQUIRE(back.same_shape(depth));
  CHECK(back.data == depth.data);

  Image rgb(4, 3, 3);
  for (auto& v : rgb.data) v = u(rng);
  const std::string p3 = (tmp.path / "c.pfm").string();
  write_pfm(p3, rgb);
  CHECK(read_pfm(p3).data == rgb.data);

  CHECK_THROWS_AS(read_pfm((tmp.path / "missing.pfm").string()), std::runtime_error);
}

TEST_CASE("PPM roundtrip", "[io]") {
  TempDir tmp;
  Image img(9, 4, 3);
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<int> u(0, 255);
  for (auto& v : img.data) v = u(rng) / 255.f;
  const std::string path = (tmp.path / "i.ppm").string();
  write_ppm(path, img);
  const Image back = read_ppm(path);
  REQUIRE(back.same_shape(img));
  for (size_t i = 0; i < img.data.size(); ++i)
    CHECK(back.data[i] == Catch::Approx(img.data[i]).margin(1.0 / 255));
}

TEST_CASE("PNG depth, labels and masks", "[io]") {
  TempDir tmp;
  SECTION("16-bit depth in millimeters") {
    Image depth(6, 4, 1);
    depth.at(0, 0, 0) = 1.234f;
    depth.at(1, 0, 0) = 0.f;
    depth.at(2, 0, 0) = std::numeric_limits<float>::infinity();
    depth.at(3, 0, 0) = 80.0f;
    const std::string path = (tmp.path / "d16.png").string();
    write_png_depth16(path, depth);
    CHECK(fs::file_size(path) > 0);
  }
  SECTION("indexed labels read back as raw palette indices") {
    std::vector<uint8_t> labels(5 * 3);
    for (size_t i = 0; i < labels.size(); ++i) labels[i] = i % 2 ? 10 : 255;
    const std::string path = (tmp.path / "labels.png").string();
    write_png_labels(path, labels, 5, 3, label_palette());
    const RawPng back = read_png_raw8(path);
    CHECK(back.width == 5);
    CHECK(back.height == 3);
    CHECK(back.values == labels);
  }
  SECTION("1-bit masks") {
    std::vector<uint8_t> mask(10 * 7, 0);
    for (size_t i = 0; i < mask.size(); i += 3) mask[i] = 1;
    const std::string path = (tmp.path / "mask.png").string();
    write_png_mask(path, mask, 10, 7);
    const RawPng back = read_png_raw8(path);
    REQUIRE(back.values.size() == mask.size());
    for (size_t i = 0; i < mask.size(); ++i) CHECK((back.values[i] != 0) == (mask[i] != 0));
  }
}

TEST_CASE("mask-set manifest loading", "[io][fusion]") {
  TempDir tmp;
  std::vector<uint8_t> m1(8 * 6, 0), m2(8 * 6, 0);
  for (int i = 0; i < 20; ++i) m1[i] = 1;
  for (int i = 30; i < 48; ++i) m2[i] = 1;
  write_png_mask((tmp.path / "m1.png").string(), m1, 8, 6);
  write_png_mask((tmp.path / "m2.png").string(), m2, 8, 6);
  write_text_file((tmp.path / "masks.json").string(), R"({
    "image_id": "frame0",
    "width": 8, "height": 6,
    "entries": [
      {"mask_path": "m1.png", "logit": 0.9, "phrase": "sedan"},
      {"mask_path": "m2.png", "logit": 0.55, "phrase": "highway"}
    ]
  })");
  const DetectionMaskSet set = load_mask_set((tmp.path / "masks.json").string());
  CHECK(set.image_id == "frame0");
  REQUIRE(set.entries.size() == 2);
  CHECK(set.entries[0].logit == 0.9);
  CHECK(set.entries[1].phrase == "highway");
  CHECK(set.entries[0].mask[0] == 1);
  CHECK(set.entries[0].mask[25] == 0);
}

TEST_CASE("dataset write/load roundtrip", "[io][dataset]") {
  TempDir tmp;
  SceneSpec scene;
  Primitive plane;
  plane.kind = Primitive::Kind::Plane;
  plane.pose.translation = {0, 0, -1};
  plane.category_id = 10;
  plane.texture.period = 0.7;
  scene.primitives.push_back(plane);
  CameraModel cam;
  cam.name = "front";
  cam.width = 20;
  cam.height = 14;
  cam.fx = cam.fy = 18;
  cam.cx = 9.5;
  cam.cy = 6.5;
  cam.ego_from_camera.rotation << 1, 0, 0, 0, 0, 1, 0, -1, 0;
  cam.ego_from_camera.translation = {0, 0, 0.4};
  scene.rig.push_back(cam);
  for (int f = 0; f < 3; ++f) {
    Pose p;
    p.translation = {0, 0.3 * f, 0};
    scene.trajectory.push_back(p);
  }

  write_dataset(tmp.path.string(), scene);
  const FrameSet set = load_dataset(tmp.path.string());
  REQUIRE(set.frames.size() == 3);
  REQUIRE(set.cameras.size() == 1);
  CHECK(set.cameras[0].name == "front");
  CHECK_FALSE(set.scene.is_null());

  // images survive the 8-bit PPM quantization
  const auto views = render_ground_truth(scene, 1);
  const Image& loaded = set.frames[1].images.at("front");
  REQUIRE(loaded.same_shape(views[0].image));
  for (size_t i = 0; i < loaded.data.size(); ++i)
    CHECK(loaded.data[i] == Catch::Approx(views[0].image.data[i]).margin(1.0 / 255));
  // depth survives the f32 PFM quantization, labels are exact
  const Image& d_loaded = set.frames[1].depths.at("front");
  REQUIRE(d_loaded.data.size() == views[0].depth.data.size());
  for (size_t i = 0; i < d_loaded.data.size(); ++i) {
    const double expect = views[0].depth.data[i];
    if (std::isinf(expect))
      CHECK(std::isinf(d_loaded.data[i]));
    else
      CHECK(d_loaded.data[i] == Catch::Approx(expect).epsilon(1e-6));
  }
  CHECK(set.frames[1].labels.at("front") == views[0].labels);
  // pose roundtrip
  CHECK((set.frames[2].world_from_ego.translation - Eigen::Vector3d(0, 0.6, 0)).norm() < 1e-12);
}

TEST_CASE("file hashing is stable", "[io]") {
  TempDir tmp;
  const std::string path = (tmp.path / "x.bin").string();
  write_text_file(path, "occupancy");
  const std::string h1 = hash_file_hex(path);
  CHECK(h1 == hash_file_hex(path));
  write_text_file(path, "occupancy!");
  CHECK(h1 != hash_file_hex(path));
  CHECK(h1.size() == 16);
}
