#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "occfield/geometry.hpp"
#include "occfield/image.hpp"

using namespace occfield;

namespace {
CameraModel test_camera() {
  CameraModel cam;
  cam.name = "test";
  cam.fx = cam.fy = 100.0;
  cam.cx = cam.cy = 50.0;
  cam.width = cam.height = 100;
  return cam;
}

Pose random_pose(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1, 1);
  Pose p = Pose::axis_rotation(0, u(rng)) * Pose::axis_rotation(1, u(rng)) *
           Pose::axis_rotation(2, u(rng));
  p.translation = {u(rng) * 5, u(rng) * 5, u(rng) * 5};
  return p;
}
}  // namespace

TEST_CASE("project pinhole fixed points", "[geometry]") {
  const CameraModel cam = test_camera();
  SECTION("principal point") {
    const auto pr = project({0, 0, 5}, cam);
    REQUIRE(pr.valid);
    CHECK(pr.u == Catch::Approx(50.0));
    CHECK(pr.v == Catch::Approx(50.0));
    CHECK(pr.depth == Catch::Approx(5.0));
  }
  SECTION("hand-evaluated offset point") {
    const auto pr = project({1, 0, 2}, cam);
    REQUIRE(pr.valid);
    CHECK(pr.u == Catch::Approx(100.0));
    CHECK(pr.v == Catch::Approx(50.0));
    CHECK(pr.depth == Catch::Approx(2.0));
  }
  SECTION("behind the camera") {
    const auto pr = project({0, 0, -1}, cam);
    CHECK_FALSE(pr.valid);
    const auto pr0 = project({0.3, 0.1, 0.0}, cam);
    CHECK_FALSE(pr0.valid);
  }
}

TEST_CASE("pose group laws", "[geometry][property]") {
  std::mt19937_64 rng(31);
  for (int i = 0; i < 200; ++i) {
    const Pose a = random_pose(rng), b = random_pose(rng), c = random_pose(rng);
    CHECK(a.is_rigid(1e-9));
    const Pose ab_c = (a * b) * c;
    const Pose a_bc = a * (b * c);
    CHECK((ab_c.matrix() - a_bc.matrix()).cwiseAbs().maxCoeff() < 1e-9);
    const Pose id = a * a.inverse();
    CHECK((id.matrix() - Eigen::Matrix4d::Identity()).cwiseAbs().maxCoeff() < 1e-9);
    const Eigen::Vector3d p(1.0, -2.0, 0.5);
    CHECK(((a * b) * p - a * (b * p)).norm() < 1e-9);
  }
}

TEST_CASE("generate_rays pinhole geometry", "[geometry]") {
  CameraModel cam = test_camera();
  std::mt19937_64 rng(7);
  cam.ego_from_camera = random_pose(rng);
  SECTION("principal pixel looks along the optical axis") {
    const Ray r = generate_ray(cam, cam.cx, cam.cy);
    const Eigen::Vector3d fwd = cam.ego_from_camera.rotation.col(2);
    CHECK((r.dir.normalized() - fwd).norm() < 1e-12);
    CHECK((r.origin - cam.ego_from_camera.translation).norm() == 0.0);
  }
  SECTION("one pixel in u shifts the camera-frame direction by 1/fx") {
    const Ray r0 = generate_ray(cam, 20.0, 30.0);
    const Ray r1 = generate_ray(cam, 21.0, 30.0);
    const Eigen::Vector3d d0 = cam.ego_from_camera.rotation.transpose() * r0.dir;
    const Eigen::Vector3d d1 = cam.ego_from_camera.rotation.transpose() * r1.dir;
    CHECK(d1.x() - d0.x() == Catch::Approx(1.0 / cam.fx).epsilon(1e-12));
    CHECK(d1.y() - d0.y() == Catch::Approx(0.0).margin(1e-15));
    CHECK(d1.z() - d0.z() == Catch::Approx(0.0).margin(1e-15));
  }
  SECTION("ray/projection roundtrip over random pixels and depths") {
    std::uniform_real_distribution<double> px(0.0, 99.0), depth(0.2, 50.0);
    for (int i = 0; i < 1000; ++i) {
      const double u = px(rng), v = px(rng), t = depth(rng);
      const Ray r = generate_ray(cam, u, v);
      const auto pr = project(r.origin + t * r.dir, cam);
      REQUIRE(pr.valid);
      CHECK(std::abs(pr.u - u) < 1e-6);
      CHECK(std::abs(pr.v - v) < 1e-6);
    }
  }
}

TEST_CASE("camera validation", "[geometry]") {
  CameraModel cam = test_camera();
  CHECK_NOTHROW(cam.validate());
  cam.fx = 0;
  CHECK_THROWS_AS(cam.validate(), std::invalid_argument);
  cam = test_camera();
  cam.cx = 120;
  CHECK_THROWS_AS(cam.validate(), std::invalid_argument);
  cam = test_camera();
  cam.ego_from_camera.rotation(0, 0) = 2.0;
  CHECK_THROWS_AS(cam.validate(), std::invalid_argument);
}

TEST_CASE("bilinear sampling", "[geometry]") {
  Image img(4, 3, 1);
  for (int y = 0; y < 3; ++y)
    for (int x = 0; x < 4; ++x) img.at(x, y, 0) = static_cast<float>(x + 10 * y);

  SECTION("integer coordinates return stored values") {
    for (int y = 0; y < 3; ++y)
      for (int x = 0; x < 4; ++x) {
        const auto s = bilinear_sample(img, x, y);
        REQUIRE(s.valid);
        CHECK(s.value[0] == Catch::Approx(x + 10 * y));
      }
  }
  SECTION("midpoint of horizontal neighbors") {
    Image two(2, 1, 1);
    two.at(0, 0, 0) = 0.f;
    two.at(1, 0, 0) = 1.f;
    const auto s = bilinear_sample(two, 0.5, 0.0);
    REQUIRE(s.valid);
    CHECK(s.value[0] == Catch::Approx(0.5));
  }
  SECTION("out of bounds is invalid, not clamped") {
    CHECK_FALSE(bilinear_sample(img, -0.5, 0.0).valid);
    CHECK_FALSE(bilinear_sample(img, 0.0, 2.001).valid);
    CHECK(bilinear_sample(img, 3.0, 2.0).valid);
  }
  SECTION("linearity in the image argument") {
    Image im2(4, 3, 1);
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<float> u(0, 1);
    for (auto& v : im2.data) v = u(rng);
    Image mix(4, 3, 1);
    const double a = 0.3, b = 0.7;
    for (size_t i = 0; i < mix.data.size(); ++i)
      mix.data[i] = static_cast<float>(a * img.data[i] + b * im2.data[i]);
    std::uniform_real_distribution<double> q(0.0, 2.0);
    for (int i = 0; i < 100; ++i) {
      const double qu = q(rng), qv = q(rng);
      const double lhs = bilinear_sample(mix, qu, qv).value[0];
      const double rhs =
          a * bilinear_sample(img, qu, qv).value[0] + b * bilinear_sample(im2, qu, qv).value[0];
      CHECK(lhs == Catch::Approx(rhs).margin(1e-6));
    }
  }
  SECTION("spatial gradient matches finite differences") {
    std::array<double, 4> du{}, dv{};
    REQUIRE(bilinear_gradient(img, 1.3, 0.6, du, dv));
    const double h = 1e-5;
    const double fd_u =
        (bilinear_sample(img, 1.3 + h, 0.6).value[0] - bilinear_sample(img, 1.3 - h, 0.6).value[0]) /
        (2 * h);
    const double fd_v =
        (bilinear_sample(img, 1.3, 0.6 + h).value[0] - bilinear_sample(img, 1.3, 0.6 - h).value[0]) /
        (2 * h);
    CHECK(du[0] == Catch::Approx(fd_u).margin(1e-6));
    CHECK(dv[0] == Catch::Approx(fd_v).margin(1e-6));
  }
}
