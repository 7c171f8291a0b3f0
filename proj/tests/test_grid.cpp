#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <random>

#include "occfield/grid.hpp"
#include "occfield/image_io.hpp"

using namespace occfield;

namespace {
OccupancyGrid small_grid(int classes = 0) {
  const auto params = ContractionParams::make(2.0 / 3.0, {-4, -4, -1}, {4, 4, 1});
  return OccupancyGrid::make({12, 12, 3}, {8, 8, 2}, classes, params, -2.f);
}
}  // namespace

TEST_CASE("grid construction and geometry", "[grid]") {
  const OccupancyGrid g = small_grid();
  CHECK(g.voxel_size == Catch::Approx(1.0));
  CHECK(g.voxel_count() == 12u * 12 * 3);
  CHECK(g.inside_offset() == Eigen::Vector3i(2, 2, 0));  // (12-8)/2, (3-2)/2
  // voxel centers tile [-1,1] exactly
  CHECK(g.voxel_center(0, 0, 0).x() == Catch::Approx(-1.0 + 1.0 / 12.0));
  CHECK(g.voxel_center(11, 0, 0).x() == Catch::Approx(1.0 - 1.0 / 12.0));
  CHECK_THROWS_AS(OccupancyGrid::make({12, 12, 3}, {13, 8, 2}, 0,
                                      ContractionParams::make(2.0 / 3.0, {-4, -4, -1}, {4, 4, 1}),
                                      0.f),
                  std::invalid_argument);
  // non-cubic inside voxels rejected
  CHECK_THROWS_AS(OccupancyGrid::make({12, 12, 4}, {8, 8, 3}, 0,
                                      ContractionParams::make(2.0 / 3.0, {-4, -4, -1}, {4, 4, 1}),
                                      0.f),
                  std::invalid_argument);
}

TEST_CASE("trilinear sampling", "[grid]") {
  OccupancyGrid g = small_grid(2);
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<float> u(-1, 1);
  for (auto& v : g.opacity_raw) v = u(rng);
  for (auto& v : g.semantic_raw) v = u(rng);

  SECTION("voxel centers return stored values") {
    for (int i : {0, 3, 11})
      for (int j : {0, 7})
        for (int k : {0, 2}) {
          double sem[2];
          const double got = sample_trilinear(g, g.voxel_center(i, j, k), sem);
          CHECK(got == Catch::Approx(g.opacity_raw[g.index(i, j, k)]).margin(1e-12));
          CHECK(sem[0] == Catch::Approx(g.semantic_raw[g.index(i, j, k) * 2]).margin(1e-12));
          CHECK(sem[1] == Catch::Approx(g.semantic_raw[g.index(i, j, k) * 2 + 1]).margin(1e-12));
        }
  }
  SECTION("midpoint of two voxel centers averages them") {
    OccupancyGrid h = small_grid();
    h.opacity_raw[h.index(3, 4, 1)] = 2.f;
    h.opacity_raw[h.index(4, 4, 1)] = 4.f;
    const Eigen::Vector3d mid = 0.5 * (h.voxel_center(3, 4, 1) + h.voxel_center(4, 4, 1));
    CHECK(sample_trilinear(h, mid) == Catch::Approx(3.0));
  }
  SECTION("weights sum to one and sampling is linear in parameters") {
    std::uniform_real_distribution<double> q(-0.999, 0.999);
    for (int i = 0; i < 200; ++i) {
      const Eigen::Vector3d p(q(rng), q(rng), q(rng));
      const TrilinearStencil s = make_stencil(g, p);
      double wsum = 0;
      for (double w : s.weight) {
        CHECK(w >= 0.0);
        wsum += w;
      }
      CHECK(wsum == Catch::Approx(1.0).epsilon(1e-12));
    }
  }
  SECTION("queries at the cube boundary clamp instead of reading out of range") {
    CHECK_NOTHROW(sample_trilinear(g, {1.0, 1.0, 1.0}));
    CHECK_NOTHROW(sample_trilinear(g, {-1.0, 0.2, -1.0}));
  }
}

TEST_CASE("gradient scatter mirrors the forward weights", "[grid]") {
  OccupancyGrid g = small_grid();
  GradientBuffers buf = GradientBuffers::zeros(g);

  SECTION("voxel center puts the whole gradient on that voxel") {
    scatter_gradient(g, buf, g.voxel_center(5, 6, 1), 1.0);
    CHECK(buf.opacity[g.index(5, 6, 1)] == Catch::Approx(1.0));
    double total = 0;
    for (double v : buf.opacity) total += v;
    CHECK(total == Catch::Approx(1.0));
  }
  SECTION("scattered gradients sum to the upstream value") {
    buf.zero();
    scatter_gradient(g, buf, {0.123, -0.456, 0.789}, 2.5);
    double total = 0;
    for (double v : buf.opacity) total += v;
    CHECK(total == Catch::Approx(2.5).epsilon(1e-12));
  }
  SECTION("finite difference: corner perturbation moves the sample by weight*h") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> q(-0.9, 0.9);
    for (int trial = 0; trial < 20; ++trial) {
      const Eigen::Vector3d p(q(rng), q(rng), q(rng));
      const TrilinearStencil s = make_stencil(g, p);
      const double base = sample_trilinear(g, p);
      const float h = 0.25f;
      for (int corner = 0; corner < 8; ++corner) {
        // boundary clamping can alias two stencil slots onto one voxel
        double weight = 0;
        for (int other = 0; other < 8; ++other)
          if (s.index[other] == s.index[corner]) weight += s.weight[other];
        g.opacity_raw[s.index[corner]] += h;
        const double moved = sample_trilinear(g, p);
        g.opacity_raw[s.index[corner]] -= h;
        CHECK(moved - base == Catch::Approx(weight * h).margin(1e-7));
      }
    }
  }
}

TEST_CASE("contract -> voxel index -> invert lands within one voxel", "[grid][property]") {
  const OccupancyGrid g = small_grid();
  std::mt19937_64 rng(77);
  std::uniform_real_distribution<double> u(-3.9, 3.9);
  std::uniform_real_distribution<double> uz(-0.9, 0.9);
  for (int i = 0; i < 500; ++i) {
    const Eigen::Vector3d ego(u(rng), u(rng), uz(rng));
    const Eigen::Vector3d c = contract_point(ego, g.contraction);
    // nearest voxel center, then back to ego space
    Eigen::Vector3i idx;
    for (int a = 0; a < 3; ++a) {
      const double x = (c[a] + 1.0) / (2.0 / g.dims[a]) - 0.5;
      idx[a] = std::clamp(static_cast<int>(std::lround(x)), 0, g.dims[a] - 1);
    }
    const Eigen::Vector3d back =
        invert_point(g.voxel_center(idx.x(), idx.y(), idx.z()), g.contraction);
    // inside the linear region a voxel is voxel_size wide per axis
    CHECK((back - ego).cwiseAbs().maxCoeff() <= g.voxel_size * 0.5 + 1e-9);
  }
}

TEST_CASE("OCCF checkpoint roundtrip", "[grid][io]") {
  OccupancyGrid g = small_grid(3);
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<float> u(-5, 5);
  for (auto& v : g.opacity_raw) v = u(rng);
  for (auto& v : g.semantic_raw) v = u(rng);

  const auto dir = std::filesystem::temp_directory_path() / "occf_test";
  std::filesystem::create_directories(dir);
  const std::string path = (dir / "grid.occf").string();
  save_grid(g, path);
  const OccupancyGrid loaded = load_grid(path);
  CHECK(loaded.dims == g.dims);
  CHECK(loaded.inside_dims == g.inside_dims);
  CHECK(loaded.num_classes == 3);
  CHECK(loaded.opacity_raw == g.opacity_raw);
  CHECK(loaded.semantic_raw == g.semantic_raw);
  CHECK(loaded.contraction.alpha == Catch::Approx(g.contraction.alpha).epsilon(1e-7));

  // re-save is byte identical
  const std::string path2 = (dir / "grid2.occf").string();
  save_grid(loaded, path2);
  CHECK(read_text_file(path) == read_text_file(path2));

  std::filesystem::remove_all(dir);
}
