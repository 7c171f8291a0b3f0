#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "occfield/metrics.hpp"

using namespace occfield;

namespace {
Image single(double v) {
  Image img(1, 1, 1);
  img.at(0, 0, 0) = static_cast<float>(v);
  return img;
}
}  // namespace

TEST_CASE("depth_metrics fixtures", "[metrics]") {
  SECTION("perfect prediction") {
    Image d(4, 4, 1, 3.5f);
    const DepthMetrics m = depth_metrics(d, d);
    CHECK(m.abs_rel == 0.0);
    CHECK(m.sq_rel == 0.0);
    CHECK(m.rmse == 0.0);
    CHECK(m.rmse_log == 0.0);
    CHECK(m.delta_1 == 1.0);
    CHECK(m.delta_2 == 1.0);
    CHECK(m.delta_3 == 1.0);
    CHECK(m.valid_count == 16);
  }
  SECTION("pred 2, gt 1: every statistic by hand") {
    const DepthMetrics m = depth_metrics(single(2.0), single(1.0));
    CHECK(m.abs_rel == Catch::Approx(1.0));
    CHECK(m.sq_rel == Catch::Approx(1.0));
    CHECK(m.rmse == Catch::Approx(1.0));
    CHECK(m.rmse_log == Catch::Approx(std::log(2.0)));
    CHECK(m.delta_1 == 0.0);  // 2 >= 1.25
    CHECK(m.delta_2 == 0.0);  // 2 >= 1.5625
    CHECK(m.delta_3 == 0.0);  // 2 >= 1.953125 = 1.25^3
  }
  SECTION("a ratio just under 1.25^3 does pass the third threshold") {
    const DepthMetrics m = depth_metrics(single(1.95), single(1.0));
    CHECK(m.delta_1 == 0.0);
    CHECK(m.delta_2 == 0.0);
    CHECK(m.delta_3 == 1.0);
  }
  SECTION("pred 1.2, gt 1 passes the first threshold") {
    const DepthMetrics m = depth_metrics(single(1.2), single(1.0));
    CHECK(m.delta_1 == 1.0);
  }
  SECTION("clip range controls validity; out-of-range gt is excluded") {
    Image pred(2, 1, 1), gt(2, 1, 1);
    pred.at(0, 0, 0) = 5.f;
    gt.at(0, 0, 0) = 5.f;
    pred.at(1, 0, 0) = 5.f;
    gt.at(1, 0, 0) = 200.f;  // beyond the 80 m clip
    const DepthMetrics m = depth_metrics(pred, gt);
    CHECK(m.valid_count == 1);
    CHECK(m.abs_rel == 0.0);
    Image inf_gt(1, 1, 1, std::numeric_limits<float>::infinity());
    CHECK_THROWS_AS(depth_metrics(single(1.0), inf_gt), std::runtime_error);
  }
  SECTION("predictions are clamped into the clip range") {
    const DepthMetrics m = depth_metrics(single(500.0), single(79.0));
    CHECK(m.abs_rel == Catch::Approx((80.0 - 79.0) / 79.0));
  }
  SECTION("scale invariance of the relative statistics") {
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<float> u(1.f, 20.f);
    Image pred(16, 16, 1), gt(16, 16, 1);
    for (size_t i = 0; i < pred.data.size(); ++i) {
      gt.data[i] = u(rng);
      pred.data[i] = gt.data[i] * (0.8f + 0.4f * (i % 7) / 7.f);
    }
    const DepthMetrics a = depth_metrics(pred, gt);
    Image pred3 = pred, gt3 = gt;
    for (auto& v : pred3.data) v *= 3.f;
    for (auto& v : gt3.data) v *= 3.f;
    const DepthMetrics b = depth_metrics(pred3, gt3);
    CHECK(b.abs_rel == Catch::Approx(a.abs_rel).epsilon(1e-6));
    CHECK(b.sq_rel == Catch::Approx(3.0 * a.sq_rel).epsilon(1e-6));  // sq_rel carries one scale
    CHECK(b.rmse == Catch::Approx(3.0 * a.rmse).epsilon(1e-6));
    CHECK(b.rmse_log == Catch::Approx(a.rmse_log).epsilon(1e-6));
    CHECK(b.delta_1 == a.delta_1);
    CHECK(b.delta_2 == a.delta_2);
    CHECK(b.delta_3 == a.delta_3);
  }
}

TEST_CASE("occupancy_metrics fixtures", "[metrics]") {
  SECTION("perfect prediction") {
    const std::vector<uint8_t> g = {3, 255, 10, 3};
    const OccMetrics m = occupancy_metrics(g, g, {3, 10});
    CHECK(m.miou == 1.0);
    CHECK(m.binary_iou == 1.0);
    CHECK(m.precision == 1.0);
    CHECK(m.recall == 1.0);
  }
  SECTION("all-free prediction has zero recall") {
    const std::vector<uint8_t> pred = {255, 255};
    const std::vector<uint8_t> gt = {3, 255};
    const OccMetrics m = occupancy_metrics(pred, gt, {3});
    CHECK(m.recall == 0.0);
    CHECK(m.tp == 0);
  }
  SECTION("two-voxel confusion fixture") {
    const std::vector<uint8_t> pred = {3, 255};
    const std::vector<uint8_t> gt = {3, 3};
    const OccMetrics m = occupancy_metrics(pred, gt, {3});
    CHECK(m.class_iou.at(3) == Catch::Approx(0.5));
    CHECK(m.precision == Catch::Approx(1.0));
    CHECK(m.recall == Catch::Approx(0.5));
  }
  SECTION("miou averages only the evaluated classes") {
    const std::vector<uint8_t> pred = {3, 10, 7};
    const std::vector<uint8_t> gt = {3, 10, 255};
    const OccMetrics m = occupancy_metrics(pred, gt, {3, 10});
    CHECK(m.miou == Catch::Approx(1.0));  // the class-7 false positive is not averaged
    CHECK(m.fp == 1);
  }
  SECTION("ignore label skips voxels entirely") {
    const std::vector<uint8_t> pred = {3, 3};
    const std::vector<uint8_t> gt = {3, 254};
    const OccMetrics m = occupancy_metrics(pred, gt, {3}, 254);
    CHECK(m.class_iou.at(3) == 1.0);
    CHECK(m.fp == 0);
  }
  SECTION("validation") {
    CHECK_THROWS_AS(occupancy_metrics({1}, {1, 2}, {1}), std::invalid_argument);
    CHECK_THROWS_AS(occupancy_metrics({1}, {1}, {}), std::invalid_argument);
  }
}

TEST_CASE("extract_occupancy", "[metrics]") {
  const auto params = ContractionParams::make(2.0 / 3.0, {-2, -2, -1}, {2, 2, 1});
  OccupancyGrid g = OccupancyGrid::make({12, 12, 6}, {8, 8, 4}, 0, params, -30.f);

  SECTION("an all-off grid extracts as all free") {
    const auto labels = extract_occupancy(g, 0.5);
    for (uint8_t l : labels) CHECK(l == kUncertainLabel);
  }
  SECTION("one strong voxel extracts as occupied") {
    // inside voxel (3,2,1) lives at grid offset + (3,2,1)
    const Eigen::Vector3i off = g.inside_offset();
    g.opacity_raw[g.index(off.x() + 3, off.y() + 2, off.z() + 1)] = 30.f;
    const auto labels = extract_occupancy(g, 0.5);
    size_t occupied = 0;
    for (uint8_t l : labels) occupied += l != kUncertainLabel;
    CHECK(occupied == 1);
    const size_t idx =
        (static_cast<size_t>(3) * g.inside_dims.y() + 2) * g.inside_dims.z() + 1;
    CHECK(labels[idx] == 0);
  }
  SECTION("threshold sweep is monotone") {
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<float> u(-6.f, 6.f);
    for (auto& v : g.opacity_raw) v = u(rng);
    size_t prev = g.inside_voxel_count() + 1;
    for (double thr : {0.1, 0.3, 0.5, 0.7, 0.9}) {
      const auto labels = extract_occupancy(g, thr);
      size_t occ = 0;
      for (uint8_t l : labels) occ += l != kUncertainLabel;
      CHECK(occ <= prev);
      prev = occ;
    }
  }
  SECTION("semantic argmax maps through class ids") {
    OccupancyGrid gs = OccupancyGrid::make({12, 12, 6}, {8, 8, 4}, 2, params, -30.f);
    const Eigen::Vector3i off = gs.inside_offset();
    const size_t vox = gs.index(off.x(), off.y(), off.z());
    gs.opacity_raw[vox] = 30.f;
    gs.semantic_raw[vox * 2 + 0] = -1.f;
    gs.semantic_raw[vox * 2 + 1] = 2.f;
    const auto labels = extract_occupancy(gs, 0.5, RenderMode::Weight, {3, 10});
    CHECK(labels[0] == 10);
  }
}
