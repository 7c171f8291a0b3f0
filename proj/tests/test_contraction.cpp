#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "occfield/contraction.hpp"

using namespace occfield;

TEST_CASE("derive_constants closed form", "[contraction]") {
  SECTION("alpha = 2/3, the paper setting in exact rational form") {
    auto [a, b] = derive_constants(2.0 / 3.0);
    // the nearest-double input already carries ~1e-16 of error, so bit-exact
    // equality with 1/6 is not attainable; a couple of ulps is
    CHECK(std::abs(a - 1.0 / 6.0) <= 4 * std::numeric_limits<double>::epsilon());
    CHECK(std::abs(b - (-0.5)) <= 4 * std::numeric_limits<double>::epsilon());
  }
  SECTION("alpha = 0.667") {
    auto [a, b] = derive_constants(0.667);
    CHECK(a == Catch::Approx(0.333 * 0.333 / 0.667).epsilon(1e-12));
    CHECK(a == Catch::Approx(0.1662504).margin(1e-6));
    CHECK(b == Catch::Approx(-0.5007496).margin(1e-6));
  }
  SECTION("alpha = 1/2 boundary value") {
    auto [a, b] = derive_constants(0.5);
    CHECK(a == 0.5);
    CHECK(b == 0.0);
  }
  SECTION("rejects out-of-range and non-finite") {
    CHECK_THROWS_AS(derive_constants(0.0), std::invalid_argument);
    CHECK_THROWS_AS(derive_constants(1.0), std::invalid_argument);
    CHECK_THROWS_AS(derive_constants(-0.3), std::invalid_argument);
    CHECK_THROWS_AS(derive_constants(std::nan("")), std::invalid_argument);
    CHECK_THROWS_AS(derive_constants(std::numeric_limits<double>::infinity()),
                    std::invalid_argument);
  }
}

TEST_CASE("ContractionParams construction", "[contraction]") {
  const auto p = ContractionParams::make(2.0 / 3.0, {-40, -40, -1}, {40, 40, 5.4});
  CHECK(p.center().z() == Catch::Approx(2.2));
  CHECK(p.half_extents().x() == Catch::Approx(40.0));
  CHECK_THROWS_AS(ContractionParams::make(0.5, {-1, -1, -1}, {1, 1, 1}), std::invalid_argument);
  CHECK_THROWS_AS(ContractionParams::make(2.0 / 3.0, {1, -1, -1}, {1, 1, 1}),
                  std::invalid_argument);
}

TEST_CASE("contract_axis fixed points", "[contraction]") {
  const auto p = ContractionParams::make(2.0 / 3.0, {-40, -40, -40}, {40, 40, 40});
  CHECK(contract_axis(0.0, p, 0) == 0.0);
  CHECK(contract_axis(40.0, p, 0) == Catch::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(contract_axis(-40.0, p, 0) == Catch::Approx(-2.0 / 3.0).epsilon(1e-15));
  // outer branch by hand: 1 - (1/6)/(2 - 1/2) = 8/9
  CHECK(contract_axis(80.0, p, 0) == Catch::Approx(8.0 / 9.0).epsilon(1e-15));
  CHECK_THROWS_AS(contract_axis(std::nan(""), p, 0), std::invalid_argument);
}

TEST_CASE("invert_axis fixed points", "[contraction]") {
  const auto p = ContractionParams::make(2.0 / 3.0, {-40, -40, -40}, {40, 40, 40});
  CHECK(invert_axis(2.0 / 3.0, p, 0) == Catch::Approx(40.0).epsilon(1e-15));
  CHECK(invert_axis(8.0 / 9.0, p, 0) == Catch::Approx(80.0).epsilon(1e-14));
  CHECK(invert_axis(0.0, p, 0) == 0.0);
  CHECK_THROWS_AS(invert_axis(1.0, p, 0), std::domain_error);
  CHECK_THROWS_AS(invert_axis(-1.2, p, 0), std::domain_error);
}

TEST_CASE("seam and derivative continuity", "[contraction]") {
  const double r_b = 40.0, alpha = 2.0 / 3.0;
  auto [a, b] = derive_constants(alpha);
  for (double eps : {1e-6 * r_b, 1e-7 * r_b, 1e-9 * r_b}) {
    const double lo = contract_scalar(r_b - eps, r_b, alpha, a, b);
    const double hi = contract_scalar(r_b + eps, r_b, alpha, a, b);
    CHECK(std::abs(hi - lo) <= 2 * eps * alpha / r_b + 1e-12);
  }
  // central differences on either side of the seam
  const double h = 1e-6 * r_b;
  const double d_in =
      (contract_scalar(r_b, r_b, alpha, a, b) - contract_scalar(r_b - 2 * h, r_b, alpha, a, b)) /
      (2 * h);
  const double d_out =
      (contract_scalar(r_b + 2 * h, r_b, alpha, a, b) - contract_scalar(r_b, r_b, alpha, a, b)) /
      (2 * h);
  CHECK(std::abs(d_in - d_out) / std::abs(d_in) < 1e-5);
  // and both match the analytic derivative
  CHECK(d_in == Catch::Approx(contract_scalar_derivative(r_b - h, r_b, alpha, a, b)).epsilon(1e-5));
  CHECK(d_out == Catch::Approx(contract_scalar_derivative(r_b + h, r_b, alpha, a, b)).epsilon(1e-4));
}

TEST_CASE("monotonicity and boundedness", "[contraction][property]") {
  const double r_b = 7.5, alpha = 0.6;
  auto [a, b] = derive_constants(alpha);
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> mag(-6, 6);  // log10 magnitude
  std::uniform_real_distribution<double> sign(-1, 1);
  double prev_r = -1e308;
  for (int i = 0; i < 2000; ++i) {
    const double r = std::copysign(r_b * std::pow(10.0, mag(rng)), sign(rng));
    const double c = contract_scalar(r, r_b, alpha, a, b);
    CHECK(std::abs(c) < 1.0);
    const double r2 = r + std::abs(r) * 1e-3 + 1e-6;
    CHECK(contract_scalar(r2, r_b, alpha, a, b) > c);
    (void)prev_r;
  }
  // far asymptote approaches but never reaches 1
  CHECK(contract_scalar(1e300, r_b, alpha, a, b) < 1.0);
  CHECK(contract_scalar(1e300, r_b, alpha, a, b) > 0.999999);
  CHECK(contract_scalar(-1e300, r_b, alpha, a, b) > -1.0);
}

TEST_CASE("roundtrip identity over six decades", "[contraction][property]") {
  const double r_b = 40.0, alpha = 2.0 / 3.0;
  auto [a, b] = derive_constants(alpha);
  std::mt19937_64 rng(23);
  std::uniform_real_distribution<double> mag(-3, 6);
  std::uniform_int_distribution<int> coin(0, 1);
  for (int i = 0; i < 10000; ++i) {
    const double r = (coin(rng) ? 1 : -1) * r_b * std::pow(10.0, mag(rng));
    const double back = invert_scalar(contract_scalar(r, r_b, alpha, a, b), r_b, alpha, a, b);
    CHECK(std::abs(back - r) <= 1e-9 * std::max(1.0, std::abs(r)));
  }
}

TEST_CASE("contract_point and invert_point", "[contraction]") {
  const auto p = ContractionParams::make(2.0 / 3.0, {-40, -40, -1}, {40, 40, 5.4});
  const Eigen::Vector3d center = p.center();
  CHECK(contract_point(center, p).norm() == 0.0);
  // the x seam: half extent 40 from a centered region
  const auto c = contract_point({40.0, 0.0, center.z()}, p);
  CHECK(c.x() == Catch::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(c.y() == Catch::Approx(0.0).margin(1e-15));
  CHECK(c.z() == Catch::Approx(0.0).margin(1e-15));

  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-120, 120);
  for (int i = 0; i < 1000; ++i) {
    const Eigen::Vector3d point(u(rng), u(rng), u(rng));
    const Eigen::Vector3d back = invert_point(contract_point(point, p), p);
    CHECK((back - point).cwiseAbs().maxCoeff() < 1e-9);
  }
}
