#include "doctest.h"

#include "cubeflow/rearrange.hpp"
#include "cubeflow/verify.hpp"

#include <cmath>

using namespace cubeflow;
using namespace cubeflow::rearrange;

namespace {

Point dyadic_center(int n, int j) {
  Point c(n);
  for (int i = 0; i < n; ++i) c[i] = geometry::dyadic_coord(j, i);
  return c;
}

}  // namespace

TEST_CASE("exchange swaps the dyadic cubes") {
  for (int n : {2, 3}) {
    CAPTURE(n);
    ExchangeSpec spec;
    spec.n = n;
    auto ex = exchange_diffeo(spec);
    const int m = 1 << n;
    for (int j = 1; j <= m; ++j) {
      const int p = geometry::dyadic_pair(n, j);
      auto y = ex->forward(dyadic_center(n, j));
      CHECK((y - dyadic_center(n, p)).norm() < 1e-12);
      CHECK(ex->cube_neighbourhood(dyadic_center(n, j)) == j);
      // translation on the whole cube neighbourhood
      Point off = Point::Constant(n, 0.9 / 6.0);
      auto z = ex->forward(dyadic_center(n, j) + off);
      CHECK((z - (dyadic_center(n, p) + off)).norm() < 1e-12);
    }
  }
}

TEST_CASE("exchange is the identity near the boundary") {
  auto ex = exchange_diffeo({});
  for (double t : {0.0, 0.003, 0.3, 0.7, 1.0}) {
    auto a = make_point({t, 0.001});
    auto b = make_point({0.999, t});
    CHECK(ex->forward(a) == a);
    CHECK(ex->forward(b) == b);
  }
}

TEST_CASE("exchange jacobian on cube neighbourhoods") {
  auto ex = exchange_diffeo({});
  for (int j = 1; j <= 4; ++j) {
    auto J = smoothmaps::numeric_jacobian(*ex, dyadic_center(2, j) + make_point({0.05, -0.04}), 1e-6, Box::unit(2)).J;
    CHECK((J - Mat::Identity(2, 2)).cwiseAbs().maxCoeff() < 1e-7);
  }
}

TEST_CASE("exchange inverse") {
  auto ex = exchange_diffeo({});
  verify::Sampler s(2, 7);
  for (int i = 0; i < 500; ++i) {
    auto x = s.next();
    CHECK((ex->inverse(ex->forward(x)) - x).norm() < 1e-6);
  }
}

TEST_CASE("measure preserving exchange has unit jacobian") {
  ExchangeSpec spec;
  auto mp = mp_exchange_exact(spec);
  CHECK(mp->measure_preserving());
  verify::Sampler s(2, 3, verify::Scheme::Sobol);
  // the transition shells are about 1e-2 wide; larger steps straddle them
  for (int i = 0; i < 1000; ++i) {
    auto x = s.next();
    auto J = smoothmaps::numeric_jacobian(*mp, x, 1e-7, Box::unit(2)).J;
    CHECK(J.determinant() == doctest::Approx(1.0).epsilon(1e-2));
  }
  auto y = mp->forward(dyadic_center(2, 1));
  CHECK((y - dyadic_center(2, 3)).norm() < 1e-12);
}

TEST_CASE("exchange spec validation") {
  ExchangeSpec one;
  one.n = 1;
  CHECK_THROWS_AS(one.resolved(), ConstructionError);
  ExchangeSpec wide;
  wide.ratio = 0.5;
  CHECK_THROWS_AS(wide.resolved(), ConstructionError);
  auto r = ExchangeSpec{}.resolved();
  CHECK(r.collar > 0);
  CHECK(r.collar + r.margin + r.shell < r.gap());
  auto g3 = exchange_spec_for_generation(2, 3);
  CHECK(g3.ratio == doctest::Approx(7.0 / 15.0));
}

// Cell counts frozen from tests/oracles/grid_packing.py
TEST_CASE("grid cube packing") {
  Ball unit_diameter{make_point({0.0, 0.0}), 0.5};
  auto one = pack_grid_cubes(unit_diameter, 0.5, 0.9);
  REQUIRE(one.size() == 1);
  CHECK(one[0].center_d().norm() < 1e-15);
  CHECK(2 * one[0].half_edge_d() == doctest::Approx(0.45));

  Ball disk{make_point({0.0, 0.0}), 1.0};
  CHECK(pack_grid_cubes(disk, 0.5, 0.9).size() == 5);
  CHECK(pack_grid_cubes(disk, 0.1, 0.9).size() == 277);

  auto fine = pack_grid_cubes(disk, 0.1, 0.9);
  double area = 0.0;
  for (auto& c : fine) area += std::pow(2 * c.half_edge_d(), 2);
  CHECK(area <= disk.volume());
  // cells fully inside the disk; the shrink leaves 0.81 of each cell
  double cells = fine.size() * 0.01;
  CHECK(cells >= 0.5 * disk.volume());
  CHECK(area == doctest::Approx(0.81 * cells));
  for (auto& c : fine) CHECK(c.center_d().norm() + std::sqrt(2.0) * 0.05 <= 1.0);

  Ellipsoid e{make_point({0.0, 0.0}), Mat::Identity(2, 2)};
  e.shape(0, 0) = 2.0;
  e.shape(1, 1) = 0.5;
  double ea = 0.0;
  for (auto& c : pack_grid_cubes(e, 0.1, 0.9)) ea += std::pow(2 * c.half_edge_d(), 2);
  CHECK(ea <= e.volume());
  CHECK(ea > 0.25 * e.volume());
  CHECK_THROWS_AS(pack_grid_cubes(disk, 0.1, 1.0), std::invalid_argument);
}

TEST_CASE("transport with identity assignment") {
  Ball B{make_point({0.0, 0.0}), 1.0};
  CubeTransportSpec spec;
  spec.source = B;
  spec.target = Ellipsoid{B.center, Mat::Identity(2, 2)};
  spec.source_cubes = pack_grid_cubes(B, 0.5, 0.9);
  spec.target_cubes = spec.source_cubes;
  for (size_t j = 0; j < spec.source_cubes.size(); ++j) spec.assignment.push_back(static_cast<int>(j));
  auto m = ball_ellipsoid_transport(spec);
  verify::Sampler s(2, 5);
  for (int i = 0; i < 200; ++i) {
    auto x = s.next_in(B);
    CHECK((m->forward(x) - x).norm() < 1e-14);
  }
}

TEST_CASE("transport swapping two cubes") {
  Ball B{make_point({0.0, 0.0}), 1.0};
  CubeTransportSpec spec;
  spec.source = B;
  spec.target = Ellipsoid{B.center, Mat::Identity(2, 2)};
  AxisCube left{2, {Rational(-1, 4), Rational(0)}, Rational(1, 40)};
  AxisCube right{2, {Rational(1, 4), Rational(0)}, Rational(1, 40)};
  spec.source_cubes = {left, right};
  spec.target_cubes = {left, right};
  spec.assignment = {1, 0};
  auto m = ball_ellipsoid_transport(spec);
  auto off = make_point({0.02, -0.03});
  CHECK((m->forward(left.center_d() + off) - (right.center_d() + off)).norm() < 1e-9);
  CHECK((m->forward(right.center_d() + off) - (left.center_d() + off)).norm() < 1e-9);
  auto edge = make_point({0.0, 0.995});
  CHECK((m->forward(edge) - edge).norm() < 1e-12);
  auto p = make_point({0.1, 0.3});
  CHECK((m->inverse(m->forward(p)) - p).norm() < 1e-8);
}

TEST_CASE("transport onto an ellipse") {
  Ball B{make_point({0.0, 0.0}), 1.0};
  CubeTransportSpec spec;
  spec.source = B;
  Mat L = Mat::Identity(2, 2);
  L(0, 0) = 2.0;
  L(1, 1) = 0.5;
  spec.target = Ellipsoid{B.center, L};
  AxisCube c{2, {Rational(0), Rational(0)}, Rational(1, 20)};
  spec.source_cubes = {c};
  spec.target_cubes = natural_targets(spec);
  spec.assignment = {0};
  auto m = ball_ellipsoid_transport(spec);

  auto inner = make_point({0.01, 0.02});
  CHECK((m->forward(inner) - inner).norm() < 1e-9);
  for (double th : {0.3, 1.7, 4.0}) {
    auto x = make_point({0.995 * std::cos(th), 0.995 * std::sin(th)});
    CHECK((m->forward(x) - L * x).norm() < 1e-9);
    auto J = smoothmaps::numeric_jacobian(*m, x, 1e-6, Box::everywhere(2)).J;
    CHECK(J.determinant() == doctest::Approx(1.0).epsilon(1e-4));
  }
  verify::Sampler s(2, 9, verify::Scheme::Sobol);
  for (int i = 0; i < 300; ++i) {
    auto x = s.next_in(B);
    auto J = smoothmaps::numeric_jacobian(*m, x, 1e-6, Box::everywhere(2)).J;
    CHECK(J.determinant() > 0.0);
    CHECK(spec.target.contains(m->forward(x)));
  }
}
