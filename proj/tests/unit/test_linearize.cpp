#include "doctest.h"

#include "cubeflow/linearize.hpp"

#include <cmath>
#include <random>

using namespace cubeflow;
using namespace cubeflow::linearize;

namespace {

std::shared_ptr<PlaneTwist> test_twist() {
  TwistSpec ts;
  ts.p = 2;
  ts.s_in = 0.1;
  ts.s_out = 0.4;
  ts.angle = 1.0;
  ts.area_angle = true;
  return std::make_shared<PlaneTwist>(ts);
}

Mat diag(double a, double b) {
  Mat m = Mat::Zero(2, 2);
  m(0, 0) = a;
  m(1, 1) = b;
  return m;
}

}  // namespace

TEST_CASE("norm bundle of affine maps") {
  Ball B{make_point({0.5, 0.5}), 0.1};
  auto id = measure_norms(smoothmaps::IdentityMap(2), B, 200);
  CHECK(id.D == doctest::Approx(1.0));
  CHECK(id.Dinv == doctest::Approx(1.0));
  CHECK(id.D2 == doctest::Approx(0.0));
  CHECK(id.M == doctest::Approx(2.0));

  smoothmaps::AffineMap A(diag(2.0, 0.5), make_point({0.0, 0.0}));
  auto a = measure_norms(A, B, 200);
  CHECK(a.M == doctest::Approx(4.0));
}

TEST_CASE("norm bundle of the exchange is stable") {
  auto ex = moser::mp_exchange(2, 1.0 / 3.0, moser::ExchangeMethod::ActionAngle);
  Ball B{make_point({0.5, 0.12}), 0.05};
  auto a = measure_norms(*ex, B, 1000);
  auto b = measure_norms(*ex, B, 2000);
  CHECK(std::isfinite(a.M));
  CHECK(b.M >= a.M);
  CHECK(b.M <= 1.05 * a.M);
}

TEST_CASE("admissible radius") {
  CHECK(admissible_radius(2.0, 1) == doctest::Approx(1.0 / 180.0));
  CHECK(admissible_radius(2.0, 2) == doctest::Approx(1.0 / 360.0));
  for (double M : {2.0, 5.0, 40.0})
    for (int ell : {1, 3, 8}) CHECK(10 * M * M * admissible_radius(M, ell) <= 0.5);
}

TEST_CASE("affine map linearizes to itself") {
  auto A = std::make_shared<smoothmaps::AffineMap>(diag(1.0, 1.0), make_point({0.1, -0.2}));
  const Point x0 = make_point({0.5, 0.5});
  auto nb = measure_norms(*A, Ball{x0, 0.05}, 100);
  const double r = 0.99 * admissible_radius(nb.M, 1);
  auto L = linearize_on_ball(A, x0, r, nb);
  CHECK(L->trivial());
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> U(0.4, 0.6);
  for (int i = 0; i < 100; ++i) {
    auto x = make_point({U(rng), U(rng)});
    CHECK((L->forward(x) - A->forward(x)).norm() < 1e-14);
  }
}

TEST_CASE("radius must be admissible") {
  auto phi = test_twist();
  const Point x0 = make_point({0.75, 0.5});
  auto nb = measure_norms(*phi, Ball{x0, 0.05}, 400);
  CHECK_THROWS_AS(linearize_on_ball(phi, x0, 2.0 * admissible_radius(nb.M, 1), nb), std::invalid_argument);
  CHECK_THROWS_AS(linearize_on_ball(phi, x0, admissible_radius(nb.M, 1), nb), std::invalid_argument);
}

TEST_CASE("surgery on a twist ball") {
  auto phi = test_twist();
  const Point x0 = make_point({0.75, 0.5});
  auto nb = measure_norms(*phi, Ball{x0, 0.05}, 400);
  const double r = 0.99 * admissible_radius(nb.M, 1);
  auto L = linearize_on_ball(phi, x0, r, nb);
  CHECK_FALSE(L->trivial());
  CHECK(L->radius() == r);

  CHECK(image_diameter(*L, Ball{x0, r}, 512) < 0.5);
  auto tc = tangent_containment(*phi, *L, 2000);
  CHECK(tc.outside == 0);
  CHECK(tc.worst_ratio < 1.0);
  CHECK(glue_derivative_bound(*L, 500) <= 10 * nb.M * r);

  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> U(-1.0, 1.0);
  auto in_ball = [&](double rad) {
    Point p(2);
    do {
      p = make_point({U(rng), U(rng)});
    } while (p.norm() > 1.0);
    return Point(x0 + rad * p);
  };
  const Mat D = L->tangent().A;
  for (int i = 0; i < 2000; ++i) {
    auto x = in_ball(0.5 * r);
    CHECK((L->forward(x) - L->tangent()(x)).norm() < 1e-9);
    auto y = in_ball(3.0 * r);
    if ((y - x0).norm() >= r) CHECK((L->forward(y) - phi->forward(y)).norm() < 1e-12);
    // injectivity of the glued map
    auto a = in_ball(r), b = in_ball(r);
    CHECK((L->glued(a) - L->glued(b)).norm() >= 0.5 * (D * (a - b)).norm());
    auto z = in_ball(r);
    CHECK((L->inverse(L->forward(z)) - z).norm() < 1e-8);
  }
}

TEST_CASE("boundary containment check") {
  auto phi = test_twist();
  const Point x0 = make_point({0.75, 0.5});
  Ball B{x0, 0.004};
  auto same = containment_check(*phi, *phi, B);
  CHECK(same.pass);
  CHECK(same.hausdorff == 0.0);

  auto nb = measure_norms(*phi, Ball{x0, 0.05}, 400);
  const double r = 0.99 * admissible_radius(nb.M, 1);
  auto L = linearize_on_ball(phi, x0, r, nb);
  auto glued = containment_check(*phi, *L, Ball{x0, r}, 2048, 1e-9);
  CHECK(glued.pass);

  smoothmaps::AffineMap shifted(diag(1.0, 1.0), make_point({1e-3, 0.0}));
  auto bad = containment_check(*phi, shifted, B);
  CHECK_FALSE(bad.pass);
  CHECK(bad.hausdorff > 1e-4);
}

TEST_CASE("norm bundle json") {
  auto nb = measure_norms(smoothmaps::IdentityMap(2), Ball{make_point({0.5, 0.5}), 0.1}, 50);
  auto j = nb.to_json();
  CHECK(j["M"] == doctest::Approx(2.0));
  CHECK(j["samples"] == 50);
}
