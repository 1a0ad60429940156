#include "doctest.h"

#include "cubeflow/moser.hpp"
#include "cubeflow/verify.hpp"

#include <cmath>
#include <filesystem>

using namespace cubeflow;
using namespace cubeflow::moser;

namespace {

double max_det_defect(const SmoothMap& m, int count, double h) {
  verify::Sampler s(m.dim(), 11, verify::Scheme::Sobol);
  double worst = 0.0;
  for (int i = 0; i < count; ++i) {
    auto J = smoothmaps::numeric_jacobian(m, s.next(), h, Box::unit(m.dim())).J;
    worst = std::max(worst, std::abs(J.determinant() - 1.0));
  }
  return worst;
}

}  // namespace

TEST_CASE("unit density gives the identity") {
  auto p = JacobianProblem::from_function(Box::unit(2), 32, 0.1, [](const Point&) { return 1.0; });
  CHECK(p.mass_defect() == doctest::Approx(0.0));
  auto psi = prescribe_jacobian(p, 1e-6);
  verify::Sampler s(2, 2);
  for (int i = 0; i < 200; ++i) {
    auto x = s.next();
    CHECK((psi->forward(x) - x).norm() < 1e-12);
  }
}

TEST_CASE("benchmark residual and refinement") {
  SolveReport r32, r64;
  prescribe_jacobian(benchmark_problem(32), 0, {}, &r32);
  auto psi = prescribe_jacobian(benchmark_problem(64), 1e-2, {}, &r64);
  CHECK(std::abs(r64.mass_defect) < 1e-12);
  CHECK(r64.residual < r32.residual);
  CHECK(r64.residual < 1e-2);
  // collar is untouched
  auto c = make_point({0.03, 0.6});
  CHECK((psi->forward(c) - c).norm() < 1e-14);
  CHECK(jacobian_residual(*psi, benchmark_problem(64), 1e-5) == doctest::Approx(r64.residual));
  // a residual check that cannot be met
  CHECK_THROWS_AS(prescribe_jacobian(benchmark_problem(32), 1e-6), NumericError);
}

TEST_CASE("protected regions stay fixed") {
  auto p = benchmark_problem(128);
  p.protected_regions.push_back(Box{make_point({0.15, 0.15}), make_point({0.25, 0.25})});
  p.validate();
  auto psi = prescribe_jacobian(p, 1e-2);
  verify::Sampler s(2, 4);
  for (int i = 0; i < 200; ++i) {
    auto x = s.next_in(p.protected_regions[0]);
    CHECK((psi->forward(x) - x).norm() < 1e-12);
  }
}

TEST_CASE("problem validation") {
  SUBCASE("non-positive density") {
    auto p = JacobianProblem::from_function(Box::unit(2), 16, 0.1, [](const Point& x) {
      return 1.0 - 2.0 * smoothmaps::bump((x - make_point({0.5, 0.5})).norm() / 0.2);
    });
    CHECK_THROWS_AS(p.validate(), ConstructionError);
  }
  SUBCASE("density off one on the collar") {
    auto p = JacobianProblem::from_function(Box::unit(2), 16, 0.1, [](const Point& x) { return 1.0 + 0.1 * (x[0] - 0.5); });
    CHECK_THROWS_AS(p.validate(), ConstructionError);
  }
  SUBCASE("mass excess") {
    auto p = JacobianProblem::from_function(Box::unit(2), 32, 0.1, [](const Point& x) {
      return 1.0 + 0.2 * smoothmaps::bump((x - make_point({0.5, 0.5})).norm() / 0.2);
    });
    CHECK(p.mass_defect() > 1e-3);
    CHECK_THROWS_AS(p.validate(), ConstructionError);
  }
}

TEST_CASE("problem save and load") {
  auto dir = std::filesystem::temp_directory_path() / "cubeflow_test_moser";
  std::filesystem::create_directories(dir);
  auto p = benchmark_problem(16);
  p.protected_regions.push_back(Box{make_point({0.1, 0.1}), make_point({0.2, 0.2})});
  p.save((dir / "p.json").string(), (dir / "p.bin").string());
  auto q = JacobianProblem::load((dir / "p.json").string());
  CHECK(q.collar == p.collar);
  CHECK(q.f.nodes() == p.f.nodes());
  CHECK(q.f.data() == p.f.data());
  REQUIRE(q.protected_regions.size() == 1);
  CHECK(q.protected_regions[0].hi == p.protected_regions[0].hi);
  std::filesystem::remove_all(dir);
}

TEST_CASE("corrected exchange") {
  SUBCASE("identity is unchanged") {
    auto id = std::make_shared<smoothmaps::IdentityMap>(2);
    auto phi = mp_correct(id, 1e-2);
    auto x = make_point({0.3, 0.4});
    CHECK((phi->forward(x) - x).norm() < 1e-14);
  }
  SUBCASE("moser method keeps the exchange and fixes the jacobian") {
    auto phi = mp_exchange(2, 1.0 / 3.0, ExchangeMethod::Moser);
    auto raw = rearrange::exchange_diffeo({});
    CHECK(max_det_defect(*raw, 1000, 1e-8) > 0.1);
    // large shear in the thin transition shells; 1e-7 steps carry truncation error there
    CHECK(max_det_defect(*phi, 1000, 1e-8) < 1e-2);
    for (int j = 1; j <= 4; ++j) {
      Point c(2);
      for (int i = 0; i < 2; ++i) c[i] = geometry::dyadic_coord(j, i);
      Point d(2);
      const int p = geometry::dyadic_pair(2, j);
      for (int i = 0; i < 2; ++i) d[i] = geometry::dyadic_coord(p, i);
      auto off = make_point({0.1, -0.12});
      CHECK((phi->forward(c + off) - (d + off)).norm() < 1e-10);
    }
  }
  SUBCASE("action-angle method") {
    auto phi = mp_exchange(2, 1.0 / 3.0, ExchangeMethod::ActionAngle);
    CHECK(max_det_defect(*phi, 1000, 1e-8) < 1e-2);
    CHECK(phi->provenance() == "mp_exchange");
  }
  CHECK(parse_exchange_method("moser") == ExchangeMethod::Moser);
  CHECK(to_string(ExchangeMethod::ActionAngle) == "action_angle");
  CHECK_THROWS(parse_exchange_method("bogus"));
}

TEST_CASE("twist correction restores unit jacobian") {
  TwistSpec t;
  t.area_angle = false;
  t.p = 4.0;
  t.hb = 0.7;
  t.s_in = 0.2;
  t.s_out = 0.35;
  t.angle = 2.0;
  auto tw = std::make_shared<PlaneTwist>(t);
  CHECK(max_det_defect(*tw, 500, 1e-7) > 1e-2);
  auto phi = mp_correct(tw, 1e-3);
  CHECK(max_det_defect(*phi, 500, 1e-7) < 1e-3);
  auto x = make_point({0.55, 0.45});
  CHECK((phi->inverse(phi->forward(x)) - x).norm() < 1e-6);
}

TEST_CASE("annulus flow") {
  AnnulusProblem a;
  a.center = make_point({0.5, 0.5});
  a.A = Mat::Identity(2, 2) * 0.2;
  a.s1 = 1.0;
  a.s2 = 2.0;
  a.f = [&](const Point& x) {
    const double s = (x - a.center).norm() / 0.2;
    const double th = std::atan2(x[1] - 0.5, x[0] - 0.5);
    return 1.0 + 0.2 * smoothmaps::bump((s - 1.5) / 0.4) * std::sin(th);
  };
  AnnulusFlow flow(a, smoothmaps::FlowParams{0, 1e-10, 4096, 8});
  CHECK(std::abs(flow.mass_defect()) < 1e-6);
  verify::Sampler smp(2, 8, verify::Scheme::Sobol);
  int inside = 0;
  double worst = 0.0;
  while (inside < 300) {
    auto x = smp.next();
    const double s = (x - a.center).norm() / 0.2;
    if (s < 1.05 || s > 1.95) continue;
    ++inside;
    auto J = smoothmaps::numeric_jacobian(flow, x, 1e-6, Box::unit(2)).J;
    worst = std::max(worst, std::abs(J.determinant() - a.f(x)));
  }
  CHECK(worst < 5e-3);
  auto far = make_point({0.05, 0.05});
  CHECK(flow.forward(far) == far);
}
