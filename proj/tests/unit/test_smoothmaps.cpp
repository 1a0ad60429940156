#include "doctest.h"

#include "cubeflow/smoothmaps.hpp"

#include <cmath>

using namespace cubeflow;
using namespace cubeflow::smoothmaps;

TEST_CASE("cutoff profile") {
  auto phi = cutoff_phi();
  CHECK(phi(0.5) == 0.0);
  CHECK(phi(0.6) == 0.0);
  CHECK(phi(0.9) == 1.0);
  CHECK(phi(0.8) == doctest::Approx(1.0));
  CHECK(phi(0.7) == doctest::Approx(0.5).epsilon(1e-9));
  // integral of phi' over a band of width 1/5 is 1, so the sup is at least 5
  CHECK(phi.sup_derivative > 5.0);
  CHECK(phi.sup_derivative < 9.0);
  CHECK(phi.samples >= 10000);
  CHECK_THROWS_AS(cutoff_phi(100), std::invalid_argument);
}

TEST_CASE("smooth step is monotone") {
  auto& s = SmoothStep::instance();
  double prev = -1.0;
  for (int i = 0; i <= 200; ++i) {
    const double v = s(-0.5 + 2.0 * i / 200);
    CHECK(v >= prev);
    prev = v;
  }
  CHECK(s(0.0) == 0.0);
  CHECK(s(1.0) == 1.0);
  CHECK(bump(0.0) == doctest::Approx(1.0));
  CHECK(bump(1.0) == 0.0);
}

TEST_CASE("identity, translation and reflection") {
  IdentityMap id(2);
  auto x = make_point({0.3, 0.7});
  CHECK(id.forward(x) == x);
  CHECK(id.inverse(x) == x);

  auto v = make_point({0.25, -0.5});
  auto t = translation(v);
  CHECK((t->forward(x) - (x + v)).norm() < 1e-15);
  CHECK((t->inverse(t->forward(x)) - x).norm() < 1e-15);
  auto back = compose({t, translation(-v)});
  CHECK((back->forward(x) - x).norm() < 1e-15);

  auto r = reflection(3);
  auto y = r->forward(make_point({0.1, 0.2, 0.3}));
  CHECK(y[2] == doctest::Approx(0.7));
  CHECK((r->forward(y) - make_point({0.1, 0.2, 0.3})).norm() < 1e-15);
}

TEST_CASE("numeric jacobian of affine maps") {
  Box q = Box::unit(2);
  auto x = make_point({0.4, 0.6});
  auto J = numeric_jacobian(IdentityMap(2), x, 1e-5, q).J;
  CHECK((J - Mat::Identity(2, 2)).norm() < 1e-9);

  auto R = numeric_jacobian(*reflection(2), x, 1e-5, q).J;
  Mat diag = Mat::Identity(2, 2);
  diag(1, 1) = -1.0;
  CHECK((R - diag).norm() < 1e-9);

  auto T = numeric_jacobian(*translation(make_point({1.0, 2.0})), x, 1e-5, q).J;
  CHECK(T.determinant() == doctest::Approx(1.0));

  // one-sided differences near the edge of the domain
  auto edge = numeric_jacobian(IdentityMap(2), make_point({0.0, 0.5}), 1e-5, q);
  CHECK(edge.reduced_order);
  CHECK((edge.J - Mat::Identity(2, 2)).norm() < 1e-9);
}

TEST_CASE("hessian norm of a quadratic") {
  auto f = [](const Point& p) { return make_point({p[0] * p[0], p[1]}); };
  CHECK(numeric_hessian_norm(f, make_point({0.3, 0.3}), 1e-4) == doctest::Approx(2.0).epsilon(1e-3));
}

TEST_CASE("conjugation into a cube") {
  AxisCube c{2, {Rational(1, 4), Rational(3, 4)}, Rational(1, 8)};
  auto conj = conjugate_into_cube(reflection(2), c);
  // reflection through the horizontal bisector of the target cube
  auto y = conj->forward(make_point({0.2, 0.7}));
  CHECK(y[0] == doctest::Approx(0.2));
  CHECK(y[1] == doctest::Approx(0.8));
  auto z = conjugate_into_cube(std::make_shared<IdentityMap>(2), c)->forward(make_point({0.3, 0.72}));
  CHECK(z[0] == doctest::Approx(0.3));
  CHECK(z[1] == doctest::Approx(0.72));
  auto J = numeric_jacobian(*conj, make_point({0.25, 0.75}), 1e-6, Box::unit(2)).J;
  CHECK(std::abs(J.determinant()) == doctest::Approx(1.0));
}

TEST_CASE("flow of simple fields") {
  FlowParams fp{0, 1e-10, 4096, 8};
  SUBCASE("zero field") {
    FlowMap f(2, [](double, const Point& x) { return Point::Zero(x.size()); }, Box::everywhere(2), fp, "zero");
    auto x = make_point({0.2, 0.9});
    CHECK(f.forward(x) == x);
  }
  SUBCASE("constant field") {
    auto v = make_point({0.3, -0.1});
    FlowMap f(2, [v](double, const Point&) { return v; }, Box::everywhere(2), fp, "const");
    auto x = make_point({0.2, 0.9});
    CHECK((f.forward(x) - (x + v)).norm() < 1e-12);
    CHECK((f.inverse(x + v) - x).norm() < 1e-12);
  }
  SUBCASE("rotation supported in an annulus") {
    const auto c = make_point({0.5, 0.5});
    auto field = [c](double, const Point& x) {
      Point d = x - c;
      const double rho = d.norm();
      const double w = 1.0 - SmoothStep::instance()((rho - 0.2) / 0.2);
      return Point(M_PI * w * make_point({-d[1], d[0]}));
    };
    Box sup{make_point({0.05, 0.05}), make_point({0.95, 0.95})};
    FlowMap f(2, field, sup, fp, "rot");
    std::vector<Point> probes{make_point({0.6, 0.5}), make_point({0.8, 0.5})};
    f.calibrate(probes);
    for (double rho : {0.05, 0.1, 0.15}) {
      auto y = f.forward(c + make_point({rho, 0.0}));
      CHECK((y - (c - make_point({rho, 0.0}))).norm() < 1e-8);
    }
    auto far = make_point({0.5, 0.92});
    CHECK((f.forward(far) - far).norm() < 1e-12);
    auto p = make_point({0.75, 0.55});
    CHECK((f.inverse(f.forward(p)) - p).norm() < 1e-8);
  }
}

TEST_CASE("grid field interpolation") {
  auto g = std::make_shared<VectorFieldGrid>(Box::unit(2), std::vector<int>{9, 9}, 1);
  for (size_t i = 0; i < g->node_count(); ++i) {
    auto p = g->node_position(i);
    g->at_linear(i, 0) = 2.0 * p[0] + p[1];
  }
  // cubic convolution reproduces linear data in the interior
  CHECK(g->eval(make_point({0.4, 0.55}))[0] == doctest::Approx(1.35).epsilon(1e-9));
  CHECK(g->eval(make_point({1.5, 0.5}))[0] == 0.0);
}

TEST_CASE("newton inverse") {
  auto F = [](const Point& x) { return make_point({x[0] + 0.1 * std::sin(x[1]), x[1] + 0.1 * x[0] * x[0]}); };
  auto x = make_point({0.3, 0.8});
  auto y = F(x);
  CHECK((newton_inverse(F, y, y, 1e-13) - x).norm() < 1e-11);
}

TEST_CASE("composite map order") {
  auto a = translation(make_point({1.0, 0.0}));
  auto r = reflection(2);
  auto m = compose({a, r});
  auto y = m->forward(make_point({0.0, 0.25}));
  CHECK(y[0] == doctest::Approx(1.0));
  CHECK(y[1] == doctest::Approx(0.75));
  CHECK((m->inverse(y) - make_point({0.0, 0.25})).norm() < 1e-15);
}

TEST_CASE("tolerances json round trip") {
  Tolerances t;
  t.tau_inv = 1e-7;
  t.interp_order = 1;
  auto u = Tolerances::from_json(t.to_json());
  CHECK(u.tau_inv == 1e-7);
  CHECK(u.interp_order == 1);
}
