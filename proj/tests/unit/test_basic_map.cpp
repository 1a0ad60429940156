#include "doctest.h"

#include "cubeflow/basic_map.hpp"
#include "cubeflow/verify.hpp"

#include <cmath>

using namespace cubeflow;
using namespace cubeflow::basic_map;

TEST_CASE("depth one tower is the single exchange") {
  auto tower = build_tower(2, 1, true);
  auto ex = tower->stage(1).map;
  verify::Sampler s(2, 21);
  for (int i = 0; i < 300; ++i) {
    auto x = s.next();
    CHECK((tower->eval(x, 1).value - ex->forward(x)).norm() == 0.0);
  }
}

TEST_CASE("stage two rearranges sixteen cubes of edge 1/7") {
  auto tower = build_tower(2, 2, true);
  const auto& st = tower->stage(2);
  CHECK(st.k == 2);
  CHECK(st.layout->spec().ratio == doctest::Approx(3.0 / 7.0));
  // every generation-2 cube centre goes to the centre of the paired-address cube
  int moved = 0;
  for (int a = 1; a <= 4; ++a)
    for (int b = 1; b <= 4; ++b) {
      CantorAddress addr{2, {a, b}};
      auto c = geometry::cube_at(addr, 2);
      CHECK(2 * c.half_edge == Rational(1, 7));
      auto y = tower->stage_map(2)->forward(c.center_d());
      auto want = geometry::cube_at(addr.paired(), 2).center_d();
      CHECK((y - want).norm() < 1e-12);
      ++moved;
    }
  CHECK(moved == 16);
}

TEST_CASE("evaluation off the cubes resolves at once") {
  auto tower = build_tower(2, 6, true);
  SUBCASE("boundary is fixed") {
    for (double t : {0.0, 0.2, 0.5, 1.0}) {
      auto x = make_point({t, 0.0});
      auto r = tower->eval(x, 6);
      CHECK(r.value == x);
      CHECK(r.error_bound == 0.0);
    }
  }
  SUBCASE("outside the generation-1 cubes") {
    auto x = make_point({0.5, 0.5});
    auto r = tower->eval(x, 6);
    CHECK(r.resolved_depth == 1);
    CHECK(r.error_bound == 0.0);
    CHECK((r.value - tower->stage(1).map->forward(x)).norm() == 0.0);
  }
  SUBCASE("inverse") {
    verify::Sampler s(2, 4);
    for (int i = 0; i < 200; ++i) {
      auto x = s.next();
      auto y = tower->eval(x, 4).value;
      CHECK((tower->eval_inverse(y, 4).value - x).norm() < 1e-9);
    }
  }
}

TEST_CASE("cauchy bound between depths") {
  auto tower = build_tower(2, 6, true);
  verify::Sampler s(2, 5);
  for (int i = 0; i < 500; ++i) {
    auto x = s.next();
    for (int k = 1; k < 6; ++k) {
      const double bound = 2.0 * std::sqrt(2.0) * geometry::alpha_d(k - 1);
      CHECK((tower->eval(x, k).value - tower->eval(x, 6).value).norm() <= bound);
    }
  }
}

TEST_CASE("cantor point images") {
  CantorAddress ones{2, std::vector<int>(12, 1)};
  auto img = eval_cantor(ones);
  CHECK(img.address.digits == std::vector<int>(12, 3));
  auto x = geometry::cantor_point(ones);
  CHECK(img.value[0] == doctest::Approx(x[0]).epsilon(1e-14));
  CHECK(img.value[1] + x[1] == doctest::Approx(1.0).epsilon(1e-14));

  std::mt19937_64 rng(9);
  for (int i = 0; i < 50; ++i) {
    auto a = random_address(2, 10, rng);
    auto y = eval_cantor(a).value;
    auto p = geometry::cantor_point(a);
    CHECK(y[1] == doctest::Approx(1.0 - p[1]).epsilon(1e-14));
    CHECK(eval_cantor(eval_cantor(a).address).address == a);
    // the tower agrees with the exact image to the resolution of the prefix
    auto tower = build_tower(2, 10, true);
    CHECK((tower->eval(p, 10).value - y).norm() < 1e-12);
  }
}

TEST_CASE("cantor status") {
  auto c = cantor_status(make_point({0.5, 0.5}), 3);
  CHECK(c.state == CantorState::Out);
  CHECK(c.witness == 1);
  auto a = CantorAddress::parse(2, "2,4,1");
  auto p = geometry::cantor_point(a);
  auto u = cantor_status(p, 3);
  CHECK(u.state == CantorState::Undecided);
  CHECK(u.prefix == a);
  CHECK(cantor_status(a).state == CantorState::In);
  CHECK(*address_of(p, 2) == a.prefix(2));
  CHECK_FALSE(address_of(make_point({0.5, 0.1}), 1).has_value());
}

TEST_CASE("truncation depth") {
  // frozen from tests/oracles/sequences.py
  CHECK(truncation_depth(2, 3.0) == 1);
  CHECK(truncation_depth(2, 0.1) == 5);
  CHECK(truncation_depth(3, 0.01) == 9);
  CHECK_THROWS_AS(truncation_depth(2, 0.0), std::invalid_argument);
  for (double eps : {0.5, 0.05, 0.003}) {
    const int k = truncation_depth(2, eps);
    CHECK(2 * std::sqrt(2.0) * geometry::alpha_d(k - 1) < eps);
    if (k > 1) CHECK(2 * std::sqrt(2.0) * geometry::alpha_d(k - 2) >= eps);
  }
}

TEST_CASE("smooth truncation") {
  auto tower = build_tower(2, 8, true);
  Region K{{Box{make_point({0.45, 0.45}), make_point({0.55, 0.55})}}};
  SUBCASE("coarse eps") {
    auto t = smooth_truncate(*tower, K, 3.0);
    CHECK(t.depth == 1);
    verify::Sampler s(2, 6);
    for (int i = 0; i < 200; ++i) {
      auto x = s.next_in(K.boxes[0]);
      CHECK((t.map->forward(x) - tower->eval(x, 8).value).norm() == 0.0);
    }
  }
  SUBCASE("fine eps") {
    auto t = smooth_truncate(*tower, K, 0.1);
    CHECK(t.depth == 5);
    CHECK(t.depth_for_region == 1);
  }
  SUBCASE("region near the cubes") {
    // the all-ones Cantor point is near (0.0983, 0.0983)
    Region R{{Box{make_point({0.09, 0.09}), make_point({0.1, 0.1})}}};
    CHECK(avoid_depth(R, 2, 8) == 0);
    CHECK_THROWS_AS(smooth_truncate(*tower, R, 1.0), ResourceError);
    // centre of generation-1 cube 1 lies between its children
    Region G{{Box{make_point({0.25, 0.25}), make_point({0.26, 0.26})}}};
    CHECK(avoid_depth(G, 2, 8) == 2);
    CHECK(smooth_truncate(*tower, G, 3.0).depth == 2);
  }
}

TEST_CASE("approximate derivative on the carrier") {
  auto tower = build_tower(2, 16, true);
  std::mt19937_64 rng(3);
  Mat R = Mat::Identity(2, 2);
  R(1, 1) = -1.0;
  for (int i = 0; i < 5; ++i) {
    auto a = random_address(2, 12, rng);
    auto D = approximate_derivative_on_A(*tower, a, 8, 15, 1 + i);
    CHECK((D - R).cwiseAbs().maxCoeff() <= 5e-2);
    CHECK(D.determinant() == doctest::Approx(-1.0).epsilon(0.1));
  }
}

TEST_CASE("tower stage maps are measure preserving") {
  auto tower = build_tower(2, 3, true);
  auto rects = verify::random_rectangles(2, 20, 4);
  for (int k = 1; k <= 3; ++k) {
    verify::Sampler s(2, 100 + k);
    auto r = verify::measure_preservation_test(*tower->stage_map(k), rects, s, 200000);
    CHECK(r.pass);
  }
}

TEST_CASE("tower description") {
  auto tower = build_tower(3, 2, true);
  auto j = tower->describe();
  CHECK(j["n"] == 3);
  CHECK(j.contains("config"));
  CHECK_THROWS(tower->stage(0));
}
