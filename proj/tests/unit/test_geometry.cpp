#include "doctest.h"

#include "cubeflow/geometry.hpp"

#include <cmath>

using namespace cubeflow;
using namespace cubeflow::geometry;

// Frozen from tests/oracles/sequences.py
TEST_CASE("alpha values") {
  CHECK(alpha(0) == Rational(1));
  CHECK(alpha(1) == Rational(1, 3));
  CHECK(alpha(5) == Rational(1, 63));
  CHECK(alpha(10) == Rational(1, 2047));
  CHECK(alpha(20) == Rational(1, 2097151));
  CHECK(alpha_d(2) == doctest::Approx(1.0 / 7.0));
  CHECK_THROWS(alpha(-1));
}

TEST_CASE("alpha halves faster than the parent edge") {
  for (int k = 1; k <= 20; ++k) CHECK(2 * alpha(k) < alpha(k - 1));
}

TEST_CASE("generation measure") {
  CHECK(generation_measure(1, 2) == Rational(4, 9));
  CHECK(generation_measure(5, 2) == Rational(1024, 3969));
  CHECK(generation_measure(10, 2) == Rational(1048576, 4190209));
  CHECK(generation_measure(3, 2) == Rational(64, 225));
  CHECK(generation_measure(2, 3) == Rational(64, 343));
  CHECK(generation_measure(6, 3) == Rational(262144, 2048383));
  for (int k = 1; k < 20; ++k) CHECK(generation_measure(k + 1, 2) < generation_measure(k, 2));
  CHECK(generation_measure(10, 2) - Rational(1, 4) < Rational(1, 100));
  CHECK(generation_measure(20, 2) > Rational(1, 4));
}

TEST_CASE("edge ratio") {
  CHECK(edge_ratio(1) == Rational(1, 3));
  CHECK(edge_ratio(2) == Rational(3, 7));
  CHECK(edge_ratio_d(3) == doctest::Approx(7.0 / 15.0));
}

TEST_CASE("dyadic family") {
  SUBCASE("n=2 layout and pairing") {
    auto f = dyadic_family(2);
    REQUIRE(f.size() == 4);
    CHECK(f.centers[0] == std::vector<Rational>{Rational(1, 4), Rational(1, 4)});
    CHECK(f.centers[1] == std::vector<Rational>{Rational(3, 4), Rational(1, 4)});
    CHECK(f.centers[2] == std::vector<Rational>{Rational(1, 4), Rational(3, 4)});
    CHECK(f.centers[3] == std::vector<Rational>{Rational(3, 4), Rational(3, 4)});
    CHECK(f.pair(1) == 3);
    CHECK(f.pair(2) == 4);
    CHECK(f.pair(3) == 1);
  }
  SUBCASE("n=3 pairs are vertical") {
    auto f = dyadic_family(3);
    REQUIRE(f.size() == 8);
    for (int j = 1; j <= 4; ++j) {
      const int p = f.pair(j);
      CHECK(p == j + 4);
      CHECK(f.centers[j - 1][0] == f.centers[p - 1][0]);
      CHECK(f.centers[j - 1][1] == f.centers[p - 1][1]);
      CHECK(f.centers[j - 1][2] + f.centers[p - 1][2] == Rational(1));
      CHECK(dyadic_pair(3, p) == j);
    }
  }
  SUBCASE("n=1") {
    auto f = dyadic_family(1);
    CHECK(f.size() == 2);
    CHECK(f.pair(1) == 2);
  }
}

TEST_CASE("cube placement") {
  auto a = CantorAddress::parse(2, "1,1");
  auto c1 = cube_at(a, 1);
  CHECK(c1.center == std::vector<Rational>{Rational(1, 4), Rational(1, 4)});
  CHECK(2 * c1.half_edge == Rational(1, 3));
  auto c2 = cube_at(a, 2);
  CHECK(c2.center == std::vector<Rational>{Rational(1, 6), Rational(1, 6)});
  CHECK(2 * c2.half_edge == Rational(1, 7));

  auto b = cube_at(CantorAddress::parse(2, "4,2,3"), 3);
  CHECK(b.center == std::vector<Rational>{Rational(67, 84), Rational(59, 84)});
  CHECK(2 * b.half_edge == Rational(1, 15));

  auto c = cube_at(CantorAddress::parse(3, "8,1"), 2);
  CHECK(c.center == std::vector<Rational>(3, Rational(2, 3)));

  auto q = cube_at(CantorAddress{2, {}}, 0);
  CHECK(q.center == std::vector<Rational>(2, Rational(1, 2)));
  CHECK(q.half_edge == Rational(1, 2));

  // 16 generation-2 cubes of edge 1/7 fill the generation measure
  CHECK(16 * (2 * c2.half_edge) * (2 * c2.half_edge) == generation_measure(2, 2));
}

TEST_CASE("fast centre agrees with the exact one") {
  const int digits[] = {3, 2, 4, 1, 1, 2};
  CantorAddress a{2, {3, 2, 4, 1, 1, 2}};
  for (int k = 0; k <= 6; ++k) {
    Point c = cube_center_d(2, digits, k);
    Point e = cube_at(a, k).center_d();
    CHECK((c - e).norm() < 1e-15);
  }
}

TEST_CASE("cantor address") {
  auto a = CantorAddress::parse(2, "1,2,3,4");
  CHECK(a.length() == 4);
  CHECK(a.str() == "1,2,3,4");
  CHECK(a.paired().digits == std::vector<int>{3, 4, 1, 2});
  CHECK(a.paired().paired() == a);
  CHECK(a.prefix(2).digits == std::vector<int>{1, 2});
  CHECK_THROWS(CantorAddress::parse(2, "1,5"));
  CHECK_THROWS(CantorAddress::parse(2, "0"));
}

TEST_CASE("rational text round trip") {
  Rational r(-22, 7);
  CHECK(parse_rational(rational_str(r)) == r);
  CHECK(parse_rational("3") == Rational(3));
  CHECK(to_double(Rational(1, 4)) == 0.25);
}

TEST_CASE("axis cube json round trip") {
  auto c = cube_at(CantorAddress::parse(2, "2,3"), 2);
  auto d = AxisCube::from_json(c.to_json());
  CHECK(d.center == c.center);
  CHECK(d.half_edge == c.half_edge);
  CHECK(c.contains(c.center_d()));
  CHECK_FALSE(c.contains(make_point({0.5, 0.5})));
}

TEST_CASE("ball and ellipsoid volumes") {
  CHECK(unit_ball_volume(2) == doctest::Approx(M_PI));
  CHECK(unit_ball_volume(3) == doctest::Approx(4.0 * M_PI / 3.0));
  Ellipsoid e{make_point({0, 0}), Mat::Identity(2, 2)};
  e.shape(0, 0) = 2.0;
  e.shape(1, 1) = 0.5;
  CHECK(e.volume() == doctest::Approx(M_PI));
  CHECK(e.contains(make_point({1.9, 0.0})));
  CHECK_FALSE(e.contains(make_point({0.0, 0.6})));
}
