#include "doctest.h"

#include "cubeflow/io.hpp"
#include "cubeflow/theorem_map.hpp"

#include <cmath>
#include <filesystem>

using namespace cubeflow;
using namespace cubeflow::theorem_map;

namespace {

const Stage& stage1() {
  static const Stage s = init_stage(PipelineConfig{});
  return s;
}

const Stage& stage2() {
  static const Stage s = advance(stage1());
  return s;
}

Mat reflection_matrix() {
  Mat R = Mat::Identity(2, 2);
  R(1, 1) = -1.0;
  return R;
}

}  // namespace

TEST_CASE("pipeline config") {
  PipelineConfig c;
  c.eval_depth = 12;
  c.seed = 77;
  auto d = PipelineConfig::from_json(c.to_json());
  CHECK(d.eval_depth == 12);
  CHECK(d.seed == 77);
  CHECK(d.radius_fraction == c.radius_fraction);
  auto j = c.to_json();
  j["n"] = 4;
  CHECK_THROWS_AS(PipelineConfig::from_json(j), std::invalid_argument);
}

TEST_CASE("first stage") {
  const Stage& s = stage1();
  CHECK(s.k == 1);
  CHECK(s.book.measure_C == Rational(1, 4));
  CHECK(s.complement_measure() == Rational(3, 4));
  CHECK(s.invariants_hold());
  for (double t : {0.0, 0.3, 0.77, 1.0}) {
    for (auto x : {make_point({t, 0.0}), make_point({t, 1.0}), make_point({0.0, t}), make_point({1.0, t})})
      CHECK(s.F->forward(x) == x);
  }
  auto pieces = s.carriers();
  REQUIRE(pieces.size() == 1);
  std::mt19937_64 rng(4);
  for (int i = 0; i < 5; ++i) {
    auto a = basic_map::random_address(2, 12, rng);
    auto D = carrier_derivative(*s.F, pieces[0], a, 8, 15, 10 + i);
    CHECK((D - reflection_matrix()).cwiseAbs().maxCoeff() <= 5e-2);
  }
  CHECK(s.on_carrier(geometry::cantor_point(CantorAddress::parse(2, "1,2,3,4,1,2,3,4")), 8));
  CHECK_FALSE(s.on_carrier(make_point({0.5, 0.5}), 8));
}

TEST_CASE("second stage bookkeeping") {
  const Stage& s1 = stage1();
  const Stage& s2 = stage2();
  CHECK(s2.k == 2);
  for (auto& r : s2.checks) {
    CAPTURE(r.check);
    CHECK(r.pass);
  }
  // |E_2| > 2^{-2n-3} |Q \ C_1|
  CHECK(s2.book.measure_E * 128 > s1.complement_measure());
  CHECK(s2.book.measure_C == s1.book.measure_C + s2.book.measure_E);
  CHECK(s2.book.measure_E * 4 == s2.book.cube_measure);
  CHECK(s2.book.half_ball_measure == doctest::Approx(s2.book.ball_measure / 4.0));
  CHECK(s2.book.radius < s2.book.admissible_radius);
  CHECK(s2.book.distance_sampled <= s2.book.distance_bound);
  CHECK(s2.book.distance_bound < 1.0);
  CHECK(s2.book.ball_measure > 0.25 * to_double(s1.complement_measure()));
  CHECK(s2.book.omega_measure > 0.5 * to_double(s1.complement_measure()));
  REQUIRE(s2.layers.size() == 1);
  CHECK(s2.layers[0]->balls.size() == static_cast<size_t>(s2.book.balls));
  CHECK(s2.layers[0]->cube_count() == s2.book.cubes);
}

TEST_CASE("second stage agrees with the first away from the balls") {
  const Stage& s1 = stage1();
  const Stage& s2 = stage2();
  const auto& L = *s2.layers[0];
  verify::Sampler smp(2, 31);
  int outside = 0;
  for (int i = 0; i < 20000; ++i) {
    auto x = smp.next();
    bool in_ball = false;
    for (auto& b : L.balls) in_ball = in_ball || (x - b.center).norm() < b.radius * 2.0;
    if (in_ball) continue;
    ++outside;
    CHECK((s2.F->forward(x) - s1.F->forward(x)).norm() == 0.0);
  }
  CHECK(outside > 1000);
}

TEST_CASE("layer lookup") {
  const auto& L = *stage2().layers[0];
  const auto& b = L.balls[17];
  const auto& q = L.cubes[17][3];
  Point c = q.lo + Point::Constant(2, 0.5 * q.edge);
  auto [bi, ci] = L.locate(c);
  CHECK(bi == 18);
  CHECK(ci == 4);
  CHECK(q.contains(c));
  // inside the half-ball but between cubes
  Point gap = b.center + make_point({0.49 * b.radius, 0.0});
  auto [gb, gc] = L.locate(gap);
  CHECK(gb == 18);
  CHECK(gc == 0);
  CHECK(L.locate(make_point({0.5, 0.5})).first == 0);
  CHECK(L.locate_image(b.image_center()) == 18);
}

TEST_CASE("carriers of the second stage") {
  const Stage& s2 = stage2();
  auto pieces = s2.carriers();
  CHECK(pieces.size() == 1 + static_cast<size_t>(s2.book.cubes));
  std::mt19937_64 rng(8);
  for (int i : {1, 500, 60000}) {
    auto a = basic_map::random_address(2, 12, rng);
    auto D = carrier_derivative(*s2.F, pieces[i], a, 8, 15, 3);
    CHECK((D - reflection_matrix()).cwiseAbs().maxCoeff() <= 5e-2);
    const auto& p = pieces[i];
    Point x = p.lo + p.edge * geometry::cantor_point(a);
    CHECK(s2.on_carrier(x, 8));
  }
}

TEST_CASE("stage save and load") {
  auto dir = std::filesystem::temp_directory_path() / "cubeflow_test_stage";
  std::filesystem::remove_all(dir);
  save_stage(stage2(), dir.string());
  CHECK(std::filesystem::exists(dir / "stage.json"));
  CHECK(std::filesystem::exists(dir / "layer1_balls.bin"));
  Stage t = load_stage(dir.string());
  CHECK(t.k == 2);
  CHECK(t.book.measure_C == stage2().book.measure_C);
  CHECK(t.book.cube_measure == stage2().book.cube_measure);
  CHECK(t.layers[0]->balls.size() == stage2().layers[0]->balls.size());
  verify::Sampler smp(2, 12);
  for (int i = 0; i < 2000; ++i) {
    auto x = smp.next();
    CHECK((t.F->forward(x) - stage2().F->forward(x)).norm() == 0.0);
  }
  // a tampered ledger is rejected
  auto j = io::read_json((dir / "stage.json").string());
  auto tampered = j;
  tampered["bookkeeping"]["measure_C"] = "1/3";
  io::write_json((dir / "stage.json").string(), tampered);
  CHECK_THROWS(load_stage(dir.string()));
  tampered = j;
  tampered["layers"][0]["cube_measure"] = "1/3";
  io::write_json((dir / "stage.json").string(), tampered);
  CHECK_THROWS(load_stage(dir.string()));
  std::filesystem::remove_all(dir);
}

TEST_CASE("bookkeeping json") {
  auto b = Bookkeeping::from_json(stage2().book.to_json());
  CHECK(b.measure_E == stage2().book.measure_E);
  CHECK(b.balls == stage2().book.balls);
  CHECK(b.radius == stage2().book.radius);
}

TEST_CASE("decay ledger") {
  PipelineResult r;
  r.stages = {stage1(), stage2()};
  auto j = r.decay_ledger();
  REQUIRE(j.size() == 8);
  CHECK(j[1]["measured"] == true);
  CHECK(j[1]["distance_bound"].get<double>() <= j[1]["step_bound"].get<double>());
  for (size_t i = 2; i < j.size(); ++i) {
    CHECK(j[i]["complement"].get<double>() < j[i - 1]["complement"].get<double>());
    CHECK(j[i]["measured"] == false);
  }
}
