#include "doctest.h"

#include "cubeflow/io.hpp"
#include "cubeflow/verify.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

using namespace cubeflow;
using namespace cubeflow::verify;

TEST_CASE("sampler streams are deterministic") {
  for (auto scheme : {Scheme::Uniform, Scheme::Sobol, Scheme::Grid}) {
    Sampler a(2, 42, scheme, 64), b(2, 42, scheme, 64);
    for (int i = 0; i < 100; ++i) {
      auto x = a.next();
      CHECK(x == b.next());
      CHECK(x.minCoeff() >= 0.0);
      CHECK(x.maxCoeff() < 1.0);
    }
    Sampler c(a);
    Sampler fresh(2, 42, scheme, 64);
    CHECK(c.next() == fresh.next());
    a.reset();
    b.reset();
    CHECK(a.next() == b.next());
  }
  Sampler g(2, 1, Scheme::Grid, 4);
  CHECK(g.next() == make_point({0.25, 0.25}));
  CHECK(parse_scheme("sobol") == Scheme::Sobol);
  CHECK(to_string(Scheme::Grid) == "grid");
  CHECK_THROWS(parse_scheme("halton"));
}

TEST_CASE("sampler in regions") {
  Sampler s(2, 3);
  Ball B{make_point({0.2, 0.7}), 0.05};
  Box R{make_point({0.1, 0.4}), make_point({0.2, 0.9})};
  for (int i = 0; i < 200; ++i) {
    CHECK(B.contains(s.next_in(B)));
    CHECK(R.contains(s.next_in(R)));
  }
}

TEST_CASE("report json lines") {
  Report r;
  r.check = "demo";
  r.statistics = {{"z", 1.5}};
  r.tolerance = 3.0;
  r.pass = true;
  r.samples = 10;
  r.seed = 9;
  r.provenance = "exact";
  auto back = Report::from_json(r.to_json());
  CHECK(back.check == "demo");
  CHECK(back.statistics["z"] == 1.5);
  CHECK(back.pass);
  CHECK(back.seed == 9);
  CHECK(back.provenance == "exact");

  auto path = std::filesystem::temp_directory_path() / "cubeflow_test_reports.jsonl";
  {
    std::ofstream os(path);
    os << io::provenance_header(json::object(), 9).dump() << "\n";
    write_jsonl(os, r);
    r.pass = false;
    write_jsonl(os, r);
  }
  auto rows = read_jsonl(path.string());
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].pass);
  CHECK_FALSE(rows[1].pass);
  std::filesystem::remove(path);
}

TEST_CASE("random rectangles") {
  auto rs = random_rectangles(3, 20, 5);
  REQUIRE(rs.size() == 20);
  for (auto& b : rs)
    for (int i = 0; i < 3; ++i) {
      const double side = b.hi[i] - b.lo[i];
      CHECK(side >= 0.1);
      CHECK(side <= 0.5);
      CHECK(b.lo[i] >= 0.0);
      CHECK(b.hi[i] <= 1.0);
    }
  CHECK(random_rectangles(2, 3, 5)[0].lo == random_rectangles(2, 3, 5)[0].lo);
}

TEST_CASE("measure preservation test") {
  auto rects = random_rectangles(2, 20, 1);
  Sampler s(2, 2);
  smoothmaps::IdentityMap id(2);
  CHECK(measure_preservation_test(id, rects, s, 200000).pass);
  Sampler t(2, 2);
  auto control = power_map(2);
  auto r = measure_preservation_test(*control, rects, t, 200000);
  CHECK_FALSE(r.pass);
  CHECK(r.statistics["worst_z"].get<double>() > 3.0);
}

TEST_CASE("power map keeps the faces of Q") {
  auto p = power_map(2);
  auto x = make_point({0.3, 0.6});
  CHECK((p->inverse(p->forward(x)) - x).norm() < 1e-12);
  for (double t : {0.0, 0.4, 1.0}) {
    CHECK(p->forward(make_point({t, 1.0}))[1] == 1.0);
    CHECK(p->forward(make_point({0.0, t}))[0] == 0.0);
  }
  CHECK(p->forward(make_point({1.0, 1.0})) == make_point({1.0, 1.0}));
}

TEST_CASE("change of variables") {
  auto r = change_of_variables_test(smoothmaps::IdentityMap(2), gaussian_bump);
  CHECK(r.pass);
  CHECK(r.statistics["relative_discrepancy"].get<double>() < 1e-6);
  auto c = change_of_variables_test(*power_map(2), gaussian_bump);
  CHECK(c.pass);
}

TEST_CASE("approximate derivative density") {
  // a linear map is its own derivative everywhere
  auto f = [](const Point& y) { return Point(2.0 * y); };
  const Point x = make_point({0.3, 0.3});
  const Mat L = 2.0 * Mat::Identity(2, 2);
  CHECK(approx_density(f, x, f(x), L, 0.1, 0.1, 2000, 1) == 1.0);
  CHECK(approx_density(f, x, f(x), Mat::Identity(2, 2), 0.1, 0.1, 2000, 1) == 0.0);

  ApproxDiffConfig cfg;
  cfg.r_list = {0.1, 0.05, 0.02};
  cfg.samples_per_radius = 2000;
  auto rep = approx_diff_test(f, x, f(x), L, cfg);
  CHECK(rep.pass);
}

TEST_CASE("local degree") {
  auto x = make_point({0.4, 0.6});
  CHECK(local_degree(smoothmaps::IdentityMap(2), x, 1e-3) == 1);
  CHECK(local_degree(*smoothmaps::reflection(2), x, 1e-3) == -1);
  smoothmaps::AffineMap rot(-Mat::Identity(2, 2), make_point({1.0, 1.0}));
  CHECK(local_degree(rot, x, 1e-3) == 1);
}

TEST_CASE("sign survey") {
  Sampler s(2, 6);
  SignSurvey cfg;
  auto r = jacobian_sign_survey(smoothmaps::IdentityMap(2), s, 1000, cfg);
  CHECK(r.pass);
  CHECK(r.statistics["positive_fraction"] == 1.0);

  Sampler t(2, 6);
  auto neg = jacobian_sign_survey(*smoothmaps::reflection(2), t, 200, cfg);
  CHECK_FALSE(neg.pass);
  CHECK(neg.statistics["negative_fraction"] == 1.0);

  Sampler u(2, 6);
  SignSurvey skip;
  skip.on_carrier = [](const Point& p) { return p[0] < 0.5; };
  Mat R = Mat::Identity(2, 2);
  R(1, 1) = -1.0;
  skip.carrier_estimates = {R, R};
  auto sk = jacobian_sign_survey(smoothmaps::IdentityMap(2), u, 1000, skip);
  CHECK(sk.pass);
  CHECK(sk.statistics["skipped_on_carrier"].get<long>() > 300);
  CHECK(sk.statistics["carrier_in_range"] == 2);

  Sampler v(2, 6);
  skip.carrier_estimates = {Mat::Identity(2, 2)};
  CHECK_FALSE(jacobian_sign_survey(smoothmaps::IdentityMap(2), v, 100, skip).pass);
}

TEST_CASE("uniform distance") {
  Sampler s(2, 1);
  smoothmaps::IdentityMap id(2);
  CHECK(uniform_distance(id, id, s, 100) == 0.0);
  auto t = smoothmaps::translation(make_point({0.01, 0.0}));
  Sampler u(2, 1);
  CHECK(uniform_distance(id, *t, u, 100) == doctest::Approx(0.02));
}

TEST_CASE("segment image length") {
  auto tower = basic_map::build_tower(2, 3, true);
  SegmentConfig cfg;
  cfg.seed_points = 1 << 10;
  auto rows = segment_image_lengths(*tower, make_point({0.1, 0.0}), {0, 1, 2}, cfg);
  REQUIRE(rows.size() == 3);
  CHECK(rows[0].length == doctest::Approx(1.0));
  CHECK(rows[1].length > rows[0].length);
  CHECK(rows[2].length > rows[1].length);
}

TEST_CASE("grid files") {
  auto path = std::filesystem::temp_directory_path() / "cubeflow_test.grid";
  io::GridFile g{{2, 3}, {1, 2, 3, 4, 5, -6.5}};
  io::write_grid(path.string(), g);
  auto h = io::read_grid(path.string());
  CHECK(h.dims == g.dims);
  CHECK(h.values == g.values);
  std::ofstream(path, std::ios::binary) << "NOTAGRID";
  CHECK_THROWS(io::read_grid(path.string()));
  std::filesystem::remove(path);
  CHECK_THROWS(io::write_grid(path.string(), io::GridFile{{2, 2}, {1.0}}));
}

TEST_CASE("provenance") {
  json a{{"n", 2}, {"seed", 1}};
  json b{{"n", 3}, {"seed", 1}};
  CHECK(io::config_hash(a) == io::config_hash(a));
  CHECK(io::config_hash(a) != io::config_hash(b));
  CHECK(io::config_hash(a).size() == 16);
  auto h = io::provenance_header(a, 5);
  CHECK(h["library"] == "cubeflow");
  CHECK(h["seed"] == 5);
  CHECK(h["config_hash"] == io::config_hash(a));
  CHECK_FALSE(h.contains("timestamp"));
}
