#include "cubeflow/suites.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

namespace cubeflow::verify::suites {

namespace {

Report make(const std::string& check, bool pass, json stats, const std::string& provenance = "sampled") {
  Report r;
  r.check = check;
  r.pass = pass;
  r.statistics = std::move(stats);
  r.provenance = provenance;
  return r;
}

Mat reflection_matrix(int n) {
  Mat R = Mat::Identity(n, n);
  R(n - 1, n - 1) = -1.0;
  return R;
}

boost::multiprecision::cpp_int pow2(int e) { return boost::multiprecision::cpp_int(1) << e; }

Rational rational_pow(const Rational& r, int e) {
  Rational out = 1;
  for (int i = 0; i < e; ++i) out *= r;
  return out;
}

template <class T>
T pick(T v, T fallback) {
  return v > T(0) ? v : fallback;
}

}  // namespace

json SuiteOptions::to_json() const {
  return json{{"n", n},         {"depth", depth}, {"samples", samples},     {"seed", seed},
              {"cells", cells}, {"tol", tol},     {"addresses", addresses}, {"theorem_k", theorem_k}};
}

std::vector<Report> sequences(int max_k) {
  std::vector<Report> out;
  bool exact = true, halving = true;
  for (int k = 0; k <= max_k; ++k) {
    const Rational denom = Rational(pow2(k + 1) - 1);
    exact = exact && geometry::alpha(k) * denom == 1;
    if (k >= 1) halving = halving && 2 * geometry::alpha(k) < geometry::alpha(k - 1);
  }
  out.push_back(make("alpha_exact", exact && halving, {{"max_k", max_k}, {"closed_form", exact}, {"two_alpha_k_below_prev", halving}},
                     "exact"));
  bool decreasing = true, product = true;
  for (int n = 2; n <= 3; ++n)
    for (int k = 1; k <= max_k; ++k) {
      const Rational g = geometry::generation_measure(k, n);
      const Rational expect = rational_pow(Rational(pow2(k)) * geometry::alpha(k), n);
      product = product && g == expect;
      if (k >= 2) decreasing = decreasing && g < geometry::generation_measure(k - 1, n);
      decreasing = decreasing && g > Rational(1, pow2(n));
    }
  const Rational gap = geometry::generation_measure(10, 2) - Rational(1, 4);
  out.push_back(make("generation_measure", decreasing && product && gap < Rational(1, 100),
                     {{"strictly_decreasing_above_limit", decreasing},
                      {"closed_form", product},
                      {"gap_10_2", rational_str(gap)},
                      {"gap_10_2_value", to_double(gap)}},
                     "exact"));
  return out;
}

std::vector<Report> cantor(int n, int max_depth, long samples, std::uint64_t seed) {
  Sampler s(n, seed);
  std::vector<long> undecided(max_depth + 1, 0);
  for (long i = 0; i < samples; ++i) {
    const Point x = s.next();
    const auto st = basic_map::cantor_status(x, max_depth);
    // Out at generation w means inside the cubes of every generation below w
    const int reach = st.state == basic_map::CantorState::Out ? st.witness - 1 : max_depth;
    for (int k = 1; k <= std::min(reach, max_depth); ++k) ++undecided[k];
  }
  bool pass = true;
  json rows = json::array();
  for (int k = 1; k <= max_depth; ++k) {
    const double m = to_double(geometry::generation_measure(k, n));
    const double est = double(undecided[k]) / samples;
    const double sigma = std::sqrt(m * (1 - m) / samples);
    const double z = (est - m) / sigma;
    pass = pass && std::abs(z) <= 3.0;
    rows.push_back({{"k", k}, {"measure", m}, {"estimate", est}, {"z", z}});
  }
  Report r = make("cantor_measure", pass, {{"depths", rows}});
  r.samples = samples;
  r.seed = seed;
  r.tolerance = 3.0;
  r.config = {{"n", n}, {"max_depth", max_depth}};
  return {r};
}

std::vector<Report> cauchy(int n, int max_depth, long samples, std::uint64_t seed) {
  auto tower = basic_map::build_tower(n, max_depth, true);
  Sampler s(n, seed);
  long violations = 0, pairs = 0;
  double worst_ratio = 0.0;
  std::vector<Point> v(max_depth + 1);
  for (long i = 0; i < samples; ++i) {
    const Point x = s.next();
    for (int k = 1; k <= max_depth; ++k) v[k] = tower->eval(x, k).value;
    for (int k = 1; k <= max_depth; ++k)
      for (int m = k + 1; m <= max_depth; ++m) {
        const double bound = 2.0 * std::sqrt(double(n)) * geometry::alpha_d(k - 1);
        const double d = (v[k] - v[m]).norm();
        worst_ratio = std::max(worst_ratio, d / bound);
        if (d > bound) ++violations;
        ++pairs;
      }
  }
  Report r = make("cauchy_bound", violations == 0, {{"pairs", pairs}, {"violations", violations}, {"worst_ratio", worst_ratio}});
  r.samples = samples;
  r.seed = seed;
  r.config = {{"n", n}, {"max_depth", max_depth}};
  return {r};
}

std::vector<Report> moser(int cells, double tol) {
  std::vector<double> res;
  json rows = json::array();
  for (int c : {cells, 2 * cells}) {
    moser::SolveReport rep;
    moser::prescribe_jacobian(moser::benchmark_problem(c), 0.0, {}, &rep);
    res.push_back(rep.residual);
    rows.push_back({{"cells", c}, {"residual", rep.residual}, {"mass_defect", rep.mass_defect}, {"flow_steps", rep.flow_steps}});
  }
  const double factor = res[0] / res[1];
  Report r = make("moser_residual", res[0] <= tol && factor >= 1.5,
                  {{"solves", rows}, {"refinement_factor", factor}});
  r.tolerance = tol;
  r.config = {{"cells", cells}};
  return {r};
}

std::vector<Report> measure(int n, int depth, long samples, std::uint64_t seed, int theorem_k) {
  std::vector<Report> out;
  const auto rects = random_rectangles(n, 20, seed);
  auto tower = basic_map::build_tower(n, std::max(depth, 1), true);
  for (int k = 1; k <= depth; ++k) {
    Sampler s(n, seed + k);
    Report r = measure_preservation_test(*tower->stage_map(k), rects, s, samples);
    r.config["stage"] = "basic_" + std::to_string(k);
    out.push_back(r);
  }
  if (theorem_k >= 2 && n == 2) {
    theorem_map::PipelineConfig cfg;
    cfg.n = n;
    cfg.seed = seed;
    auto res = theorem_map::run_pipeline(cfg, theorem_k);
    if (!res.error.empty() || static_cast<int>(res.stages.size()) < theorem_k) {
      out.push_back(make("measure_preservation", false, {{"error", res.error}}));
    } else {
      Sampler s(n, seed + 100);
      Report r = measure_preservation_test(*res.stages.back().F, rects, s, samples);
      r.config["stage"] = "theorem_" + std::to_string(theorem_k);
      out.push_back(r);
    }
  }
  Sampler s(n, seed + 200);
  Report c = measure_preservation_test(*power_map(n), rects, s, samples);
  Report ctl = make("negative_control", !c.pass, {{"control_pass", c.pass}, {"worst_z", c.statistics["worst_z"]}});
  ctl.samples = samples;
  ctl.seed = c.seed;
  ctl.config = c.config;
  out.push_back(ctl);
  return out;
}

std::vector<Report> change_of_variables(int n, int depth) {
  auto tower = basic_map::build_tower(n, depth, true);
  Report r = change_of_variables_test(*tower->stage_map(depth), gaussian_bump);
  r.config["stage"] = depth;
  return {r};
}

std::vector<Report> jacobian_sign(int n, int depth, long samples, std::uint64_t seed) {
  auto tower = basic_map::build_tower(n, 24, true);
  SignSurvey cfg;
  cfg.on_carrier = [depth](const Point& x) { return basic_map::cantor_status(x, depth).state != basic_map::CantorState::Out; };
  std::mt19937_64 rng(seed);
  for (int i = 0; i < 20; ++i) {
    const auto a = basic_map::random_address(n, 30, rng);
    cfg.carrier_estimates.push_back(basic_map::approximate_derivative_on_A(*tower, a, 8, 15, seed + i));
  }
  Sampler s(n, seed);
  Report r = jacobian_sign_survey(*tower->stage_map(depth), s, samples, cfg);
  r.config["stage"] = depth;
  return {r};
}

std::vector<Report> approx_diff(int count, int depth, std::uint64_t seed) {
  const int n = 2;
  auto tower = basic_map::build_tower(n, 24, true);
  const Mat R = reflection_matrix(n), I = Mat::Identity(n, n);
  ApproxDiffConfig cfg;
  for (int k = 4; k <= 8; ++k) cfg.r_list.push_back(geometry::alpha_d(k));
  const int eval_depth = 16;
  auto F = [&](const Point& y) { return tower->eval(y, eval_depth).value; };
  std::mt19937_64 rng(seed);
  double worst_dev = 0.0;
  long deriv_fail = 0, density_pass = 0, control_fail = 0;
  std::vector<double> mean(cfg.r_list.size(), 0.0);
  double control_max = 0.0;
  json failing = json::array();
  for (int t = 0; t < count; ++t) {
    const auto a = basic_map::random_address(n, 30, rng);
    const Mat D = basic_map::approximate_derivative_on_A(*tower, a, depth, 15, seed + t);
    const double dev = (D - R).cwiseAbs().maxCoeff();
    worst_dev = std::max(worst_dev, dev);
    if (dev > 5e-2) ++deriv_fail;
    const Point x = geometry::cantor_point(a);
    const Point fx = basic_map::eval_cantor(a).value;
    cfg.seed = seed + 1000 * t;
    const Report rep = approx_diff_test(F, x, fx, R, cfg);
    if (rep.pass) ++density_pass;
    else if (failing.size() < 10) failing.push_back(a.prefix(depth).str());
    const auto& d = rep.statistics["trajectories"][0]["densities"];
    for (size_t i = 0; i < mean.size(); ++i) mean[i] += d[i].get<double>() / count;
    const double c = approx_density(F, x, fx, I, 0.1, cfg.r_list.back(), cfg.samples_per_radius, cfg.seed + 5);
    control_max = std::max(control_max, c);
    if (c > 0.6) ++control_fail;
  }
  std::vector<Report> out;
  Report d = make("carrier_derivative", deriv_fail == 0,
                  {{"addresses", count}, {"max_entry_deviation", worst_dev}, {"failures", deriv_fail}});
  d.tolerance = 5e-2;
  d.seed = seed;
  d.samples = count;
  out.push_back(d);
  Report p = make("approx_density", density_pass == count,
                  {{"addresses", count}, {"passing", density_pass}, {"mean_densities", mean}, {"failing_prefixes", failing}});
  p.tolerance = cfg.min_density;
  p.seed = seed;
  p.samples = count * cfg.samples_per_radius * static_cast<long>(cfg.r_list.size());
  p.config = cfg.to_json();
  out.push_back(p);
  Report c = make("identity_control", control_fail == 0, {{"addresses", count}, {"max_density", control_max}, {"above", control_fail}});
  c.tolerance = 0.6;
  c.seed = seed;
  out.push_back(c);
  return out;
}

std::vector<Report> lemma(long pairs, std::uint64_t seed) {
  const int n = 2, ell = 1;
  TwistSpec ts;
  ts.n = n;
  ts.p = 2;
  ts.s_in = 0.1;
  ts.s_out = 0.4;
  ts.angle = 1.0;
  ts.area_angle = true;
  auto phi = std::make_shared<PlaneTwist>(ts);
  const Point x0 = make_point({0.75, 0.5});
  const auto nb = linearize::measure_norms(*phi, Ball{x0, 0.05}, 400);
  const double r = 0.99 * linearize::admissible_radius(nb.M, ell);
  auto L = linearize::linearize_on_ball(phi, x0, r, nb);
  std::vector<Report> out;
  json setup = {{"center", {x0[0], x0[1]}}, {"radius", r}, {"M", nb.M}, {"ell", ell}};

  const double diam = linearize::image_diameter(*L, Ball{x0, r}, 512);
  Report a = make("lemma_diameter", diam < std::ldexp(1.0, -ell), {{"diameter", diam}, {"bound", std::ldexp(1.0, -ell)}});
  a.config = setup;
  out.push_back(a);

  const auto tc = linearize::tangent_containment(*phi, *L, 4000);
  Report b = make("lemma_containment", tc.outside == 0, {{"outside", tc.outside}, {"worst_ratio", tc.worst_ratio}});
  b.samples = tc.samples;
  b.config = setup;
  out.push_back(b);

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> U(-1.0, 1.0);
  auto in_ball = [&](double rad) {
    Point p(n);
    do {
      for (int i = 0; i < n; ++i) p[i] = U(rng);
    } while (p.norm() > 1.0);
    return Point(x0 + rad * p);
  };
  double inner = 0.0, outer = 0.0, det_dev = 0.0;
  for (int i = 0; i < 4000; ++i) {
    const Point x = in_ball(0.5 * r);
    inner = std::max(inner, (L->forward(x) - L->tangent()(x)).norm());
    Point y = in_ball(3.0 * r);
    if ((y - x0).norm() >= r) outer = std::max(outer, (L->forward(y) - phi->forward(y)).norm());
    const Point z = in_ball(r);
    const double d = smoothmaps::numeric_jacobian([&](const Point& q) { return L->forward(q); }, z, 1e-4 * r).determinant();
    det_dev = std::max(det_dev, std::abs(d - 1.0));
  }
  // Monte Carlo in equal boxes around x0 and Phi(x0), rescaled to the unit cube
  const double h = r * (nb.D + 1.0);
  const Point src = x0 - Point::Constant(n, h), dst = phi->forward(x0) - Point::Constant(n, h);
  auto local = std::make_shared<smoothmaps::LambdaMap>(
      n, [=](const Point& u) { return Point((L->forward(src + 2 * h * u) - dst) / (2 * h)); },
      [=](const Point& v) { return Point((L->inverse(dst + 2 * h * v) - src) / (2 * h)); }, Box::everywhere(n),
      "lemma_local");
  std::vector<Box> rects;
  const double half = 0.7 * r / (2 * h);  // inside the rescaled ball
  std::uniform_real_distribution<double> side(0.2 * half, half), pos(0.0, 1.0);
  for (int i = 0; i < 20; ++i) {
    Box bx{Point(n), Point(n)};
    for (int d = 0; d < n; ++d) {
      const double s = side(rng);
      bx.lo[d] = 0.5 - half + pos(rng) * (2 * half - s);
      bx.hi[d] = bx.lo[d] + s;
    }
    rects.push_back(bx);
  }
  Sampler s(n, seed);
  const Report mp = measure_preservation_test(*local, rects, s, 1000000);
  Report c = make("lemma_surgery", inner <= 1e-12 && outer == 0.0 && det_dev <= 1e-3 && mp.pass,
                  {{"inner_vs_tangent", inner},
                   {"outer_vs_phi", outer},
                   {"max_det_deviation", det_dev},
                   {"mp_worst_z", mp.statistics["worst_z"]},
                   {"mp_pass", mp.pass},
                   {"trivial", L->trivial()}});
  c.samples = 4000 + mp.samples;
  c.seed = seed;
  c.config = setup;
  out.push_back(c);

  long violations = 0;
  double worst = INFINITY;
  for (long i = 0; i < pairs; ++i) {
    const Point x = in_ball(r), y = in_ball(r);
    const double lhs = (L->glued(x) - L->glued(y)).norm(), rhs = 0.5 * (L->tangent().A * (x - y)).norm();
    if (rhs > 0) worst = std::min(worst, lhs / rhs);
    if (lhs < rhs) ++violations;
  }
  Report d = make("lemma_injectivity", violations == 0, {{"pairs", pairs}, {"violations", violations}, {"min_ratio", worst}});
  d.samples = pairs;
  d.seed = seed;
  d.config = setup;
  out.push_back(d);
  return out;
}

std::vector<Report> theorem(int n, int K_max, std::uint64_t seed) {
  theorem_map::PipelineConfig cfg;
  cfg.n = n;
  cfg.seed = seed;
  const auto res = theorem_map::run_pipeline(cfg, K_max);
  std::vector<Report> out;
  for (auto& s : res.stages)
    for (auto c : s.checks) {
      c.config["stage"] = s.k;
      out.push_back(c);
    }
  Report p = make("pipeline", res.error.empty() && static_cast<int>(res.stages.size()) == K_max,
                  {{"stages", res.stages.size()}, {"error", res.error}, {"decay_ledger", res.decay_ledger()}}, "exact");
  p.config = cfg.to_json();
  p.config["K_max"] = K_max;
  out.push_back(p);
  return out;
}

std::vector<Report> segment_length(int max_depth) {
  auto tower = basic_map::build_tower(2, 24, true);
  CantorAddress a;
  a.n = 2;
  a.digits.assign(30, 1);
  std::vector<int> depths;
  for (int k = 1; k <= max_depth; ++k) depths.push_back(k);
  return {segment_image_length(*tower, geometry::cantor_point(a), depths)};
}

const std::vector<std::string>& names() {
  static const std::vector<std::string> v{"sequences", "cantor", "cauchy", "moser",   "measure", "cov",
                                          "sign",      "approx-diff", "lemma", "theorem", "length"};
  return v;
}

std::vector<Report> run(const std::string& name, const SuiteOptions& o) {
  if (name == "all") {
    std::vector<Report> all;
    for (auto& s : names()) {
      auto r = run(s, o);
      all.insert(all.end(), r.begin(), r.end());
    }
    return all;
  }
  std::vector<Report> r;
  if (name == "sequences") r = sequences(pick(o.depth, 20));
  else if (name == "cantor") r = cantor(o.n, pick(o.depth, 6), pick(o.samples, 1000000L), o.seed);
  else if (name == "cauchy") r = cauchy(o.n, pick(o.depth, 6), pick(o.samples, 10000L), o.seed);
  else if (name == "moser") r = moser(pick(o.cells, 128), pick(o.tol, 5e-3));
  else if (name == "measure") r = measure(o.n, pick(o.depth, 3), pick(o.samples, 1000000L), o.seed, o.theorem_k);
  else if (name == "cov") r = change_of_variables(o.n, pick(o.depth, 2));
  else if (name == "sign") r = jacobian_sign(o.n, pick(o.depth, 3), pick(o.samples, 10000L), o.seed);
  else if (name == "approx-diff") r = approx_diff(pick(o.addresses, 100), pick(o.depth, 8), o.seed);
  else if (name == "lemma") r = lemma(pick(o.samples, 10000L), o.seed);
  else if (name == "theorem") r = theorem(o.n, pick(o.depth, 2), o.seed);
  else if (name == "length") r = segment_length(pick(o.depth, 6));
  else throw std::invalid_argument("unknown suite '" + name + "'");
  for (auto& x : r) x.config["suite"] = name;
  return r;
}

}  // namespace cubeflow::verify::suites
