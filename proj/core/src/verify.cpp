#include "cubeflow/verify.hpp"

#include <boost/random/sobol.hpp>
#include <boost/random/uniform_01.hpp>

#include <cmath>
#include <fstream>
#include <numeric>

namespace cubeflow::verify {

json Report::to_json() const {
  return json{{"check", check},           {"statistics", statistics}, {"tolerance", tolerance},
              {"pass", pass},             {"samples", samples},       {"seed", seed},
              {"config", config},         {"provenance", provenance},
              {"reading", provenance == "exact" ? "proves" : "consistent with"}};
}

Report Report::from_json(const json& j) {
  Report r;
  r.check = j.at("check").get<std::string>();
  r.statistics = j.value("statistics", json::object());
  r.tolerance = j.value("tolerance", 0.0);
  r.pass = j.at("pass").get<bool>();
  r.samples = j.value("samples", 0L);
  r.seed = j.value("seed", std::uint64_t{0});
  r.config = j.value("config", json::object());
  r.provenance = j.value("provenance", std::string("sampled"));
  return r;
}

void write_jsonl(std::ostream& os, const Report& r) { os << r.to_json().dump() << '\n'; }

std::vector<Report> read_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open report file " + path);
  std::vector<Report> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const json j = json::parse(line);
    if (j.contains("check")) out.push_back(Report::from_json(j));  // other lines are headers
  }
  return out;
}

Scheme parse_scheme(const std::string& s) {
  if (s == "uniform") return Scheme::Uniform;
  if (s == "sobol") return Scheme::Sobol;
  if (s == "grid") return Scheme::Grid;
  throw std::invalid_argument("unknown sampling scheme '" + s + "' (uniform|sobol|grid)");
}

std::string to_string(Scheme s) {
  switch (s) {
    case Scheme::Uniform: return "uniform";
    case Scheme::Sobol: return "sobol";
    case Scheme::Grid: return "grid";
  }
  return "?";
}

struct Sampler::SobolState {
  explicit SobolState(int n) : engine(n) {}
  boost::random::sobol engine;
  boost::random::uniform_01<double> u;
};

Sampler::Sampler(int n, std::uint64_t seed, Scheme scheme, long grid_count)
    : n_(n), seed_(seed), scheme_(scheme), grid_count_(grid_count) {
  if (n < 1 || n > kMaxDim) throw std::invalid_argument("sampler: dimension out of range");
  reset();
}

Sampler::Sampler(const Sampler& o) : Sampler(o.n_, o.seed_, o.scheme_, o.grid_count_) {}

Sampler::~Sampler() = default;

void Sampler::reset() {
  index_ = 0;
  rng_.seed(seed_);
  if (scheme_ == Scheme::Sobol) sobol_ = std::make_unique<SobolState>(n_);
  if (scheme_ == Scheme::Grid) {
    const long count = grid_count_ > 0 ? grid_count_ : 1 << 16;
    grid_side_ = std::max(1, static_cast<int>(std::ceil(std::pow(double(count), 1.0 / n_) - 1e-9)));
  }
}

Point Sampler::next() {
  Point p(n_);
  switch (scheme_) {
    case Scheme::Uniform: {
      std::uniform_real_distribution<double> U(0.0, 1.0);
      for (int i = 0; i < n_; ++i) p[i] = U(rng_);
      break;
    }
    case Scheme::Sobol: {
      // Cranley-Patterson shift drawn from the seed (none for seed 0)
      for (int i = 0; i < n_; ++i) p[i] = sobol_->u(sobol_->engine);
      if (seed_ != 0) {
        std::mt19937_64 g(seed_);
        std::uniform_real_distribution<double> U(0.0, 1.0);
        for (int i = 0; i < n_; ++i) p[i] = std::fmod(p[i] + U(g), 1.0);
      }
      break;
    }
    case Scheme::Grid: {
      long total = 1;
      for (int i = 0; i < n_; ++i) total *= grid_side_;
      long idx = index_ % total;
      for (int i = n_ - 1; i >= 0; --i) {
        p[i] = (idx % grid_side_ + 0.5) / grid_side_;
        idx /= grid_side_;
      }
      break;
    }
  }
  ++index_;
  return p;
}

Point Sampler::next_in(const Box& b) {
  const Point u = next();
  return b.lo + (b.hi - b.lo).cwiseProduct(u);
}

Point Sampler::next_in(const Ball& b) {
  for (;;) {
    const Point u = next();
    const Point d = 2.0 * u - Point::Ones(n_);
    if (d.norm() <= 1.0) return b.center + b.radius * d;
  }
}

std::vector<Point> Sampler::take(long count) {
  std::vector<Point> v;
  v.reserve(count);
  for (long i = 0; i < count; ++i) v.push_back(next());
  return v;
}

double uniform_distance(const SmoothMap& f, const SmoothMap& g, Sampler& s, long N) {
  double fwd = 0.0, inv = 0.0;
  for (long i = 0; i < N; ++i) {
    const Point x = s.next();
    fwd = std::max(fwd, (f.forward(x) - g.forward(x)).norm());
    inv = std::max(inv, (f.inverse(x) - g.inverse(x)).norm());
  }
  return fwd + inv;
}

std::vector<Box> random_rectangles(int n, int count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  std::vector<Box> out;
  for (int c = 0; c < count; ++c) {
    Box b{Point(n), Point(n)};
    for (int i = 0; i < n; ++i) {
      const double side = 0.1 + 0.4 * U(rng);
      b.lo[i] = (1.0 - side) * U(rng);
      b.hi[i] = b.lo[i] + side;
    }
    out.push_back(b);
  }
  return out;
}

Report measure_preservation_test(const SmoothMap& map, const std::vector<Box>& regions, Sampler& s, long N,
                                 double sigmas) {
  if (N < 1) throw std::invalid_argument("measure_preservation_test: need N >= 1");
  const int n = map.dim();
  std::vector<long> hits(regions.size(), 0);
  for (long i = 0; i < N; ++i) {
    const Point x = map.inverse(s.next());
    for (size_t r = 0; r < regions.size(); ++r)
      if (regions[r].contains(x)) ++hits[r];
  }
  Report rep;
  rep.check = "measure_preservation";
  rep.samples = N;
  rep.seed = s.seed();
  rep.tolerance = sigmas;
  rep.config = {{"map", map.provenance()}, {"regions", regions.size()}, {"scheme", to_string(s.scheme())}, {"n", n}};
  rep.pass = true;
  double worst = 0.0;
  json rows = json::array();
  for (size_t r = 0; r < regions.size(); ++r) {
    const double m = regions[r].volume();
    const double est = double(hits[r]) / N;
    const double sigma = std::sqrt(m * (1.0 - m) / N);
    const double z = sigma > 0 ? (est - m) / sigma : (est == m ? 0.0 : INFINITY);
    worst = std::max(worst, std::abs(z));
    rep.pass = rep.pass && std::abs(z) <= sigmas;
    rows.push_back({{"lo", std::vector<double>(regions[r].lo.data(), regions[r].lo.data() + n)},
                    {"hi", std::vector<double>(regions[r].hi.data(), regions[r].hi.data() + n)},
                    {"measure", m},
                    {"estimate", est},
                    {"deviation", est - m},
                    {"sigma", sigma},
                    {"z", z}});
  }
  rep.statistics = {{"rectangles", rows}, {"worst_z", worst}};
  return rep;
}

double gaussian_bump(const Point& x) {
  const double s = 0.15;
  return std::exp(-(x - constant_point(static_cast<int>(x.size()), 0.5)).squaredNorm() / (2 * s * s));
}

Report change_of_variables_test(const SmoothMap& map, const std::function<double(const Point&)>& g,
                                const Quadrature& q, double tol) {
  const int n = map.dim();
  const Box Q = Box::unit(n);
  auto sides = [&](long count) {
    Sampler s(n, 0, Scheme::Sobol);
    double lhs = 0.0, rhs = 0.0;
    for (long i = 0; i < count; ++i) {
      const Point x = s.next();
      const Mat J = smoothmaps::numeric_jacobian(map, x, q.fd_step, Q).J;
      lhs += g(x) * std::abs(J.determinant());
      rhs += g(map.inverse(x));
    }
    return std::make_pair(lhs / count, rhs / count);
  };
  const long N = 1L << q.log2_points;
  const auto [l1, r1] = sides(N);
  const auto [l2, r2] = sides(2 * N);
  const double change = std::max(std::abs(l2 - l1) / std::abs(l2), std::abs(r2 - r1) / std::abs(r2));
  Report rep;
  rep.check = "change_of_variables";
  rep.samples = 2 * N;
  rep.tolerance = tol;
  rep.config = {{"map", map.provenance()}, {"points", N}, {"fd_step", q.fd_step}, {"refine_tol", q.refine_tol}};
  const double disc = std::abs(l2 - r2) / std::abs(r2);
  rep.statistics = {{"jacobian_side", l2},   {"pullback_side", r2},       {"relative_discrepancy", disc},
                    {"refinement_change", change}, {"converged", change <= q.refine_tol}};
  rep.pass = disc <= tol && change <= q.refine_tol;
  return rep;
}

json ApproxDiffConfig::to_json() const {
  return json{{"eps", eps_list}, {"radii", r_list}, {"samples_per_radius", samples_per_radius},
              {"min_density", min_density}, {"seed", seed}};
}

double approx_density(const PointMap& map, const Point& x, const Point& fx, const Mat& L, double eps, double r,
                      long samples, std::uint64_t seed) {
  const int n = static_cast<int>(x.size());
  constexpr int kShells = 16;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  std::normal_distribution<double> N(0.0, 1.0);
  const long per = std::max(1L, samples / kShells);
  long good = 0, total = 0;
  for (int sh = 0; sh < kShells; ++sh) {
    for (long i = 0; i < per; ++i) {
      // radius uniform in volume within the shell
      const double v = (sh + U(rng)) / kShells;
      const double rho = r * std::pow(v, 1.0 / n);
      Point d(n);
      for (int k = 0; k < n; ++k) d[k] = N(rng);
      const Point y = x + rho * d / d.norm();
      const Point dy = y - x;
      if ((map(y) - fx - L * dy).norm() < eps * dy.norm()) ++good;
      ++total;
    }
  }
  return double(good) / total;
}

Report approx_diff_test(const PointMap& map, const Point& x, const Point& fx, const Mat& L,
                        const ApproxDiffConfig& cfg) {
  if (cfg.r_list.empty() || cfg.eps_list.empty()) throw std::invalid_argument("approx_diff_test: empty radius or eps list");
  const int n = static_cast<int>(x.size());
  Report rep;
  rep.check = "approx_diff";
  rep.seed = cfg.seed;
  rep.tolerance = cfg.min_density;
  rep.config = cfg.to_json();
  rep.config["point"] = std::vector<double>(x.data(), x.data() + n);
  rep.config["L"] = std::vector<double>(L.data(), L.data() + L.size());
  rep.pass = true;
  json traj = json::array();
  for (size_t e = 0; e < cfg.eps_list.size(); ++e) {
    std::vector<double> d;
    bool monotone = true;
    double lowest = 1.0;
    for (size_t i = 0; i < cfg.r_list.size(); ++i) {
      d.push_back(approx_density(map, x, fx, L, cfg.eps_list[e], cfg.r_list[i], cfg.samples_per_radius,
                                 cfg.seed + 1000 * e + i));
      if (i && d[i] < d[i - 1]) monotone = false;
      lowest = std::min(lowest, d[i]);
    }
    const bool ok = monotone && lowest >= cfg.min_density;
    rep.pass = rep.pass && ok;
    traj.push_back({{"eps", cfg.eps_list[e]}, {"densities", d}, {"non_decreasing", monotone}, {"min", lowest}, {"pass", ok}});
  }
  // nested witness radii
  json wit = json::array();
  double r = cfg.r_list.front();
  for (int k = 1; k <= static_cast<int>(cfg.r_list.size()); ++k) {
    const double dens = approx_density(map, x, fx, L, cfg.eps_list.front(), r, cfg.samples_per_radius, cfg.seed + 77 * k);
    const double bound = 1.0 - std::ldexp(1.0, -k);
    wit.push_back({{"k", k}, {"radius", r}, {"density", dens}, {"bound", bound}, {"consistent", dens >= bound}});
    r /= std::pow(2.0, double(k) / n);
  }
  rep.samples = cfg.samples_per_radius * static_cast<long>(cfg.r_list.size() * (cfg.eps_list.size() + 1));
  rep.statistics = {{"trajectories", traj}, {"witness", wit}};
  return rep;
}

int local_degree(const SmoothMap& map, const Point& x, double radius) {
  const double two_pi = 2.0 * std::acos(-1.0);
  const Point fx = map.forward(x);
  auto arg = [&](double t) {
    const Point v = map.forward(x + radius * make_point({std::cos(t), std::sin(t)})) - fx;
    return std::atan2(v[1], v[0]);
  };
  auto wrap = [&](double a) { return a - two_pi * std::round(a / two_pi); };
  double total = 0.0;
  // bisect every arc whose image turns by more than pi/4
  std::function<bool(double, double, double, double, int)> arc = [&](double t0, double a0, double t1, double a1,
                                                                     int depth) {
    const double d = wrap(a1 - a0);
    if (std::abs(d) <= 0.25 * two_pi / 2) {
      total += d;
      return true;
    }
    if (depth == 0) return false;
    const double tm = 0.5 * (t0 + t1), am = arg(tm);
    return arc(t0, a0, tm, am, depth - 1) && arc(tm, am, t1, a1, depth - 1);
  };
  const int base = 64;
  double a_prev = arg(0.0);
  const double a_first = a_prev;
  for (int i = 1; i <= base; ++i) {
    const double t = two_pi * i / base;
    const double a = i == base ? a_first : arg(t);
    if (!arc(two_pi * (i - 1) / base, a_prev, t, a, 60)) return 0;
    a_prev = a;
  }
  return static_cast<int>(std::lround(total / two_pi));
}

Report jacobian_sign_survey(const SmoothMap& map, Sampler& s, long N, const SignSurvey& cfg) {
  const int n = map.dim();
  const Box Q = Box::unit(n);
  long pos = 0, neg = 0, zero = 0, skipped = 0, unresolved = 0, by_degree = 0;
  const long max_draws = 100 * std::max(N, 1L);
  for (long evaluated = 0, draws = 0; evaluated < N && draws < max_draws; ++draws) {
    const Point x = s.next();
    if (cfg.on_carrier && cfg.on_carrier(x)) {
      ++skipped;
      continue;
    }
    ++evaluated;
    // shrink the step until two successive estimates agree; thin twist shells need h far below fd_step
    double d = smoothmaps::numeric_jacobian(map, x, cfg.fd_step, Q).J.determinant();
    bool settled = false;
    for (double h = cfg.fd_step / 10; h >= cfg.min_step && !settled; h /= 10) {
      const double e = smoothmaps::numeric_jacobian(map, x, h, Q).J.determinant();
      settled = std::abs(e - d) <= cfg.agreement * std::max(std::abs(e), std::abs(d));
      d = e;
    }
    if (!settled && n == 2) {
      // finite differences cannot resolve the cancellation here; the map is a homeomorphism, so the winding
      // number of the image of a small circle gives the orientation
      int w = 0;
      for (double rad = cfg.degree_radius; w == 0 && rad <= 1e-2; rad *= 10) w = local_degree(map, x, rad);
      if (w == 1) ++by_degree, ++pos;
      else if (w == -1) ++neg;
      else ++unresolved;
    } else if (!settled) ++unresolved;
    else if (d > 0) ++pos;
    else if (d < 0) ++neg;
    else ++zero;
  }
  const long off = pos + neg + zero + unresolved;
  long carrier_ok = 0;
  std::vector<double> dets;
  for (auto& M : cfg.carrier_estimates) {
    const double d = M.determinant();
    dets.push_back(d);
    if (d >= cfg.carrier_lo && d <= cfg.carrier_hi) ++carrier_ok;
  }
  Report rep;
  rep.check = "jacobian_sign";
  rep.samples = N;
  rep.seed = s.seed();
  rep.config = {{"map", map.provenance()}, {"fd_step", cfg.fd_step}, {"min_step", cfg.min_step}, {"agreement", cfg.agreement}, {"carrier_range", {cfg.carrier_lo, cfg.carrier_hi}}};
  const double frac_pos = off ? double(pos) / off : 1.0;
  rep.statistics = {{"off_carrier", off},
                    {"skipped_on_carrier", skipped},
                    {"positive_fraction", frac_pos},
                    {"negative_fraction", off ? double(neg) / off : 0.0},
                    {"zero", zero},
                    {"unresolved", unresolved},
                    {"decided_by_degree", by_degree},
                    {"carrier_estimates", dets.size()},
                    {"carrier_in_range", carrier_ok}};
  if (!dets.empty()) {
    rep.statistics["carrier_det_min"] = *std::min_element(dets.begin(), dets.end());
    rep.statistics["carrier_det_max"] = *std::max_element(dets.begin(), dets.end());
  }
  rep.pass = off == N && pos == off && carrier_ok == static_cast<long>(dets.size());
  return rep;
}

namespace {

struct LengthWalker {
  const basic_map::MapTower& tower;
  Point base;
  int depth;
  double tol, min_dt;
  long evals = 0;

  Point image(double t) {
    ++evals;
    Point x = base;
    x[x.size() - 1] = t;
    return depth == 0 ? x : tower.eval(x, depth).value;
  }
  double piece(double t0, const Point& p0, double t1, const Point& p1) {
    const double tm = 0.5 * (t0 + t1);
    const Point pm = image(tm);
    const double a = (pm - p0).norm(), b = (p1 - pm).norm(), c = (p1 - p0).norm();
    // the midpoint test catches out-and-back runs along a line, which leave a + b = c
    const double skew = (pm - 0.5 * (p0 + p1)).norm();
    if (t1 - t0 < min_dt || (a + b - c <= tol * std::max(c, 1e-300) && skew <= std::sqrt(tol) * c)) return a + b;
    return piece(t0, p0, tm, pm) + piece(tm, pm, t1, p1);
  }
  double length(int seeds) {
    double total = 0.0;
    Point prev = image(0.0);
    for (int i = 1; i <= seeds; ++i) {
      const double t1 = double(i) / seeds, t0 = double(i - 1) / seeds;
      const Point p1 = image(t1);
      total += piece(t0, prev, t1, p1);
      prev = p1;
    }
    return total;
  }
};

// narrowest twist shell among generations 1..depth, in absolute units
double shell_width(int n, int depth) {
  double w = 1.0;
  for (int j = 1; j <= depth; ++j)
    w = std::min(w, rearrange::exchange_spec_for_generation(n, j).resolved().shell * geometry::alpha_d(j - 1));
  return w;
}

}  // namespace

std::vector<SegmentLength> segment_image_lengths(const basic_map::MapTower& tower, const Point& base,
                                                 const std::vector<int>& depths, const SegmentConfig& cfg) {
  std::vector<SegmentLength> out;
  for (int k : depths) {
    if (k < 0 || k > tower.depth()) throw std::invalid_argument("segment_image_lengths: depth outside the tower");
    SegmentLength s;
    s.depth = k;
    // seeds no wider than half a shell, so grazing passes through a shell are not skipped
    int seeds = cfg.seed_points;
    if (k > 0)
      while (seeds < (1 << 24) && 1.0 / seeds > 0.5 * shell_width(tower.dim(), k)) seeds *= 2;
    LengthWalker w{tower, base, k, cfg.tol, cfg.min_dt};
    s.length = w.length(seeds);
    LengthWalker w2{tower, base, k, 0.5 * cfg.tol, cfg.min_dt};
    s.refined = w2.length(2 * seeds);
    s.evaluations = w.evals + w2.evals;
    s.converged = std::abs(s.refined - s.length) <= cfg.stability * s.refined;
    out.push_back(s);
  }
  return out;
}

Report segment_image_length(const basic_map::MapTower& tower, const Point& base, const std::vector<int>& depths,
                            const SegmentConfig& cfg) {
  const auto L = segment_image_lengths(tower, base, depths, cfg);
  Report rep;
  rep.check = "segment_image_length";
  rep.tolerance = cfg.stability;
  rep.config = {{"base", std::vector<double>(base.data(), base.data() + base.size())},
                {"depths", depths},
                {"seed_points", cfg.seed_points},
                {"tol", cfg.tol}};
  json rows = json::array();
  bool increasing = true, converged = true;
  double min_gain = INFINITY;
  long evals = 0;
  for (size_t i = 0; i < L.size(); ++i) {
    rows.push_back({{"depth", L[i].depth}, {"length", L[i].refined}, {"coarse", L[i].length}, {"converged", L[i].converged}});
    converged = converged && L[i].converged;
    if (i) {
      increasing = increasing && L[i].refined > L[i - 1].refined;
      min_gain = std::min(min_gain, L[i].refined - L[i - 1].refined);
    }
    evals += L[i].evaluations;
  }
  rep.samples = evals;
  rep.statistics = {{"lengths", rows}, {"strictly_increasing", increasing}, {"all_converged", converged},
                    {"min_increment", L.size() > 1 ? min_gain : 0.0}};
  rep.pass = increasing && converged;
  return rep;
}

MapPtr power_map(int n, double exponent) {
  if (!(exponent > 0)) throw std::invalid_argument("power_map: exponent must be positive");
  auto f = [exponent](const Point& x) {
    Point y = x;
    for (int i = 0; i < y.size(); ++i) y[i] = std::pow(x[i], exponent);
    return y;
  };
  auto g = [exponent](const Point& y) {
    Point x = y;
    for (int i = 0; i < x.size(); ++i) x[i] = std::pow(y[i], 1.0 / exponent);
    return x;
  };
  return std::make_shared<smoothmaps::LambdaMap>(n, f, g, Box::unit(n), "power_control");
}

}  // namespace cubeflow::verify
