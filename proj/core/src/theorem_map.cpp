#include "cubeflow/theorem_map.hpp"

#include "cubeflow/io.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>

namespace cubeflow::theorem_map {

namespace {

constexpr double kHessStep = 1e-4;

Rational pow_rational(const Rational& r, int e) {
  Rational out = 1;
  for (int i = 0; i < e; ++i) out *= r;
  return out;
}

verify::Report exact_check(const std::string& name, bool pass, json stats) {
  verify::Report r;
  r.check = name;
  r.pass = pass;
  r.provenance = "exact";
  r.statistics = std::move(stats);
  return r;
}

verify::Report sampled_check(const std::string& name, bool pass, long samples, std::uint64_t seed, json stats) {
  verify::Report r;
  r.check = name;
  r.pass = pass;
  r.samples = samples;
  r.seed = seed;
  r.statistics = std::move(stats);
  return r;
}

// Euclidean distance from x to the closed axis box of centre c, half edge h
double box_distance(const Point& x, const Point& c, double h) {
  double s = 0.0;
  for (int i = 0; i < x.size(); ++i) {
    const double d = std::max(0.0, std::abs(x[i] - c[i]) - h);
    s += d * d;
  }
  return std::sqrt(s);
}

// closed generation-1 cubes
std::vector<Point> generation1_centres(int n) {
  std::vector<Point> cs;
  for (int j = 1; j <= (1 << n); ++j) {
    Point c(n);
    for (int i = 0; i < n; ++i) c[i] = geometry::dyadic_coord(j, i);
    cs.push_back(c);
  }
  return cs;
}

// Omega membership with a safety margin (margin 0: the open set itself)
struct OmegaTest {
  const Stage& s;
  std::shared_ptr<const rearrange::ExchangeMap> ex;
  std::vector<Point> cubes;
  double half1;
  BallIndex prior;
  std::vector<std::pair<Point, double>> prior_balls;  // earlier half-balls (centre, radius)
  double prior_reach = 0.0;

  explicit OmegaTest(const Stage& st) : s(st) {
    const int n = st.dim();
    ex = st.tower->stage(1).layout;
    cubes = generation1_centres(n);
    half1 = 0.5 * geometry::alpha_d(1);
    for (auto& L : st.layers) prior_reach = std::max(prior_reach, L->radius);
    prior = BallIndex(n, std::max(prior_reach, 1e-3));
    for (auto& L : st.layers)
      for (auto& b : L->balls) {
        prior.insert(b.center, 0.5 * L->radius + prior_reach, static_cast<int>(prior_balls.size()));
        prior_balls.emplace_back(b.center, 0.5 * L->radius);
      }
  }

  bool contains(const Point& x, double margin) const {
    for (int i = 0; i < x.size(); ++i)
      if (x[i] - margin <= 0.0 || x[i] + margin >= 1.0) return false;
    for (auto& c : cubes)
      if (box_distance(x, c, half1) <= margin) return false;
    if (ex->rigidity(x, margin) == rearrange::Rigidity::NonRigid) return false;
    if (margin > prior_reach) {
      // the index only covers margins up to prior_reach; fall back to a scan
      for (auto& [c, r] : prior_balls)
        if ((x - c).norm() <= r + margin) return false;
    } else if (const auto* ids = prior.candidates(x)) {
      for (int id : *ids)
        if ((x - prior_balls[id].first).norm() <= prior_balls[id].second + margin) return false;
    }
    return true;
  }
};

}  // namespace

json PipelineConfig::to_json() const {
  return json{{"n", n},
              {"eval_depth", eval_depth},
              {"radius_fraction", radius_fraction},
              {"lattice_slack", lattice_slack},
              {"cube_cells", cube_cells},
              {"cube_shrink", cube_shrink},
              {"omega_samples", omega_samples},
              {"norm_samples", norm_samples},
              {"check_samples", check_samples},
              {"seed", seed}};
}

PipelineConfig PipelineConfig::from_json(const json& j) {
  PipelineConfig c;
  c.n = j.value("n", c.n);
  c.eval_depth = j.value("eval_depth", c.eval_depth);
  c.radius_fraction = j.value("radius_fraction", c.radius_fraction);
  c.lattice_slack = j.value("lattice_slack", c.lattice_slack);
  c.cube_cells = j.value("cube_cells", c.cube_cells);
  c.cube_shrink = j.value("cube_shrink", c.cube_shrink);
  c.omega_samples = j.value("omega_samples", c.omega_samples);
  c.norm_samples = j.value("norm_samples", c.norm_samples);
  c.check_samples = j.value("check_samples", c.check_samples);
  c.seed = j.value("seed", c.seed);
  if (c.n < 2 || c.n > 3) throw std::invalid_argument("pipeline: n must be 2 or 3");
  if (!(c.radius_fraction > 0 && c.radius_fraction < 1)) throw std::invalid_argument("pipeline: radius_fraction in (0,1)");
  if (!(c.cube_shrink > 0 && c.cube_shrink < 1)) throw std::invalid_argument("pipeline: cube_shrink in (0,1)");
  if (c.cube_cells < 1 || c.eval_depth < 1) throw std::invalid_argument("pipeline: cube_cells and eval_depth must be >= 1");
  return c;
}

bool CubePiece::contains(const Point& x) const {
  for (int i = 0; i < x.size(); ++i)
    if (x[i] < lo[i] || x[i] > lo[i] + edge) return false;
  return true;
}

std::uint64_t BallIndex::key(const Point& x, const int* offset) const {
  std::uint64_t k = 0;
  for (int i = 0; i < n_; ++i) {
    const auto c = static_cast<std::int64_t>(std::floor(x[i] / cell_)) + (offset ? offset[i] : 0) + (1 << 20);
    k = (k << 21) | (static_cast<std::uint64_t>(c) & ((1u << 21) - 1));
  }
  return k;
}

void BallIndex::insert(const Point& c, double radius, int id) {
  const int span = static_cast<int>(std::ceil(radius / cell_));
  const int width = 2 * span + 1;
  int total = 1;
  for (int i = 0; i < n_; ++i) total *= width;
  int off[kMaxDim];
  for (int s = 0; s < total; ++s) {
    int rem = s;
    for (int i = 0; i < n_; ++i) {
      off[i] = rem % width - span;
      rem /= width;
    }
    buckets_[key(c, off)].push_back(id);
  }
}

const std::vector<int>* BallIndex::candidates(const Point& x) const {
  auto it = buckets_.find(key(x, nullptr));
  return it == buckets_.end() ? nullptr : &it->second;
}

long Layer::cube_count() const {
  long c = 0;
  for (auto& v : cubes) c += static_cast<long>(v.size());
  return c;
}

std::pair<int, int> Layer::locate(const Point& x) const {
  const auto* ids = source_index.candidates(x);
  if (!ids) return {0, 0};
  for (int id : *ids) {
    if ((x - balls[id].center).norm() > 0.5 * radius) continue;
    const auto& cs = cubes[id];
    for (size_t j = 0; j < cs.size(); ++j)
      if (cs[j].contains(x)) return {id + 1, static_cast<int>(j) + 1};
    return {id + 1, 0};
  }
  return {0, 0};
}

int Layer::locate_image(const Point& y) const {
  const auto* ids = image_index.candidates(y);
  if (!ids) return 0;
  for (int id : *ids)
    if ((y - balls[id].image_center()).norm() <= 0.5 * radius) return id + 1;
  return 0;
}

StageMap::StageMap(std::shared_ptr<const basic_map::MapTower> tower, std::vector<std::shared_ptr<const Layer>> layers,
                   int depth, bool glue_last)
    : tower_(std::move(tower)), layers_(std::move(layers)), depth_(depth), glue_last_(glue_last) {}

Point StageMap::forward(const Point& x) const {
  for (size_t li = layers_.size(); li-- > 0;) {
    const Layer& L = *layers_[li];
    const auto [b, c] = L.locate(x);
    if (!b) continue;
    Point z = x;
    if (c && (glue_last_ || li + 1 < layers_.size())) {
      const CubePiece& q = L.cubes[b - 1][c - 1];
      z = q.lo + q.edge * tower_->eval((x - q.lo) / q.edge, depth_).value;
    }
    return L.transports[b - 1]->forward(z);
  }
  return tower_->eval(x, depth_).value;
}

Point StageMap::inverse(const Point& y) const {
  for (size_t li = layers_.size(); li-- > 0;) {
    const Layer& L = *layers_[li];
    const int b = L.locate_image(y);
    if (!b) continue;
    Point z = L.transports[b - 1]->inverse(y);
    if (glue_last_ || li + 1 < layers_.size()) {
      for (auto& q : L.cubes[b - 1])
        if (q.contains(z)) {
          z = q.lo + q.edge * tower_->eval_inverse((z - q.lo) / q.edge, depth_).value;
          break;
        }
    }
    return z;
  }
  return tower_->eval_inverse(y, depth_).value;
}

std::string StageMap::provenance() const {
  return "theorem_stage(" + std::to_string(layers_.size() + 1) + (glue_last_ ? "" : ",unglued") + ")";
}

json StageMap::describe() const {
  json j = SmoothMap::describe();
  j["layers"] = layers_.size();
  j["eval_depth"] = depth_;
  j["glued"] = glue_last_;
  return j;
}

json Bookkeeping::to_json() const {
  return json{{"measure_C", rational_str(measure_C)},
              {"measure_C_value", to_double(measure_C)},
              {"measure_E", rational_str(measure_E)},
              {"measure_E_value", to_double(measure_E)},
              {"omega_measure", omega_measure},
              {"ball_measure", ball_measure},
              {"half_ball_measure", half_ball_measure},
              {"cube_measure", rational_str(cube_measure)},
              {"M", M},
              {"radius", radius},
              {"admissible_radius", admissible_radius},
              {"balls", balls},
              {"cubes", cubes},
              {"distance_sampled", distance_sampled},
              {"distance_bound", distance_bound}};
}

Bookkeeping Bookkeeping::from_json(const json& j) {
  Bookkeeping b;
  b.measure_C = parse_rational(j.at("measure_C").get<std::string>());
  b.measure_E = parse_rational(j.at("measure_E").get<std::string>());
  b.omega_measure = j.value("omega_measure", 0.0);
  b.ball_measure = j.value("ball_measure", 0.0);
  b.half_ball_measure = j.value("half_ball_measure", 0.0);
  b.cube_measure = parse_rational(j.value("cube_measure", std::string("0")));
  b.M = j.value("M", 0.0);
  b.radius = j.value("radius", 0.0);
  b.admissible_radius = j.value("admissible_radius", 0.0);
  b.balls = j.value("balls", 0L);
  b.cubes = j.value("cubes", 0L);
  b.distance_sampled = j.value("distance_sampled", 0.0);
  b.distance_bound = j.value("distance_bound", 0.0);
  return b;
}

bool Stage::on_carrier(const Point& x, int depth) const {
  if (basic_map::cantor_status(x, depth).state != basic_map::CantorState::Out) return true;
  for (auto& L : layers) {
    const auto [b, c] = L->locate(x);
    if (!c) continue;
    const CubePiece& q = L->cubes[b - 1][c - 1];
    if (basic_map::cantor_status((x - q.lo) / q.edge, depth).state != basic_map::CantorState::Out) return true;
  }
  return false;
}

std::vector<CarrierPiece> Stage::carriers() const {
  const int n = dim();
  std::vector<CarrierPiece> out{{1, Point::Zero(n), 1.0, Point::Zero(n)}};
  for (auto& L : layers)
    for (auto& cs : L->cubes)
      for (auto& q : cs) out.push_back({L->k + 1, q.lo, q.edge, q.shift});
  return out;
}

bool Stage::invariants_hold() const {
  return std::all_of(checks.begin(), checks.end(), [](const verify::Report& r) { return r.pass; });
}

json Stage::to_json() const {
  json j{{"k", k}, {"config", cfg.to_json()}, {"bookkeeping", book.to_json()}, {"invariants_hold", invariants_hold()}};
  j["checks"] = json::array();
  for (auto& c : checks) j["checks"].push_back(c.to_json());
  j["layers"] = json::array();
  for (auto& L : layers)
    j["layers"].push_back({{"k", L->k},
                           {"radius", L->radius},
                           {"M", L->M},
                           {"cell", L->cell},
                           {"shrink", L->shrink},
                           {"cube_half_edge", rational_str(L->cube_half_edge)},
                           {"balls", L->balls.size()},
                           {"cubes", L->cube_count()}});
  return j;
}

Stage init_stage(const PipelineConfig& cfg) {
  const PipelineConfig c = PipelineConfig::from_json(cfg.to_json());
  Stage s;
  s.k = 1;
  s.cfg = c;
  basic_map::TowerConfig tc;
  tc.method = moser::ExchangeMethod::ActionAngle;
  tc.budget = std::max(24, c.eval_depth);
  s.tower = basic_map::build_tower(c.n, c.eval_depth, true, tc);
  s.F = std::make_shared<StageMap>(s.tower, std::vector<std::shared_ptr<const Layer>>{}, c.eval_depth);
  s.book.measure_C = Rational(1) / pow_rational(Rational(2), c.n);
  s.book.measure_E = 0;
  s.book.cube_measure = 0;
  // |C_1| = lim |Q_k| = 2^{-n}: the generation measures decrease to it
  const Rational g20 = geometry::generation_measure(20, c.n);
  s.checks.push_back(exact_check("carrier_measure", g20 > s.book.measure_C && g20 < geometry::generation_measure(19, c.n),
                                 {{"measure_C", rational_str(s.book.measure_C)},
                                  {"generation_measure_20", to_double(g20)}}));
  // identity on the boundary of Q
  verify::Sampler smp(c.n, c.seed);
  double worst = 0.0;
  const long N = 2000;
  for (long i = 0; i < N; ++i) {
    Point x = smp.next();
    const int face = static_cast<int>(i % (2 * c.n));
    x[face / 2] = face % 2;
    worst = std::max(worst, (s.F->forward(x) - x).norm());
  }
  s.checks.push_back(sampled_check("boundary_identity", worst == 0.0, N, c.seed, {{"max_displacement", worst}}));
  return s;
}

LinearizeResult step_linearize(const Stage& s) {
  const int n = s.dim(), k = s.k;
  const double complement = to_double(s.complement_measure());
  OmegaTest omega(s);
  LinearizeResult out;

  // |Omega_k| and the norm sample
  verify::Sampler smp(n, s.cfg.seed + 101 * k, verify::Scheme::Sobol);
  long inside = 0;
  std::vector<Point> norm_pts;
  for (long i = 0; i < s.cfg.omega_samples; ++i) {
    const Point x = smp.next();
    if (!omega.contains(x, 0.0)) continue;
    ++inside;
    // finite-difference stencils must stay inside Omega
    if (static_cast<long>(norm_pts.size()) < s.cfg.norm_samples && omega.contains(x, 4 * kHessStep))
      norm_pts.push_back(x);
  }
  out.omega_measure = double(inside) / s.cfg.omega_samples;
  out.checks.push_back(sampled_check("omega_half", out.omega_measure > 0.5 * complement, s.cfg.omega_samples,
                                     smp.seed(), {{"omega", out.omega_measure}, {"half_complement", 0.5 * complement}}));
  if (!(out.omega_measure > 0.5 * complement))
    throw ResourceError("step_linearize: |Omega_" + std::to_string(k) + "| = " + std::to_string(out.omega_measure) +
                        " does not exceed half of |Q \\ C_k| = " + std::to_string(complement));

  // M over Omega
  auto F = [&](const Point& z) { return s.F->forward(z); };
  auto& nb = out.norms;
  nb.region = Ball{constant_point(n, 0.5), 0.5 * std::sqrt(double(n))};
  nb.fd_step = 1e-6;
  nb.samples = static_cast<int>(norm_pts.size());
  for (auto& x : norm_pts) {
    const Mat J = smoothmaps::numeric_jacobian(F, x, nb.fd_step);
    const auto sv = Eigen::JacobiSVD<Mat>(J).singularValues();
    nb.D = std::max(nb.D, sv[0]);
    nb.Dinv = std::max(nb.Dinv, 1.0 / sv[n - 1]);
    nb.D2 = std::max(nb.D2, smoothmaps::numeric_hessian_norm(F, x, kHessStep));
  }
  nb.M = nb.D + nb.Dinv + nb.D2;
  out.admissible = linearize::admissible_radius(nb.M, k);
  const double r = s.cfg.radius_fraction * out.admissible;
  out.radius = r;
  if (!std::isfinite(nb.M) || r < 1e-5)
    throw ResourceError("step_linearize: M = " + std::to_string(nb.M) + " gives radius " + std::to_string(r) +
                        ", too small for the ball lattice");

  // lattice of candidate centres
  const double d = 2.0 * r * (1.0 + s.cfg.lattice_slack);
  std::vector<Point> cand;
  if (n == 2) {
    const double dy = d * std::sqrt(3.0) / 2.0;
    for (int row = 0;; ++row) {
      const double y = r * (1.0 + s.cfg.lattice_slack) + row * dy;
      if (y >= 1.0) break;
      for (int col = 0;; ++col) {
        const double x = r * (1.0 + s.cfg.lattice_slack) + (row % 2 ? 0.5 * d : 0.0) + col * d;
        if (x >= 1.0) break;
        cand.push_back(make_point({x, y}));
      }
    }
  } else {
    const int m = static_cast<int>(std::floor((1.0 - 2.0 * r) / d)) + 1;
    for (int a = 0; a < m; ++a)
      for (int b = 0; b < m; ++b)
        for (int c = 0; c < m; ++c) cand.push_back(make_point({r + a * d, r + b * d, r + c * d}));
  }

  // greedy fill of what the lattice leaves around earlier holes
  const double fine = r / 3.0;
  const int m = static_cast<int>(std::floor((1.0 - 2.0 * r) / fine)) + 1;
  long total = 1;
  for (int i = 0; i < n; ++i) total *= m;
  for (long idx = 0; idx < total; ++idx) {
    Point c(n);
    long rem = idx;
    for (int i = 0; i < n; ++i) {
      c[i] = r + (rem % m) * fine;
      rem /= m;
    }
    cand.push_back(c);
  }
  BallIndex taken(n, d);

  const auto ex = s.tower->stage(1).layout;
  linearize::LinearizeOptions lo;
  lo.ell = k;
  lo.fd_step = 1e-7;
  long tangent_mismatch = 0;
  double tangent_dev = 0.0;
  for (auto& c : cand) {
    bool clash = false;
    if (const auto* ids = taken.candidates(c))
      for (int id : *ids) clash = clash || (c - out.balls[id].center).norm() < d * (1 - 1e-9);
    if (clash || !omega.contains(c, r)) continue;
    auto lin = linearize::linearize_on_ball(s.F, c, r, nb, lo);
    if (!lin->trivial()) throw ConstructionError("step_linearize: F_k is not affine on a ball of Omega_k");
    const Mat A = ex->rigid_linear(ex->rigidity(c, r));
    const double dev = (lin->tangent().A - A).norm();
    tangent_dev = std::max(tangent_dev, dev);
    if (dev > 1e-6) ++tangent_mismatch;
    BallSurgery b;
    b.center = c;
    b.radius = r;
    b.A = A;
    b.b = s.F->forward(c) - A * c;
    taken.insert(c, d, static_cast<int>(out.balls.size()));
    out.balls.push_back(b);
  }
  const double vol = geometry::unit_ball_volume(n) * std::pow(r, n);
  out.ball_measure = vol * out.balls.size();

  out.checks.push_back(exact_check("radius_admissible", r < out.admissible,
                                   {{"radius", r}, {"admissible", out.admissible}, {"M", nb.M}, {"k", k}}));
  out.checks.push_back(exact_check("ball_quarter", out.ball_measure > 0.25 * complement,
                                   {{"balls", out.balls.size()}, {"measure", out.ball_measure},
                                    {"quarter_complement", 0.25 * complement}}));
  out.checks.push_back(exact_check("tangent_rigid", tangent_mismatch == 0,
                                   {{"max_deviation", tangent_dev}, {"mismatches", tangent_mismatch}}));
  // diam F_k(B) < 2^{-k}: F_k = T on B with T an isometry
  double diam = 0.0;
  const size_t probe = std::min<size_t>(out.balls.size(), 16);
  for (size_t i = 0; i < probe; ++i)
    diam = std::max(diam, linearize::image_diameter(*s.F, Ball{out.balls[i].center, r}, 256));
  out.checks.push_back(sampled_check("image_diameter", 2.0 * r < std::ldexp(1.0, -k) && diam <= 2.0 * r * (1 + 1e-9),
                                     static_cast<long>(probe * 256), 0,
                                     {{"structural", 2.0 * r}, {"sampled_max", diam}, {"bound", std::ldexp(1.0, -k)}}));
  if (!(out.ball_measure > 0.25 * complement))
    throw ResourceError("step_linearize: ball packing covers " + std::to_string(out.ball_measure) +
                        ", need more than a quarter of " + std::to_string(complement));
  return out;
}

RearrangeResult step_rearrange(const Stage& s, const LinearizeResult& lin) {
  const int n = s.dim();
  auto layer = std::make_shared<Layer>();
  layer->k = s.k;
  layer->radius = lin.radius;
  layer->M = lin.norms.M;
  layer->shrink = s.cfg.cube_shrink;
  const double hr = 0.5 * lin.radius;
  layer->cell = hr / s.cfg.cube_cells;
  layer->source_index = BallIndex(n, lin.radius);
  layer->image_index = BallIndex(n, lin.radius);
  const double dvol = geometry::unit_ball_volume(n) * std::pow(hr, n);
  double min_cover = 1.0;
  bool first = true;
  for (size_t i = 0; i < lin.balls.size(); ++i) {
    const BallSurgery& b = lin.balls[i];
    rearrange::CubeTransportSpec spec;
    spec.source = Ball{b.center, hr};
    spec.target = Ellipsoid{b.image_center(), b.A * hr};
    spec.source_cubes = rearrange::pack_grid_cubes(spec.source, layer->cell, layer->shrink);
    if (spec.source_cubes.empty()) throw ConstructionError("step_rearrange: no grid cube fits the half-ball");
    if (first) {
      layer->cube_half_edge = spec.source_cubes.front().half_edge;
      first = false;
    }
    const double h = spec.source_cubes.front().half_edge_d();
    min_cover = std::min(min_cover, spec.source_cubes.size() * std::pow(2 * h, n) / dvol);
    spec.target_cubes = rearrange::natural_targets(spec);
    spec.assignment.resize(spec.source_cubes.size());
    std::iota(spec.assignment.begin(), spec.assignment.end(), 0);
    layer->transports.push_back(rearrange::ball_ellipsoid_transport(spec));
    std::vector<CubePiece> pieces;
    for (size_t j = 0; j < spec.source_cubes.size(); ++j) {
      if (spec.source_cubes[j].half_edge != layer->cube_half_edge)
        throw ConstructionError("step_rearrange: cube edges differ between balls");
      const Point sc = spec.source_cubes[j].center_d();
      pieces.push_back({Point(sc.array() - h), 2 * h, Point(spec.target_cubes[j].center_d() - sc)});
    }
    layer->cubes.push_back(std::move(pieces));
    layer->balls.push_back(b);
    layer->source_index.insert(b.center, hr, static_cast<int>(i));
    layer->image_index.insert(b.image_center(), hr, static_cast<int>(i));
  }
  RearrangeResult out;
  out.layer = layer;
  auto layers = s.layers;
  layers.push_back(layer);
  out.F_second = std::make_shared<StageMap>(s.tower, layers, s.cfg.eval_depth, false);

  out.checks.push_back(exact_check("half_ball_cover", min_cover >= 0.5, {{"min_fraction", min_cover}}));
  const Rational edge = 2 * layer->cube_half_edge;
  const Rational cube_measure = Rational(layer->cube_count()) * pow_rational(edge, n);
  const Rational bound = s.complement_measure() / (8 * pow_rational(Rational(2), n));
  out.checks.push_back(exact_check("cube_measure", cube_measure > bound,
                                   {{"cubes", layer->cube_count()}, {"measure", rational_str(cube_measure)},
                                    {"measure_value", to_double(cube_measure)}, {"bound", to_double(bound)}}));
  // F''_k is a translation on every cube
  std::mt19937_64 rng(s.cfg.seed + 7);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  double worst = 0.0, jac = 0.0;
  long tested = 0;
  for (size_t i = 0; i < layer->balls.size(); ++i)
    for (auto& q : layer->cubes[i]) {
      Point x(n);
      for (int d = 0; d < n; ++d) x[d] = q.lo[d] + q.edge * U(rng);
      worst = std::max(worst, (out.F_second->forward(x) - x - q.shift).norm());
      if (tested % 64 == 0) {
        const Point c = q.lo + Point::Constant(n, 0.5 * q.edge);
        const Mat J = smoothmaps::numeric_jacobian([&](const Point& z) { return out.F_second->forward(z); }, c, 1e-3 * q.edge);
        jac = std::max(jac, (J - Mat::Identity(n, n)).norm());
      }
      ++tested;
    }
  out.checks.push_back(sampled_check("cube_translation", worst <= 1e-12 && jac <= 1e-6, tested, s.cfg.seed + 7,
                                     {{"max_offset_error", worst}, {"max_jacobian_deviation", jac}}));
  // F''_k = F'_k outside the half-balls
  verify::Sampler smp(n, s.cfg.seed + 11);
  long outside = 0, differ = 0;
  for (long i = 0; i < s.cfg.check_samples / 4; ++i) {
    const Point x = smp.next();
    if (layer->locate(x).first) continue;
    ++outside;
    if ((out.F_second->forward(x) - s.F->forward(x)).norm() != 0.0) ++differ;
  }
  out.checks.push_back(sampled_check("rearrange_locality", differ == 0, outside, smp.seed(), {{"differing", differ}}));
  return out;
}

Stage step_glue(const Stage& s, const RearrangeResult& r) {
  const int n = s.dim();
  Stage t;
  t.k = s.k + 1;
  t.cfg = s.cfg;
  t.tower = s.tower;
  t.layers = s.layers;
  t.layers.push_back(r.layer);
  t.F = std::make_shared<StageMap>(t.tower, t.layers, t.cfg.eval_depth, true);
  const Layer& L = *r.layer;
  const Rational edge = 2 * L.cube_half_edge;
  t.book.cube_measure = Rational(L.cube_count()) * pow_rational(edge, n);
  t.book.measure_E = t.book.cube_measure / pow_rational(Rational(2), n);
  t.book.measure_C = s.book.measure_C + t.book.measure_E;
  t.book.radius = L.radius;
  t.book.M = L.M;
  t.book.balls = static_cast<long>(L.balls.size());
  t.book.cubes = L.cube_count();
  t.book.ball_measure = geometry::unit_ball_volume(n) * std::pow(L.radius, n) * L.balls.size();
  t.book.half_ball_measure = t.book.ball_measure / std::pow(2.0, n);
  t.book.admissible_radius = linearize::admissible_radius(L.M, s.k);

  const Rational comp = s.complement_measure();
  const Rational factor = Rational(1) / pow_rational(Rational(2), 2 * n + 3);
  t.checks.push_back(exact_check("E_bound", t.book.measure_E > factor * comp,
                                 {{"measure_E", rational_str(t.book.measure_E)},
                                  {"measure_E_value", to_double(t.book.measure_E)},
                                  {"bound", to_double(factor * comp)}}));
  t.checks.push_back(exact_check("complement_decay", t.complement_measure() < (1 - factor) * comp,
                                 {{"complement", to_double(t.complement_measure())},
                                  {"bound", to_double((1 - factor) * comp)}}));

  // locality outside the balls and the sup distance
  const std::uint64_t seed = s.cfg.seed + 13;
  verify::Sampler smp(n, seed);
  long outside = 0, differ = 0;
  double sup = 0.0, sup_inv = 0.0;
  const double R = L.radius;
  for (long i = 0; i < s.cfg.check_samples; ++i) {
    const Point x = smp.next();
    const Point a = s.F->forward(x), b = t.F->forward(x);
    bool in_ball = false;
    if (const auto* ids = L.source_index.candidates(x))
      for (int id : *ids) in_ball = in_ball || (x - L.balls[id].center).norm() < R;
    if (!in_ball) {
      ++outside;
      if ((a - b).norm() != 0.0) ++differ;
    }
    sup = std::max(sup, (a - b).norm());
    sup_inv = std::max(sup_inv, (s.F->inverse(x) - t.F->inverse(x)).norm());
  }
  t.checks.push_back(sampled_check("locality_outside_balls", differ == 0, outside, seed, {{"differing", differ}}));
  // structural: F_k and F_{k+1} agree off the half-balls and map each onto the same ball of diameter R
  t.book.distance_bound = 2.0 * R;
  t.book.distance_sampled = sup + sup_inv;
  t.checks.push_back(sampled_check("sup_distance", sup < std::ldexp(1.0, -s.k) && sup <= R * (1 + 1e-9),
                                   s.cfg.check_samples, seed,
                                   {{"sup", sup}, {"structural", R}, {"bound", std::ldexp(1.0, -s.k)}}));
  t.checks.push_back(sampled_check("uniform_distance",
                                   t.book.distance_sampled <= t.book.distance_bound * (1 + 1e-9) &&
                                       t.book.distance_bound < std::ldexp(1.0, -s.k + 1),
                                   s.cfg.check_samples, seed,
                                   {{"sampled", t.book.distance_sampled}, {"structural", t.book.distance_bound},
                                    {"bound", std::ldexp(1.0, -s.k + 1)}}));
  // F_{k+1}(B) = F_k(B): preimages of points of T(B) stay in B, round trip closes
  std::mt19937_64 rng(seed + 1);
  std::normal_distribution<double> N(0.0, 1.0);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  long escaped = 0, tested = 0;
  double trip = 0.0;
  for (size_t i = 0; i < L.balls.size(); i += std::max<size_t>(1, L.balls.size() / 500)) {
    const auto& b = L.balls[i];
    for (int j = 0; j < 8; ++j) {
      Point d(n);
      for (int c = 0; c < n; ++c) d[c] = N(rng);
      const Point y = b.image_center() + R * std::pow(U(rng), 1.0 / n) * d / d.norm();
      const Point x = t.F->inverse(y);
      if ((x - b.center).norm() > R * (1 + 1e-12)) ++escaped;
      trip = std::max(trip, (t.F->forward(x) - y).norm());
      ++tested;
    }
  }
  t.checks.push_back(sampled_check("ball_image_equal", escaped == 0 && trip <= 1e-9, tested, seed + 1,
                                   {{"escaped", escaped}, {"round_trip", trip}}));
  double worst = 0.0;
  for (long i = 0; i < 2000; ++i) {
    Point x = smp.next();
    x[(i / 2) % n] = i % 2;
    worst = std::max(worst, (t.F->forward(x) - x).norm());
  }
  t.checks.push_back(sampled_check("boundary_identity", worst == 0.0, 2000, seed, {{"max_displacement", worst}}));
  return t;
}

Stage advance(const Stage& s) {
  const LinearizeResult lin = step_linearize(s);
  const RearrangeResult re = step_rearrange(s, lin);
  Stage t = step_glue(s, re);
  t.book.omega_measure = lin.omega_measure;
  std::vector<verify::Report> all = lin.checks;
  all.insert(all.end(), re.checks.begin(), re.checks.end());
  all.insert(all.end(), t.checks.begin(), t.checks.end());
  for (auto& c : all) c.config["step"] = s.k;
  t.checks = all;
  return t;
}

json PipelineResult::decay_ledger() const {
  json j = json::array();
  if (stages.empty()) return j;
  const int n = stages.front().dim();
  const double factor = 1.0 - std::ldexp(1.0, -(2 * n + 3));
  const Stage& last = stages.back();
  for (auto& s : stages)
    j.push_back({{"k", s.k},
                 {"complement", to_double(s.complement_measure())},
                 {"distance_bound", s.k == 1 ? 0.0 : s.book.distance_bound},
                 {"step_bound", s.k == 1 ? 0.0 : std::ldexp(1.0, -(s.k - 1) + 1)},
                 {"measured", true}});
  // the remaining steps shrink the complement by the factor and add at most 2^{-k+1} each
  double comp = to_double(last.complement_measure());
  for (int k = last.k + 1; k <= last.k + 6; ++k) {
    comp *= factor;
    j.push_back({{"k", k},
                 {"complement", comp},
                 {"step_bound", std::ldexp(1.0, -(k - 1) + 1)},
                 {"cauchy_tail", std::ldexp(1.0, -(k - 1) + 2)},
                 {"measured", false}});
  }
  return j;
}

PipelineResult run_pipeline(const PipelineConfig& cfg, int K_max) {
  if (K_max < 1) throw std::invalid_argument("run_pipeline: K_max must be >= 1");
  PipelineResult res;
  res.stages.push_back(init_stage(cfg));
  for (int k = 1; k < K_max; ++k) {
    try {
      res.stages.push_back(advance(res.stages.back()));
    } catch (const ResourceError& e) {
      res.error = e.what();
      break;
    } catch (const ConstructionError& e) {
      res.error = e.what();
      break;
    } catch (const NumericError& e) {
      res.error = e.what();
      break;
    }
  }
  return res;
}

void save_stage(const Stage& s, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  const int n = s.dim();
  json j = s.to_json();
  j["provenance"] = io::provenance_header(s.cfg.to_json(), s.cfg.seed);
  for (size_t li = 0; li < s.layers.size(); ++li) {
    const Layer& L = *s.layers[li];
    io::GridFile g;
    const int width = n + n * n + n;
    g.dims = {static_cast<std::uint32_t>(L.balls.size()), static_cast<std::uint32_t>(width)};
    for (auto& b : L.balls) {
      for (int i = 0; i < n; ++i) g.values.push_back(b.center[i]);
      for (int i = 0; i < n * n; ++i) g.values.push_back(b.A.data()[i]);
      for (int i = 0; i < n; ++i) g.values.push_back(b.b[i]);
    }
    const std::string name = "layer" + std::to_string(L.k) + "_balls.bin";
    io::write_grid((fs::path(dir) / name).string(), g);
    j["layers"][li]["balls_file"] = name;
    j["layers"][li]["cube_measure"] = rational_str(Rational(L.cube_count()) * pow_rational(2 * L.cube_half_edge, n));
  }
  io::write_json((fs::path(dir) / "stage.json").string(), j);
}

Stage load_stage(const std::string& dir) {
  namespace fs = std::filesystem;
  const json j = io::read_json((fs::path(dir) / "stage.json").string());
  Stage s = init_stage(PipelineConfig::from_json(j.at("config")));
  const int n = s.dim();
  for (auto& lj : j.at("layers")) {
    const io::GridFile g = io::read_grid((fs::path(dir) / lj.at("balls_file").get<std::string>()).string());
    const int width = n + n * n + n;
    if (g.dims.size() != 2 || static_cast<int>(g.dims[1]) != width) throw std::runtime_error("load_stage: bad ball grid");
    LinearizeResult lin;
    lin.radius = lj.at("radius").get<double>();
    lin.norms.M = lj.at("M").get<double>();
    for (std::uint32_t i = 0; i < g.dims[0]; ++i) {
      const double* v = g.values.data() + static_cast<size_t>(i) * width;
      BallSurgery b;
      b.center = Point(n);
      b.A = Mat(n, n);
      b.b = Point(n);
      for (int d = 0; d < n; ++d) b.center[d] = v[d];
      for (int d = 0; d < n * n; ++d) b.A.data()[d] = v[n + d];
      for (int d = 0; d < n; ++d) b.b[d] = v[n + n * n + d];
      b.radius = lin.radius;
      lin.balls.push_back(b);
    }
    const RearrangeResult re = step_rearrange(s, lin);
    const Rational m = Rational(re.layer->cube_count()) * pow_rational(2 * re.layer->cube_half_edge, n);
    if (rational_str(m) != lj.at("cube_measure").get<std::string>())
      throw std::runtime_error("load_stage: rebuilt cube measure differs from the stored one");
    s.k += 1;
    s.layers.push_back(re.layer);
    s.F = std::make_shared<StageMap>(s.tower, s.layers, s.cfg.eval_depth, true);
  }
  if (s.k != j.at("k").get<int>()) throw std::runtime_error("load_stage: layer count does not match k");
  // the exact ledger must follow from the rebuilt layers
  Rational C = s.book.measure_C, E = 0, cubes = 0;
  for (auto& L : s.layers) {
    cubes = Rational(L->cube_count()) * pow_rational(2 * L->cube_half_edge, n);
    E = cubes / pow_rational(Rational(2), n);
    C += E;
  }
  s.book = Bookkeeping::from_json(j.at("bookkeeping"));
  if (s.book.measure_C != C || s.book.measure_E != E || s.book.cube_measure != cubes)
    throw std::runtime_error("load_stage: stored measures do not match the rebuilt layers");
  s.checks.clear();
  for (auto& c : j.at("checks")) s.checks.push_back(verify::Report::from_json(c));
  return s;
}

Mat carrier_derivative(const SmoothMap& F, const CarrierPiece& piece, const CantorAddress& a, int depth,
                       int samples, std::uint64_t seed) {
  const int n = F.dim();
  const int shared = depth + 1, length = depth + 10;
  if (a.length() < shared) throw std::invalid_argument("carrier_derivative: address shorter than depth + 1");
  std::mt19937_64 rng(seed);
  auto extend = [&]() {
    CantorAddress c = a.prefix(shared);
    auto tail = basic_map::random_address(n, length - shared, rng);
    c.digits.insert(c.digits.end(), tail.digits.begin(), tail.digits.end());
    return c;
  };
  auto place = [&](const CantorAddress& c) { return Point(piece.lo + piece.edge * geometry::cantor_point(c)); };
  const Point x = place(a.length() >= length ? a.prefix(length) : extend());
  const Point fx = F.forward(x);
  std::vector<std::vector<double>> entries(n * n);
  int attempts = 0;
  while (static_cast<int>(entries[0].size()) < samples && attempts < 20 * samples) {
    ++attempts;
    Mat dX(n, n), dF(n, n);
    for (int c = 0; c < n; ++c) {
      const Point y = place(extend());
      dX.col(c) = y - x;
      dF.col(c) = F.forward(y) - fx;
    }
    const auto sv = Eigen::JacobiSVD<Mat>(dX).singularValues();
    if (sv[n - 1] < 1e-3 * sv[0] || sv[n - 1] == 0.0) continue;
    const Mat D = dF * dX.inverse();
    for (int i = 0; i < n * n; ++i) entries[i].push_back(D(i % n, i / n));
  }
  if (static_cast<int>(entries[0].size()) < samples)
    throw ConstructionError("carrier_derivative: insufficient distinct sample addresses");
  Mat M(n, n);
  for (int i = 0; i < n * n; ++i) {
    auto& v = entries[i];
    std::nth_element(v.begin(), v.begin() + v.size() / 2, v.end());
    M(i % n, i / n) = v[v.size() / 2];
  }
  return M;
}

}  // namespace cubeflow::theorem_map
