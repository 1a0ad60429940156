#include "cubeflow/moser.hpp"

#include "cubeflow/io.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>

namespace cubeflow::moser {

namespace {
constexpr double kPi = 3.14159265358979323846;
using smoothmaps::VectorFieldGrid;

std::vector<int> grid_nodes(int n, int cells) { return std::vector<int>(n, cells + 1); }

// trapezoid weights along one axis
std::vector<double> trap_weights(int m, double h) {
  std::vector<double> w(m, h);
  w.front() = w.back() = 0.5 * h;
  return w;
}

// node index -> multi-index
void unflatten(size_t lin, const std::vector<int>& nodes, int* idx) {
  for (size_t d = 0; d < nodes.size(); ++d) {
    idx[d] = static_cast<int>(lin % nodes[d]);
    lin /= nodes[d];
  }
}

double boundary_distance(const Box& b, const Point& x) {
  double d = 1e300;
  for (int i = 0; i < b.dim(); ++i) d = std::min({d, x[i] - b.lo[i], b.hi[i] - x[i]});
  return d;
}

Box inflate(const Box& b, double r) { return {Point(b.lo.array() - r), Point(b.hi.array() + r)}; }

// Kronecker sequence in [0,1)^n
Point kronecker(int i, int n) {
  static const double g[4] = {0.7548776662466927, 0.5698402909980532, 0.6180339887498949, 0.4142135623730951};
  Point p(n);
  for (int d = 0; d < n; ++d) p[d] = std::fmod(0.5 + (i + 1) * g[d], 1.0);
  return p;
}
}  // namespace

json MoserConfig::to_json() const {
  return json{{"resolution", resolution},
              {"tau_mass", tau_mass},
              {"flow_steps", flow.steps},
              {"halving_tol", flow.halving_tol},
              {"max_steps", flow.max_steps},
              {"fd_step", fd_step}};
}

MoserConfig MoserConfig::from_json(const json& j) {
  MoserConfig c;
  c.resolution = j.value("resolution", c.resolution);
  c.tau_mass = j.value("tau_mass", c.tau_mass);
  c.flow.steps = j.value("flow_steps", c.flow.steps);
  c.flow.halving_tol = j.value("halving_tol", c.flow.halving_tol);
  c.flow.max_steps = j.value("max_steps", c.flow.max_steps);
  c.fd_step = j.value("fd_step", c.fd_step);
  return c;
}

int MoserConfig::resolution_for(int n) const {
  if (resolution > 0) return resolution;
  return n <= 2 ? 256 : 64;
}

double JacobianProblem::mass_defect() const {
  const int n = dim();
  std::vector<std::vector<double>> w(n);
  for (int d = 0; d < n; ++d) {
    const int m = f.nodes()[d];
    w[d] = trap_weights(m, (domain.hi[d] - domain.lo[d]) / (m - 1));
  }
  double acc = 0.0;
  int idx[kMaxDim];
  for (size_t s = 0; s < f.node_count(); ++s) {
    unflatten(s, f.nodes(), idx);
    double wt = 1.0;
    for (int d = 0; d < n; ++d) wt *= w[d][idx[d]];
    acc += wt * (f.data()[s] - 1.0);
  }
  return acc / domain.volume();
}

void JacobianProblem::validate() const {
  if (f.components() != 1 || f.box().dim() != dim()) throw ConstructionError("jacobian problem: f must be a scalar grid");
  for (size_t s = 0; s < f.node_count(); ++s) {
    const double v = f.data()[s];
    if (!(v > 0) || !std::isfinite(v)) throw ConstructionError("jacobian problem: f must be positive");
    const Point x = f.node_position(s);
    bool fixed = boundary_distance(domain, x) < collar - 1e-12;
    for (auto& p : protected_regions) fixed = fixed || inflate(p, collar).contains(x);
    if (fixed && std::abs(v - 1.0) > 1e-12)
      throw ConstructionError("jacobian problem: f != 1 on the collar or near a protected region");
  }
  const double defect = mass_defect();
  if (std::abs(defect) > tau_mass)
    throw ConstructionError("jacobian problem: mass mismatch " + std::to_string(defect) + " exceeds tau_mass");
}

namespace {
// normalised smooth bumps on each axis, vanishing within `collar` of the ends
std::vector<std::vector<double>> axis_bumps(const Box& domain, const std::vector<int>& nodes, double collar) {
  const int n = domain.dim();
  std::vector<std::vector<double>> phi(n);
  for (int d = 0; d < n; ++d) {
    const int m = nodes[d];
    const double h = (domain.hi[d] - domain.lo[d]) / (m - 1);
    const double mid = 0.5 * (domain.lo[d] + domain.hi[d]);
    const double half = 0.5 * (domain.hi[d] - domain.lo[d]) - collar;
    if (!(half > 2 * h)) throw ConstructionError("jacobian problem: collar leaves no interior");
    phi[d].resize(m);
    double sum = 0.0;
    const auto w = trap_weights(m, h);
    for (int i = 0; i < m; ++i) {
      phi[d][i] = smoothmaps::bump((domain.lo[d] + i * h - mid) / half);
      sum += w[i] * phi[d][i];
    }
    for (auto& v : phi[d]) v /= sum;
  }
  return phi;
}
}  // namespace

void JacobianProblem::renormalize() {
  const double defect = mass_defect();
  if (std::abs(defect) > tau_mass)
    throw ConstructionError("jacobian problem: mass mismatch " + std::to_string(defect) + " exceeds tau_mass");
  const auto phi = axis_bumps(domain, f.nodes(), collar);
  const double mass = defect * domain.volume();
  int idx[kMaxDim];
  for (size_t s = 0; s < f.node_count(); ++s) {
    unflatten(s, f.nodes(), idx);
    double b = 1.0;
    for (int d = 0; d < dim(); ++d) b *= phi[d][idx[d]];
    f.data()[s] -= mass * b;
  }
}

JacobianProblem JacobianProblem::from_function(const Box& domain, int cells, double collar,
                                               const std::function<double(const Point&)>& fn) {
  JacobianProblem p;
  p.domain = domain;
  p.collar = collar;
  p.f = VectorFieldGrid(domain, grid_nodes(domain.dim(), cells), 1);
  for (size_t s = 0; s < p.f.node_count(); ++s) p.f.data()[s] = fn(p.f.node_position(s));
  return p;
}

json JacobianProblem::to_json(const std::string& grid_path) const {
  json j;
  j["domain"] = domain.to_json();
  j["collar"] = collar;
  j["tau_mass"] = tau_mass;
  j["protected"] = json::array();
  for (auto& b : protected_regions) j["protected"].push_back(b.to_json());
  j["grid_file"] = grid_path;
  j["nodes"] = f.nodes();
  return j;
}

void JacobianProblem::save(const std::string& json_path, const std::string& grid_path) const {
  io::GridFile g;
  for (auto it = f.nodes().rbegin(); it != f.nodes().rend(); ++it) g.dims.push_back(static_cast<std::uint32_t>(*it));
  g.values = f.data();
  io::write_grid(grid_path, g);
  io::write_json(json_path, to_json(std::filesystem::path(grid_path).filename().string()));
}

namespace {
Box box_from_json(const json& j) {
  Box b;
  const auto lo = j.at("lo").get<std::vector<double>>(), hi = j.at("hi").get<std::vector<double>>();
  b.lo = Point(static_cast<int>(lo.size()));
  b.hi = Point(static_cast<int>(hi.size()));
  for (size_t i = 0; i < lo.size(); ++i) {
    b.lo[i] = lo[i];
    b.hi[i] = hi[i];
  }
  return b;
}
}  // namespace

JacobianProblem JacobianProblem::load(const std::string& json_path) {
  const json j = io::read_json(json_path);
  JacobianProblem p;
  p.domain = box_from_json(j.at("domain"));
  p.collar = j.value("collar", 0.05);
  p.tau_mass = j.value("tau_mass", 1e-6);
  if (j.contains("protected"))
    for (auto& b : j["protected"]) p.protected_regions.push_back(box_from_json(b));
  std::filesystem::path gp = j.at("grid_file").get<std::string>();
  if (gp.is_relative()) gp = std::filesystem::path(json_path).parent_path() / gp;
  io::GridFile g = io::read_grid(gp.string());
  std::vector<int> nodes(g.dims.rbegin(), g.dims.rend());
  if (static_cast<int>(nodes.size()) != p.domain.dim()) throw ConstructionError("jacobian problem: grid rank != dimension");
  p.f = VectorFieldGrid(p.domain, nodes, 1);
  p.f.data() = g.values;
  return p;
}

double benchmark_density(const Point& x) {
  constexpr double rho = 0.15;
  const double b1 = smoothmaps::bump((x - make_point({0.35, 0.5})).norm() / rho);
  const double b2 = smoothmaps::bump((x - make_point({0.65, 0.5})).norm() / rho);
  return 1.0 + 0.3 * (b1 - b2);
}

JacobianProblem benchmark_problem(int cells) {
  return JacobianProblem::from_function(Box::unit(2), cells, 0.1, benchmark_density);
}

json SolveReport::to_json() const {
  return json{{"cells", cells}, {"mass_defect", mass_defect}, {"residual", residual}, {"flow_steps", flow_steps}, {"seconds", seconds}};
}

namespace {

// div u = g on the grid by iterated 1-D integration of the marginals of g.
void box_chart_solve(const Box& domain, const std::vector<int>& nodes, const std::vector<double>& g, double collar,
                     VectorFieldGrid& u) {
  const int n = domain.dim();
  const auto phi = axis_bumps(domain, nodes, collar);
  std::vector<double> h(n);
  std::vector<std::vector<double>> w(n);
  std::vector<size_t> stride(n + 1, 1);
  for (int d = 0; d < n; ++d) {
    h[d] = (domain.hi[d] - domain.lo[d]) / (nodes[d] - 1);
    w[d] = trap_weights(nodes[d], h[d]);
    stride[d + 1] = stride[d] * nodes[d];
  }
  // M[k] lives on the first k axes
  std::vector<std::vector<double>> M(n + 1);
  M[n] = g;
  for (int k = n; k >= 1; --k) {
    M[k - 1].assign(stride[k - 1], 0.0);
    for (size_t s = 0; s < stride[k]; ++s) M[k - 1][s % stride[k - 1]] += w[k - 1][s / stride[k - 1]] * M[k][s];
  }
  M[0][0] = 0.0;  // renormalised
  for (int k = 1; k <= n; ++k) {
    const int ax = k - 1;
    const int m = nodes[ax];
    std::vector<double> C(stride[k], 0.0);
    for (size_t pre = 0; pre < stride[k - 1]; ++pre) {
      double acc = 0.0, prev = 0.0;
      for (int i = 0; i < m; ++i) {
        const size_t s = pre + i * stride[k - 1];
        const double v = M[k][s] - M[k - 1][pre] * phi[ax][i];
        if (i > 0) acc += 0.5 * h[ax] * (prev + v);
        C[s] = acc;
        prev = v;
      }
    }
    int idx[kMaxDim];
    for (size_t s = 0; s < u.node_count(); ++s) {
      unflatten(s, nodes, idx);
      double t = C[s % stride[k]];
      for (int j = k; j < n && t != 0.0; ++j) t *= phi[j][idx[j]];
      u.at_linear(s, ax) = t;
    }
  }
}

// Replace u by a field vanishing on the protected box P (n = 2): u - curl(chi psi) with psi a stream
// function of u on the collar-sized frame around P where g = 0.
void clear_protected_2d(const Box& P, double collar, VectorFieldGrid& u) {
  const auto& nodes = u.nodes();
  const Box& B = u.box();
  const double h0 = (B.hi[0] - B.lo[0]) / (nodes[0] - 1), h1 = (B.hi[1] - B.lo[1]) / (nodes[1] - 1);
  const Box N = inflate(P, collar);
  auto lo_i = [&](int d, double v) {
    const double hh = d ? h1 : h0;
    return std::max(0, static_cast<int>(std::ceil((v - B.lo[d]) / hh - 1e-9)));
  };
  auto hi_i = [&](int d, double v) {
    const double hh = d ? h1 : h0;
    return std::min(nodes[d] - 1, static_cast<int>(std::floor((v - B.lo[d]) / hh + 1e-9)));
  };
  const int i0 = lo_i(0, N.lo[0]), i1 = hi_i(0, N.hi[0]), j0 = lo_i(1, N.lo[1]), j1 = hi_i(1, N.hi[1]);
  if (i1 - i0 < 4 || j1 - j0 < 4) throw ConstructionError("jacobian problem: protected frame under-resolved");
  const int W = i1 - i0 + 1, H = j1 - j0 + 1;
  std::vector<double> psi(static_cast<size_t>(W) * H, 0.0);
  auto U = [&](int i, int j, int c) { return u.at({i, j}, c); };
  // psi(i0, j) = int u_1 dx_2 ; psi(i, j) = psi(i0, j) - int u_2 dx_1
  for (int j = j0 + 1; j <= j1; ++j) psi[(j - j0) * W] = psi[(j - 1 - j0) * W] + 0.5 * h1 * (U(i0, j - 1, 0) + U(i0, j, 0));
  for (int j = j0; j <= j1; ++j)
    for (int i = i0 + 1; i <= i1; ++i)
      psi[(j - j0) * W + (i - i0)] = psi[(j - j0) * W + (i - 1 - i0)] - 0.5 * h0 * (U(i - 1, j, 1) + U(i, j, 1));
  const auto& step = smoothmaps::SmoothStep::instance();
  // the interpolation stencil reaches two nodes, so chi = 1 on P grown by that much
  const double reach = 2.0 * std::max(h0, h1) * (1 + 1e-9);
  const double w = collar - reach;
  if (w < 4.0 * std::max(h0, h1)) throw ConstructionError("jacobian problem: protected frame under-resolved");
  auto chi1 = [&](double x, double lo, double hi, double& dchi) {
    // 1 on [lo, hi], 0 outside [lo - w, hi + w]
    const double a = (x - (lo - w)) / w, b = ((hi + w) - x) / w;
    const double sa = step(a), sb = step(b);
    dchi = step.derivative(a) / w * sb - sa * step.derivative(b) / w;
    return sa * sb;
  };
  for (int j = j0; j <= j1; ++j)
    for (int i = i0; i <= i1; ++i) {
      const double x = B.lo[0] + i * h0, y = B.lo[1] + j * h1;
      double dx, dy;
      const double cx = chi1(x, P.lo[0] - reach, P.hi[0] + reach, dx), cy = chi1(y, P.lo[1] - reach, P.hi[1] + reach, dy);
      const double chi = cx * cy;
      const double gx = dx * cy, gy = cx * dy;
      const double ps = psi[(j - j0) * W + (i - i0)];
      // curl(chi psi) = chi u + psi (d_2 chi, -d_1 chi)
      u.at({i, j}, 0) = (1 - chi) * U(i, j, 0) - ps * gy;
      u.at({i, j}, 1) = (1 - chi) * U(i, j, 1) + ps * gx;
    }
}

}  // namespace

MapPtr prescribe_jacobian(const JacobianProblem& problem, double tol, const MoserConfig& cfg, SolveReport* report) {
  const auto t0 = std::chrono::steady_clock::now();
  JacobianProblem p = problem;
  p.tau_mass = std::max(p.tau_mass, 0.0);
  SolveReport rep;
  rep.mass_defect = p.mass_defect();
  p.renormalize();
  p.validate();
  const int n = p.dim();
  rep.cells = p.f.nodes()[0] - 1;
  std::vector<double> g = p.f.data();
  bool trivial = true;
  for (auto& v : g) {
    v -= 1.0;
    trivial = trivial && v == 0.0;
  }
  if (trivial) {
    if (report) *report = rep;
    return std::make_shared<smoothmaps::IdentityMap>(n);
  }
  auto u = std::make_shared<VectorFieldGrid>(p.domain, p.f.nodes(), n);
  box_chart_solve(p.domain, p.f.nodes(), g, p.collar, *u);
  for (auto& P : p.protected_regions) {
    double umax = 0.0;
    for (size_t s = 0; s < u->node_count(); ++s)
      if (inflate(P, p.collar).contains(u->node_position(s)))
        for (int c = 0; c < n; ++c) umax = std::max(umax, std::abs(u->at_linear(s, c)));
    if (umax == 0.0) continue;
    if (n != 2) throw ConstructionError("prescribe_jacobian: protected regions in the solver footprint need n = 2");
    clear_protected_2d(P, p.collar, *u);
  }
  auto gg = std::make_shared<VectorFieldGrid>(p.domain, p.f.nodes(), 1);
  gg->data() = g;
  auto field = [u, gg](double t, const Point& x) -> Point {
    const double rho = 1.0 + (1.0 - t) * gg->eval(x)[0];
    return u->eval(x) / rho;
  };
  auto flow = std::make_shared<smoothmaps::FlowMap>(n, field, p.domain, cfg.flow, "prescribe_jacobian");
  if (cfg.flow.steps <= 0) {
    std::vector<Point> probes;
    const size_t stride = std::max<size_t>(1, u->node_count() / 97);
    for (size_t s = 0; s < u->node_count(); s += stride)
      if (u->eval(u->node_position(s)).norm() > 0) probes.push_back(u->node_position(s));
    flow->calibrate(probes);
  }
  rep.flow_steps = flow->steps();
  rep.residual = jacobian_residual(*flow, problem, cfg.fd_step);
  rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (report) *report = rep;
  if (tol > 0 && rep.residual > tol)
    throw NumericError("prescribe_jacobian: residual " + std::to_string(rep.residual) + " exceeds tol " + std::to_string(tol));
  return flow;
}

double jacobian_residual(const SmoothMap& psi, const JacobianProblem& p, double fd_step) {
  double r = 0.0;
  auto F = [&](const Point& z) { return psi.forward(z); };
  for (size_t s = 0; s < p.f.node_count(); ++s) {
    const Point x = p.f.node_position(s);
    const double J = smoothmaps::numeric_jacobian(F, x, fd_step).determinant();
    r = std::max(r, std::abs(J - p.f.data()[s]));
  }
  return r;
}

TwistCorrection::TwistCorrection(std::shared_ptr<const PlaneTwist> twist, smoothmaps::FlowParams params)
    : twist_(std::move(twist)), params_(params) {
  if (twist_->spec().area_angle) throw ConstructionError("twist correction: twist is already measure preserving");
  table_ = PNormTable::get(twist_->spec().p);
  // a half-turn, or any turn of a round shape, is rigid on the plateau
  const auto& sp = twist_->spec();
  rigid_plateau_ = std::abs(std::abs(sp.angle) - kPi) < 1e-15 || (sp.p == 2.0 && sp.ha == sp.hb);
  steps_ = params_.steps > 0 ? params_.steps : params_.min_steps;
  if (params_.steps <= 0) {
    int s = params_.min_steps;
    const double A = twist_->spec().angle;
    while (true) {
      double diff = 0.0;
      for (double fr : {0.2, 0.5, 0.8, 0.99})
        for (int k = 0; k < 24; ++k) {
          const double phi = 2 * kPi * (k + 0.37) / 24;
          diff = std::max(diff, std::abs(integrate(phi, fr * A, 0, 1, s) - integrate(phi, fr * A, 0, 1, 2 * s)));
        }
      if (diff < params_.halving_tol) break;
      if (2 * s > params_.max_steps) throw NumericError("twist correction: step halving did not converge");
      s *= 2;
    }
    steps_ = 2 * s;
  }
}

double TwistCorrection::ell2(double phi) const {
  const double r = table_->norm(std::cos(phi), std::sin(phi));
  return 1.0 / (r * r);
}

double TwistCorrection::sector(double phi) const {
  const double turns = std::floor(phi / (2 * kPi));
  const double p0 = phi - 2 * kPi * turns;
  const double X = std::cos(p0), Y = std::sin(p0);
  const double ax = std::abs(X), ay = std::abs(Y);
  int o;
  if (X > 0 && Y >= 0) o = ay < ax ? 0 : 1;
  else if (X <= 0 && Y > 0) o = ax <= ay ? 2 : 3;
  else if (X < 0 && Y <= 0) o = ay < ax ? 4 : 5;
  else o = ax <= ay ? 6 : 7;
  const double u = std::min(ax, ay) / std::max(ax, ay);
  const double fr = table_->G(u) / table_->G1();
  const double theta = o + ((o & 1) ? 1.0 - fr : fr);
  return table_->G1() * (8.0 * turns + theta);
}

double TwistCorrection::velocity(double t, double phi, double theta) const {
  const double num = sector(phi - theta) - sector(-theta) - sector(phi);
  return num / (t * ell2(phi) + (1.0 - t) * ell2(phi - theta));
}

double TwistCorrection::integrate(double phi, double theta, double t0, double t1, int steps) const {
  const double dt = (t1 - t0) / steps;
  for (int s = 0; s < steps; ++s) {
    const double t = t0 + s * dt;
    const double k1 = velocity(t, phi, theta);
    const double k2 = velocity(t + 0.5 * dt, phi + 0.5 * dt * k1, theta);
    const double k3 = velocity(t + 0.5 * dt, phi + 0.5 * dt * k2, theta);
    const double k4 = velocity(t + dt, phi + dt * k3, theta);
    phi += dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4);
  }
  if (!std::isfinite(phi)) throw NumericError("twist correction: non-finite trajectory");
  return phi;
}

Point TwistCorrection::run(const Point& x, bool fwd) const {
  const auto& sp = twist_->spec();
  const double amt = twist_->amount(x);
  if (amt == 0.0 || (amt == 1.0 && rigid_plateau_)) return x;
  const double X = (x[sp.axis_a] - sp.ca) / sp.ha, Y = (x[sp.axis_b] - sp.cb) / sp.hb;
  const double s = table_->norm(X, Y);
  if (s == 0.0) return x;
  const double theta = sp.angle * amt;
  const double phi0 = std::atan2(Y, X);
  const double phi = fwd ? integrate(phi0, theta, 0.0, 1.0, steps_) : integrate(phi0, theta, 1.0, 0.0, steps_);
  const double c = std::cos(phi), sn = std::sin(phi);
  const double r = s / table_->norm(c, sn);
  Point y = x;
  y[sp.axis_a] = sp.ca + sp.ha * r * c;
  y[sp.axis_b] = sp.cb + sp.hb * r * sn;
  return y;
}

json TwistCorrection::describe() const {
  json j = SmoothMap::describe();
  j["twist"] = twist_->spec().to_json();
  j["steps"] = steps_;
  return j;
}

json AnnulusProblem::to_json() const {
  return json{{"center", std::vector<double>(center.data(), center.data() + center.size())},
              {"A", std::vector<double>(A.data(), A.data() + A.size())},
              {"s1", s1},
              {"s2", s2},
              {"radial_cells", radial_cells},
              {"angular_cells", angular_cells}};
}

AnnulusFlow::AnnulusFlow(const AnnulusProblem& p, smoothmaps::FlowParams params) : p_(p), params_(params) {
  if (p_.center.size() != 2 || p_.A.rows() != 2 || p_.A.cols() != 2) throw ConstructionError("annulus problem: n must be 2");
  if (!(p_.s1 > 0 && p_.s2 > p_.s1)) throw ConstructionError("annulus problem: need 0 < s1 < s2");
  const double detA = std::abs(p_.A.determinant());
  if (!(detA > 0)) throw ConstructionError("annulus problem: singular chart matrix");
  Ainv_ = p_.A.inverse();
  const int Ns = p_.radial_cells + 1, Na = p_.angular_cells, pad = 3;
  const double hs = (p_.s2 - p_.s1) / p_.radial_cells;
  hphi_ = 2 * kPi / Na;
  Box box{make_point({p_.s1, -pad * hphi_}), make_point({p_.s2, (Na + pad) * hphi_})};
  U_ = VectorFieldGrid(box, {Ns, Na + 2 * pad + 1}, 3);
  std::vector<double> h(static_cast<size_t>(Ns) * Na), H(Ns, 0.0), beta(Ns);
  for (int a = 0; a < Ns; ++a) {
    const double s = p_.s1 + a * hs;
    for (int b = 0; b < Na; ++b) {
      const double phi = b * hphi_;
      const Point x = p_.center + p_.A * (s * make_point({std::cos(phi), std::sin(phi)}));
      const double g = p_.f(x) - 1.0;
      if (!std::isfinite(g) || g <= -1.0) throw ConstructionError("annulus problem: f must be positive");
      h[a * Na + b] = detA * s * g;
      H[a] += h[a * Na + b] / Na;
    }
  }
  // radial mass, removed with a bump in s
  const auto ws = trap_weights(Ns, hs);
  double mass = 0.0, bsum = 0.0;
  for (int a = 0; a < Ns; ++a) {
    mass += ws[a] * H[a];
    beta[a] = smoothmaps::bump((p_.s1 + a * hs - 0.5 * (p_.s1 + p_.s2)) / (0.5 * (p_.s2 - p_.s1)));
    bsum += ws[a] * beta[a];
  }
  mass_defect_ = 2 * kPi * mass / (kPi * (p_.s2 * p_.s2 - p_.s1 * p_.s1) * detA);
  for (int a = 0; a < Ns; ++a) beta[a] *= mass / bsum;
  double radial = 0.0, prev = 0.0;
  for (int a = 0; a < Ns; ++a) {
    const double s = p_.s1 + a * hs, w = detA * s;
    const double v = H[a] - beta[a];
    if (a > 0) radial += 0.5 * hs * (prev + v);
    prev = v;
    double ang = 0.0, pv = 0.0;
    std::vector<double> Uphi(Na + 1), G(Na + 1);
    for (int b = 0; b <= Na; ++b) {
      const double hb = h[a * Na + (b % Na)];
      const double vv = hb - H[a];
      if (b > 0) ang += 0.5 * hphi_ * (pv + vv);
      pv = vv;
      Uphi[b] = ang / w;
      G[b] = (hb - beta[a]) / w;
    }
    for (int i = 0; i < Na + 2 * pad + 1; ++i) {
      const int b = ((i - pad) % Na + Na) % Na;
      U_.at({a, i}, 0) = radial / w;
      U_.at({a, i}, 1) = Uphi[b];
      U_.at({a, i}, 2) = G[b];
    }
  }
  steps_ = params_.steps > 0 ? params_.steps : params_.min_steps;
  if (params_.steps <= 0) {
    int st = params_.min_steps;
    while (true) {
      double diff = 0.0;
      for (int a = 1; a < 8; ++a)
        for (int b = 0; b < 16; ++b) {
          Eigen::Vector2d q(p_.s1 + (p_.s2 - p_.s1) * a / 8.0, 2 * kPi * (b + 0.3) / 16);
          const Eigen::Vector2d d = integrate(q, 0, 1, st) - integrate(q, 0, 1, 2 * st);
          diff = std::max(diff, std::abs(d[0]) + q[0] * std::abs(d[1]));
        }
      if (diff < params_.halving_tol) break;
      if (2 * st > params_.max_steps) throw NumericError("annulus flow: step halving did not converge");
      st *= 2;
    }
    steps_ = 2 * st;
  }
}

Eigen::Vector2d AnnulusFlow::velocity(double t, double s, double phi) const {
  if (s <= p_.s1 || s >= p_.s2) return Eigen::Vector2d::Zero();
  phi = std::fmod(phi, 2 * kPi);
  if (phi < 0) phi += 2 * kPi;
  const Point u = U_.eval(make_point({s, phi}));
  const double rho = 1.0 + (1.0 - t) * u[2];
  return Eigen::Vector2d(u[0] / rho, u[1] / rho);
}

Eigen::Vector2d AnnulusFlow::integrate(Eigen::Vector2d q, double t0, double t1, int steps) const {
  const double dt = (t1 - t0) / steps;
  for (int i = 0; i < steps; ++i) {
    const double t = t0 + i * dt;
    const Eigen::Vector2d k1 = velocity(t, q[0], q[1]);
    const Eigen::Vector2d k2 = velocity(t + 0.5 * dt, q[0] + 0.5 * dt * k1[0], q[1] + 0.5 * dt * k1[1]);
    const Eigen::Vector2d k3 = velocity(t + 0.5 * dt, q[0] + 0.5 * dt * k2[0], q[1] + 0.5 * dt * k2[1]);
    const Eigen::Vector2d k4 = velocity(t + dt, q[0] + dt * k3[0], q[1] + dt * k3[1]);
    q += dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4);
  }
  if (!q.allFinite()) throw NumericError("annulus flow: non-finite trajectory");
  return q;
}

Point AnnulusFlow::run(const Point& x, double t0, double t1) const {
  const Point z = Ainv_ * (x - p_.center);
  const double s = z.norm();
  if (s <= p_.s1 || s >= p_.s2) return x;
  const Eigen::Vector2d q = integrate(Eigen::Vector2d(s, std::atan2(z[1], z[0])), t0, t1, steps_);
  return p_.center + p_.A * (q[0] * make_point({std::cos(q[1]), std::sin(q[1])}));
}

Box AnnulusFlow::support() const {
  Box b{p_.center, p_.center};
  for (int i = 0; i < 2; ++i) {
    const double r = p_.s2 * p_.A.row(i).norm();
    b.lo[i] -= r;
    b.hi[i] += r;
  }
  return b;
}

json AnnulusFlow::describe() const {
  json j = SmoothMap::describe();
  j["problem"] = p_.to_json();
  j["mass_defect"] = mass_defect_;
  j["steps"] = steps_;
  return j;
}

namespace {

std::shared_ptr<const PlaneTwist> copy_twist(const PlaneTwist& t) { return std::make_shared<PlaneTwist>(t.spec()); }

class CorrectedExchange final : public SmoothMap {
 public:
  CorrectedExchange(std::shared_ptr<const rearrange::ExchangeMap> raw, smoothmaps::FlowParams fp) : raw_(std::move(raw)) {
    auto c = copy_twist(raw_->center_twist());
    auto t = copy_twist(raw_->layer_twist(1));
    auto b = copy_twist(raw_->layer_twist(0));
    chain_ = {c, std::make_shared<TwistCorrection>(c, fp), t, std::make_shared<TwistCorrection>(t, fp), b,
              std::make_shared<TwistCorrection>(b, fp)};
  }
  int dim() const override { return raw_->dim(); }
  Point forward(const Point& x) const override {
    if (raw_->cube_neighbourhood(x)) return raw_->forward(x);
    Point y = x;
    for (auto& m : chain_) y = m->forward(y);
    return y;
  }
  Point inverse(const Point& y) const override {
    if (raw_->cube_neighbourhood(y)) return raw_->inverse(y);
    Point x = y;
    for (auto it = chain_.rbegin(); it != chain_.rend(); ++it) x = (*it)->inverse(x);
    return x;
  }
  Box support() const override { return raw_->support(); }
  std::string provenance() const override { return "mp_exchange(moser)"; }
  json describe() const override {
    json j = SmoothMap::describe();
    j["raw"] = raw_->describe();
    j["correction_steps"] = std::static_pointer_cast<const TwistCorrection>(chain_[1])->steps();
    return j;
  }

 private:
  std::shared_ptr<const rearrange::ExchangeMap> raw_;
  std::vector<MapPtr> chain_;
};

}  // namespace

double sampled_jacobian_defect(const SmoothMap& m, int count, double fd_step) {
  const int n = m.dim();
  Box sb = m.support();
  for (int d = 0; d < n; ++d) {
    if (!std::isfinite(sb.lo[d]) || sb.lo[d] < -1e6) sb.lo[d] = 0.0;
    if (!std::isfinite(sb.hi[d]) || sb.hi[d] > 1e6) sb.hi[d] = 1.0;
  }
  double worst = 0.0;
  auto F = [&](const Point& z) { return m.forward(z); };
  for (int i = 0; i < count; ++i) {
    Point x = sb.lo + kronecker(i, n).cwiseProduct(sb.hi - sb.lo);
    worst = std::max(worst, std::abs(smoothmaps::numeric_jacobian(F, x, fd_step).determinant() - 1.0));
  }
  return worst;
}

MapPtr mp_correct(MapPtr psi, double tol, const MoserConfig& cfg) {
  smoothmaps::FlowParams fp = cfg.flow;
  if (fp.halving_tol <= 0) fp.halving_tol = 1e-10;
  if (auto ex = std::dynamic_pointer_cast<const rearrange::ExchangeMap>(psi)) {
    if (ex->measure_preserving()) return psi;
    return std::make_shared<CorrectedExchange>(ex, fp);
  }
  if (auto tw = std::dynamic_pointer_cast<const PlaneTwist>(psi)) {
    if (tw->spec().area_angle) return psi;
    return smoothmaps::compose({psi, std::make_shared<TwistCorrection>(tw, fp)});
  }
  if (std::dynamic_pointer_cast<const smoothmaps::IdentityMap>(psi) || std::dynamic_pointer_cast<const CorrectedExchange>(psi))
    return psi;
  if (auto af = std::dynamic_pointer_cast<const smoothmaps::AffineMap>(psi)) {
    if (std::abs(std::abs(af->matrix().determinant()) - 1.0) <= 1e-12) return psi;
    throw ConstructionError("mp_correct: affine map does not preserve volume");
  }
  if (auto cm = std::dynamic_pointer_cast<const smoothmaps::CompositeMap>(psi)) {
    std::vector<MapPtr> parts;
    for (auto& m : cm->parts()) parts.push_back(mp_correct(m, tol, cfg));
    return smoothmaps::compose(parts);
  }
  const int n = psi->dim();
  // already measure preserving within tolerance?
  const double defect = sampled_jacobian_defect(*psi, 1000, 1e-6);
  if (defect <= tol) return psi;
  if (n != 2) throw ConstructionError("mp_correct: generic correction implemented for n = 2 only");
  const Box B = psi->support();
  if (!std::isfinite(B.volume()) || B.volume() > 1e6) throw ConstructionError("mp_correct: map has unbounded support");
  const int cells = cfg.resolution_for(n);
  JacobianProblem p;
  p.domain = B;
  p.tau_mass = cfg.tau_mass;
  p.f = VectorFieldGrid(B, grid_nodes(n, cells), 1);
  auto Finv = [&](const Point& z) { return psi->inverse(z); };
  double collar = 1e300;
  for (size_t s = 0; s < p.f.node_count(); ++s) {
    const Point y = p.f.node_position(s);
    const double J = smoothmaps::numeric_jacobian(Finv, y, cfg.fd_step).determinant();
    if (!(J > 0)) throw ConstructionError("mp_correct: Jacobian of the inverse vanishes or changes sign");
    p.f.data()[s] = std::abs(J - 1.0) < 1e-9 ? 1.0 : J;
    if (p.f.data()[s] != 1.0) collar = std::min(collar, boundary_distance(B, y));
  }
  p.collar = 0.9 * collar;
  auto fix = prescribe_jacobian(p, tol, cfg);
  return smoothmaps::compose({psi, fix});
}

ExchangeMethod parse_exchange_method(const std::string& s) {
  if (s == "action_angle" || s == "exact") return ExchangeMethod::ActionAngle;
  if (s == "moser") return ExchangeMethod::Moser;
  throw std::invalid_argument("unknown exchange method: " + s);
}

std::string to_string(ExchangeMethod m) { return m == ExchangeMethod::ActionAngle ? "action_angle" : "moser"; }

MapPtr mp_exchange(int n, double ratio, ExchangeMethod method) {
  rearrange::ExchangeSpec s;
  s.n = n;
  s.ratio = ratio;
  if (method == ExchangeMethod::ActionAngle) return rearrange::mp_exchange_exact(s);
  return mp_correct(rearrange::exchange_diffeo(s), 1e-2);
}

}  // namespace cubeflow::moser
