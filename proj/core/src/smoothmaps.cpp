#include "cubeflow/smoothmaps.hpp"

#include <boost/math/quadrature/gauss.hpp>

#include <cmath>
#include <limits>

namespace cubeflow {

Box Box::everywhere(int n) {
  const double inf = std::numeric_limits<double>::infinity();
  return {Point::Constant(n, -inf), Point::Constant(n, inf)};
}

bool Box::contains(const Point& x, double pad) const {
  for (int i = 0; i < dim(); ++i)
    if (x[i] < lo[i] - pad || x[i] > hi[i] + pad) return false;
  return true;
}

double Box::volume() const {
  double v = 1.0;
  for (int i = 0; i < dim(); ++i) v *= hi[i] - lo[i];
  return v;
}

json Box::to_json() const {
  json lo_j = json::array(), hi_j = json::array();
  for (int i = 0; i < dim(); ++i) {
    lo_j.push_back(std::isfinite(lo[i]) ? json(lo[i]) : json("-inf"));
    hi_j.push_back(std::isfinite(hi[i]) ? json(hi[i]) : json("inf"));
  }
  return json{{"lo", lo_j}, {"hi", hi_j}};
}

json Tolerances::to_json() const {
  return json{{"tau_inv", tau_inv}, {"tau_inv_flow", tau_inv_flow}, {"tau_inj", tau_inj}, {"interp_order", interp_order}};
}

Tolerances Tolerances::from_json(const json& j) {
  Tolerances t;
  t.tau_inv = j.value("tau_inv", t.tau_inv);
  t.tau_inv_flow = j.value("tau_inv_flow", t.tau_inv_flow);
  t.tau_inj = j.value("tau_inj", t.tau_inj);
  t.interp_order = j.value("interp_order", t.interp_order);
  if (t.tau_inv <= 0 || t.tau_inv_flow <= 0 || t.tau_inj <= 0) throw std::invalid_argument("tolerances must be positive");
  return t;
}

json SmoothMap::describe() const {
  return json{{"provenance", provenance()}, {"dim", dim()}, {"support", support().to_json()}};
}

namespace smoothmaps {

namespace {
constexpr int kStepTable = 4096;

double raw_density(double s) {
  // exp(-a/(1-x^2)) on x = 2s-1
  if (s <= 0.0 || s >= 1.0) return 0.0;
  const double x = 2.0 * s - 1.0;
  return std::exp(-kBumpSharpness / (1.0 - x * x));
}
}  // namespace

SmoothStep::SmoothStep() {
  h_ = 1.0 / kStepTable;
  v_.assign(kStepTable + 1, 0.0);
  d_.assign(kStepTable + 1, 0.0);
  using GL = boost::math::quadrature::gauss<double, 10>;
  double acc = 0.0;
  for (int i = 0; i < kStepTable; ++i) {
    const double a = i * h_, b = (i + 1) * h_;
    acc += GL::integrate(raw_density, a, b);
    v_[i + 1] = acc;
  }
  z_ = acc;
  for (int i = 0; i <= kStepTable; ++i) {
    v_[i] /= z_;
    d_[i] = raw_density(i * h_) / z_;
  }
  v_[kStepTable] = 1.0;
}

const SmoothStep& SmoothStep::instance() {
  static const SmoothStep s;
  return s;
}

double SmoothStep::operator()(double s) const {
  if (s <= 0.0) return 0.0;
  if (s >= 1.0) return 1.0;
  const double u = s / h_;
  int i = static_cast<int>(u);
  if (i >= kStepTable) i = kStepTable - 1;
  const double t = u - i;
  const double t2 = t * t, t3 = t2 * t;
  const double h00 = 2 * t3 - 3 * t2 + 1, h10 = t3 - 2 * t2 + t, h01 = -2 * t3 + 3 * t2, h11 = t3 - t2;
  return h00 * v_[i] + h10 * h_ * d_[i] + h01 * v_[i + 1] + h11 * h_ * d_[i + 1];
}

double SmoothStep::derivative(double s) const { return raw_density(s) / z_; }

double SmoothStep::second_derivative(double s) const {
  if (s <= 0.0 || s >= 1.0) return 0.0;
  const double x = 2.0 * s - 1.0;
  const double q = 1.0 - x * x;
  return derivative(s) * (-4.0 * kBumpSharpness * x / (q * q));
}

double Cutoff::operator()(double t) const { return SmoothStep::instance()((t - inner) / (outer - inner)); }
double Cutoff::derivative(double t) const {
  return SmoothStep::instance().derivative((t - inner) / (outer - inner)) / (outer - inner);
}
double Cutoff::second_derivative(double t) const {
  const double w = outer - inner;
  return SmoothStep::instance().second_derivative((t - inner) / w) / (w * w);
}

Cutoff cutoff_phi(int samples) {
  if (samples < 10000) throw std::invalid_argument("cutoff_phi: need at least 10^4 samples");
  Cutoff c;
  double sup = 0.0;
  for (int i = 0; i < samples; ++i) {
    const double t = c.inner + (c.outer - c.inner) * i / (samples - 1);
    sup = std::max(sup, std::abs(c.derivative(t)));
  }
  c.sup_derivative = sup;
  c.samples = samples;
  if (!(sup < 9.0)) throw ConstructionError("cutoff profile violates sup|phi'| < 9");
  return c;
}

double bump(double s) {
  const double q = 1.0 - s * s;
  if (q <= 0.0) return 0.0;
  return std::exp(1.0 - 1.0 / q);
}

Box IdentityMap::support() const { return {Point::Zero(n_), Point::Zero(n_)}; }

AffineMap::AffineMap(Mat A, Point b, std::string tag) : A_(std::move(A)), b_(std::move(b)), tag_(std::move(tag)) {
  if (std::abs(A_.determinant()) < 1e-300) throw std::invalid_argument("affine map: singular matrix");
  Ainv_ = A_.inverse();
}

Point AffineMap::inverse(const Point& y) const { return Ainv_ * (y - b_); }

MapPtr translation(const Point& v) {
  const int n = static_cast<int>(v.size());
  return std::make_shared<AffineMap>(Mat::Identity(n, n), v, "translation");
}

MapPtr reflection(int n) {
  Mat A = Mat::Identity(n, n);
  A(n - 1, n - 1) = -1.0;
  Point b = Point::Zero(n);
  b[n - 1] = 1.0;
  return std::make_shared<AffineMap>(A, b, "reflection");
}

LambdaMap::LambdaMap(int n, Fn fwd, Fn inv, Box support, std::string tag)
    : n_(n), fwd_(std::move(fwd)), inv_(std::move(inv)), support_(std::move(support)), tag_(std::move(tag)) {}

CompositeMap::CompositeMap(std::vector<MapPtr> maps) : maps_(std::move(maps)) {
  if (maps_.empty()) throw std::invalid_argument("compose: empty list");
  for (auto& m : maps_)
    if (m->dim() != maps_.front()->dim()) throw std::invalid_argument("compose: domain mismatch");
}

int CompositeMap::dim() const { return maps_.front()->dim(); }

Point CompositeMap::forward(const Point& x) const {
  Point y = x;
  for (auto& m : maps_) y = m->forward(y);
  return y;
}

Point CompositeMap::inverse(const Point& y) const {
  Point x = y;
  for (auto it = maps_.rbegin(); it != maps_.rend(); ++it) x = (*it)->inverse(x);
  return x;
}

Box CompositeMap::support() const {
  Box b = maps_.front()->support();
  for (auto& m : maps_) {
    Box s = m->support();
    b.lo = b.lo.cwiseMin(s.lo);
    b.hi = b.hi.cwiseMax(s.hi);
  }
  return b;
}

json CompositeMap::describe() const {
  json j = SmoothMap::describe();
  j["parts"] = json::array();
  for (auto& m : maps_) j["parts"].push_back(m->describe());
  return j;
}

MapPtr compose(std::vector<MapPtr> maps) { return std::make_shared<CompositeMap>(std::move(maps)); }

ConjugatedMap::ConjugatedMap(MapPtr inner, Point lo, double edge) : inner_(std::move(inner)), lo_(std::move(lo)), e_(edge) {
  if (!(edge > 0)) throw std::invalid_argument("conjugate_into_cube: degenerate target");
}

Point ConjugatedMap::forward(const Point& x) const {
  Point z = (x - lo_) / e_;
  for (int i = 0; i < z.size(); ++i)
    if (z[i] < 0.0 || z[i] > 1.0) return x;
  return lo_ + e_ * inner_->forward(z);
}

Point ConjugatedMap::inverse(const Point& y) const {
  Point z = (y - lo_) / e_;
  for (int i = 0; i < z.size(); ++i)
    if (z[i] < 0.0 || z[i] > 1.0) return y;
  return lo_ + e_ * inner_->inverse(z);
}

Box ConjugatedMap::support() const { return {lo_, Point(lo_.array() + e_)}; }

MapPtr conjugate_into_cube(MapPtr map, const AxisCube& target) {
  if (target.half_edge <= 0) throw std::invalid_argument("conjugate_into_cube: degenerate target");
  const double e = 2.0 * target.half_edge_d();
  Point lo = target.center_d().array() - target.half_edge_d();
  return std::make_shared<ConjugatedMap>(std::move(map), lo, e);
}

JacobianResult numeric_jacobian(const SmoothMap& m, const Point& x, double h, const Box& domain) {
  const int n = m.dim();
  JacobianResult r;
  r.J.resize(n, n);
  for (int i = 0; i < n; ++i) {
    Point xp = x, xm = x;
    xp[i] += h;
    xm[i] -= h;
    const bool okp = domain.contains(xp), okm = domain.contains(xm);
    if (okp && okm) {
      r.J.col(i) = (m.forward(xp) - m.forward(xm)) / (2 * h);
    } else if (okp) {
      r.J.col(i) = (m.forward(xp) - m.forward(x)) / h;
      r.reduced_order = true;
    } else if (okm) {
      r.J.col(i) = (m.forward(x) - m.forward(xm)) / h;
      r.reduced_order = true;
    } else {
      throw std::invalid_argument("numeric_jacobian: stencil exits domain on both sides");
    }
  }
  return r;
}

Mat numeric_jacobian(const std::function<Point(const Point&)>& f, const Point& x, double h) {
  const int n = static_cast<int>(x.size());
  Mat J(n, n);
  for (int i = 0; i < n; ++i) {
    Point xp = x, xm = x;
    xp[i] += h;
    xm[i] -= h;
    J.col(i) = (f(xp) - f(xm)) / (2 * h);
  }
  return J;
}

double numeric_hessian_norm(const std::function<Point(const Point&)>& f, const Point& x, double h) {
  const int n = static_cast<int>(x.size());
  const Point f0 = f(x);
  double sum = 0.0;
  for (int i = 0; i < n; ++i) {
    for (int j = i; j < n; ++j) {
      Point d;
      if (i == j) {
        Point xp = x, xm = x;
        xp[i] += h;
        xm[i] -= h;
        d = (f(xp) - 2.0 * f0 + f(xm)) / (h * h);
        sum += d.squaredNorm();
      } else {
        Point a = x, b = x, c = x, e = x;
        a[i] += h, a[j] += h;
        b[i] += h, b[j] -= h;
        c[i] -= h, c[j] += h;
        e[i] -= h, e[j] -= h;
        d = (f(a) - f(b) - f(c) + f(e)) / (4 * h * h);
        sum += 2.0 * d.squaredNorm();
      }
    }
  }
  return std::sqrt(sum);
}

VectorFieldGrid::VectorFieldGrid(Box box, std::vector<int> nodes, int components)
    : box_(std::move(box)), nodes_(std::move(nodes)), comps_(components) {
  size_t total = 1;
  for (int m : nodes_) {
    if (m < 2) throw std::invalid_argument("grid: need at least 2 nodes per axis");
    total *= static_cast<size_t>(m);
  }
  data_.assign(total * comps_, 0.0);
  for (size_t d = 0; d < nodes_.size(); ++d) h_.push_back((box_.hi[d] - box_.lo[d]) / (nodes_[d] - 1));
}

double& VectorFieldGrid::at(const std::vector<int>& idx, int comp) {
  size_t lin = 0;
  for (size_t d = nodes_.size(); d-- > 0;) lin = lin * nodes_[d] + idx[d];
  return data_[lin * comps_ + comp];
}

Point VectorFieldGrid::node_position(size_t node) const {
  const int n = static_cast<int>(nodes_.size());
  Point p(n);
  for (int d = 0; d < n; ++d) {
    const int i = static_cast<int>(node % nodes_[d]);
    node /= nodes_[d];
    p[d] = box_.lo[d] + i * h_[d];
  }
  return p;
}

namespace {
inline void keys_weights(double t, double w[4]) {
  // cubic convolution, a = -1/2
  const double t2 = t * t, t3 = t2 * t;
  w[0] = -0.5 * t3 + t2 - 0.5 * t;
  w[1] = 1.5 * t3 - 2.5 * t2 + 1.0;
  w[2] = -1.5 * t3 + 2.0 * t2 + 0.5 * t;
  w[3] = 0.5 * t3 - 0.5 * t2;
}
}  // namespace

Point VectorFieldGrid::eval(const Point& x) const {
  const int n = static_cast<int>(nodes_.size());
  Point out = Point::Zero(comps_);
  if (!box_.contains(x)) return out;
  int base[kMaxDim];
  double w[kMaxDim][4];
  const int width = order == 1 ? 2 : 4;
  for (int d = 0; d < n; ++d) {
    const double u = (x[d] - box_.lo[d]) / h_[d];
    int i = static_cast<int>(std::floor(u));
    if (i >= nodes_[d] - 1) i = nodes_[d] - 2;
    if (i < 0) i = 0;
    const double t = u - i;
    if (order == 1) {
      base[d] = i;
      w[d][0] = 1.0 - t;
      w[d][1] = t;
    } else {
      base[d] = i - 1;
      keys_weights(t, w[d]);
    }
  }
  int total = 1;
  for (int d = 0; d < n; ++d) total *= width;
  for (int s = 0; s < total; ++s) {
    int rem = s;
    double weight = 1.0;
    size_t lin = 0, stride = 1;
    bool inside = true;
    for (int d = 0; d < n; ++d) {
      const int o = rem % width;
      rem /= width;
      const int idx = base[d] + o;
      if (idx < 0 || idx >= nodes_[d]) {
        inside = false;
        break;
      }
      weight *= w[d][o];
      lin += static_cast<size_t>(idx) * stride;
      stride *= nodes_[d];
    }
    if (!inside || weight == 0.0) continue;
    for (int c = 0; c < comps_; ++c) out[c] += weight * data_[lin * comps_ + c];
  }
  return out;
}

FlowMap::FlowMap(int n, TimeField field, Box support, FlowParams params, std::string tag)
    : n_(n), field_(std::move(field)), support_(std::move(support)), params_(params), steps_(params.steps),
      tag_(std::move(tag)) {
  if (steps_ <= 0) steps_ = params_.min_steps;
}

Point FlowMap::integrate(Point x, double t0, double t1, int steps) const {
  const double dt = (t1 - t0) / steps;
  double t = t0;
  for (int s = 0; s < steps; ++s) {
    const Point k1 = field_(t, x);
    const Point k2 = field_(t + 0.5 * dt, x + 0.5 * dt * k1);
    const Point k3 = field_(t + 0.5 * dt, x + 0.5 * dt * k2);
    const Point k4 = field_(t + dt, x + dt * k3);
    x += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    if (!x.allFinite()) throw NumericError("flow: non-finite trajectory");
    t = t0 + (s + 1) * dt;
  }
  return x;
}

Point FlowMap::forward(const Point& x) const {
  if (!support_.contains(x)) return x;
  Point y = integrate(x, 0.0, 1.0, steps_);
  if (!support_.contains(y, 1e-9)) throw NumericError("flow: trajectory exits support");
  return y;
}

Point FlowMap::inverse(const Point& y) const {
  if (!support_.contains(y)) return y;
  Point x = integrate(y, 1.0, 0.0, steps_);
  if (!support_.contains(x, 1e-9)) throw NumericError("flow: trajectory exits support");
  return x;
}

void FlowMap::calibrate(const std::vector<Point>& probes) {
  int s = params_.min_steps;
  while (true) {
    double diff = 0.0;
    for (auto& p : probes) {
      if (!support_.contains(p)) continue;
      diff = std::max(diff, (integrate(p, 0.0, 1.0, s) - integrate(p, 0.0, 1.0, 2 * s)).norm());
    }
    if (diff < params_.halving_tol) break;
    if (2 * s > params_.max_steps) throw NumericError("flow: step halving did not converge within max_steps");
    s *= 2;
  }
  steps_ = 2 * s;
}

json FlowMap::describe() const {
  json j = SmoothMap::describe();
  j["integrator"] = "rk4";
  j["steps"] = steps_;
  j["halving_tol"] = params_.halving_tol;
  return j;
}

std::shared_ptr<FlowMap> flow_time1(std::shared_ptr<const VectorFieldGrid> field, FlowParams params,
                                    std::vector<Point> probes) {
  const int n = field->box().dim();
  if (field->components() != n) throw std::invalid_argument("flow_time1: field components != dimension");
  auto fn = [field](double, const Point& x) { return field->eval(x); };
  auto fm = std::make_shared<FlowMap>(n, fn, field->box(), params, "flow_time1");
  if (params.steps <= 0) {
    if (probes.empty()) {
      for (int i = 0; i < 64; ++i) {
        Point p(n);
        for (int d = 0; d < n; ++d)
          p[d] = field->box().lo[d] + (field->box().hi[d] - field->box().lo[d]) * std::fmod(0.5 + (i + 1) * (0.618034 + 0.1 * d), 1.0);
        probes.push_back(p);
      }
    }
    fm->calibrate(probes);
  }
  return fm;
}

Point newton_inverse(const std::function<Point(const Point&)>& F, const Point& y, Point x0, double tol, int max_iter) {
  Point x = std::move(x0);
  Point r = F(x) - y;
  double rn = r.norm();
  for (int it = 0; it < max_iter && rn > tol; ++it) {
    const double h = 1e-7 * std::max(1.0, x.norm());
    Mat J = numeric_jacobian(F, x, h);
    Point dx = J.lu().solve(r);
    double lam = 1.0;
    bool improved = false;
    for (int ls = 0; ls < 30; ++ls) {
      Point xn = x - lam * dx;
      Point rn2 = F(xn) - y;
      if (rn2.norm() < rn) {
        x = xn;
        r = rn2;
        rn = r.norm();
        improved = true;
        break;
      }
      lam *= 0.5;
    }
    if (!improved) break;
  }
  if (rn > tol) throw NumericError("newton_inverse: did not converge");
  return x;
}

}  // namespace smoothmaps
}  // namespace cubeflow
