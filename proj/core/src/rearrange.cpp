#include "cubeflow/rearrange.hpp"

#include <unsupported/Eigen/MatrixFunctions>

#include <algorithm>
#include <cmath>

namespace cubeflow::rearrange {

namespace {
constexpr double kPi = 3.14159265358979323846;

// smallest even p >= 2 with 2^{1/p} < bound
double even_exponent(double bound) {
  if (!(bound > 1.0)) throw ConstructionError("twist shape: no room between plateau and outer boundary");
  double p = std::log(2.0) / std::log(bound);
  double pe = 2.0 * std::ceil(p / 2.0 + 1e-12);
  if (pe < 2.0) pe = 2.0;
  while (std::pow(2.0, 1.0 / pe) >= bound) pe += 2.0;
  return pe;
}

Rational exact(double v) { return Rational(v); }
}  // namespace

ExchangeSpec ExchangeSpec::resolved() const {
  if (n == 1)
    throw ConstructionError(
        "exchange_diffeo: no orientation preserving diffeomorphism of [0,1] fixing a neighbourhood of the endpoints "
        "can exchange two disjoint sub-intervals");
  if (n < 2 || n > kMaxDim) throw ConstructionError("exchange_diffeo: unsupported dimension");
  if (!(ratio > 0.0 && ratio < 0.5)) throw ConstructionError("exchange_diffeo: ratio must lie in (0, 1/2)");
  ExchangeSpec s = *this;
  const double g = gap();
  if (s.collar <= 0) s.collar = g / 8;
  if (s.margin <= 0) s.margin = g / 8;
  if (s.shell <= 0) s.shell = g / 8;
  if (s.collar + s.margin + s.shell >= g) throw ConstructionError("exchange_diffeo: collar + margin + shell must be < gap");
  return s;
}

json ExchangeSpec::to_json() const {
  return json{{"n", n}, {"ratio", ratio}, {"collar", collar}, {"margin", margin}, {"shell", shell}};
}

ExchangeSpec exchange_spec_for_generation(int n, int k) {
  ExchangeSpec s;
  s.n = n;
  s.ratio = geometry::edge_ratio_d(k);
  return s.resolved();
}

ExchangeMap::ExchangeMap(const ExchangeSpec& spec, bool measure_preserving) : spec_(spec.resolved()), mp_(measure_preserving) {
  const int n = spec_.n;
  const double r = spec_.ratio, g = spec_.gap();
  const double w = 0.5 - g;  // half-width of the cube block
  const double nu = spec_.margin, kappa = spec_.collar, tau = spec_.shell;
  reach_ = 0.5 * r + nu;
  const double inner = w + nu;
  const double p = even_exponent((0.5 - kappa - tau) / inner);
  const double corner = inner * std::pow(2.0, 1.0 / p);
  const double slack = (0.5 - kappa) - tau - corner;

  std::vector<double> mc, mi, mo;
  if (n > 2) {
    mc.assign(n, 0.5);
    mi.assign(n, inner);
    mo.assign(n, 0.5 - kappa);
  }
  TwistSpec c;
  c.n = n;
  c.axis_a = 0;
  c.axis_b = n - 1;
  c.ca = c.cb = 0.5;
  c.ha = c.hb = 1.0;
  c.p = p;
  c.s_in = corner + 0.5 * slack;
  c.s_out = c.s_in + tau;
  c.angle = kPi;
  c.mid_center = mc;
  c.mid_in = mi;
  c.mid_out = mo;
  c.area_angle = mp_;
  center_ = std::make_shared<PlaneTwist>(c);

  TwistSpec l = c;
  l.ha = inner;
  l.hb = 0.5 * r + nu;
  l.s_in = std::pow(2.0, 1.0 / p) + 0.5 * slack / inner;
  l.s_out = l.s_in + tau / inner;
  if (l.hb * l.s_out > 0.25 - kappa) throw ConstructionError("exchange_diffeo: layer twist does not fit its layer");
  l.cb = 0.75;
  top_ = std::make_shared<PlaneTwist>(l);
  l.cb = 0.25;
  bottom_ = std::make_shared<PlaneTwist>(l);
  layers_ = smoothmaps::compose({top_, bottom_});
}

int ExchangeMap::cube_neighbourhood(const Point& x) const {
  int j = 0;
  for (int i = 0; i < spec_.n; ++i) {
    const int b = x[i] > 0.5 ? 1 : 0;
    const double q = b ? 0.75 : 0.25;
    if (std::abs(x[i] - q) > reach_) return 0;
    j |= b << i;
  }
  return j + 1;
}

Point ExchangeMap::forward(const Point& x) const {
  if (cube_neighbourhood(x)) {
    Point y = x;
    y[spec_.n - 1] += x[spec_.n - 1] > 0.5 ? -0.5 : 0.5;
    return y;
  }
  return layers_->forward(center_->forward(x));
}

Point ExchangeMap::inverse(const Point& y) const {
  if (cube_neighbourhood(y)) {
    Point x = y;
    x[spec_.n - 1] += y[spec_.n - 1] > 0.5 ? -0.5 : 0.5;
    return x;
  }
  return center_->inverse(layers_->inverse(y));
}

Box ExchangeMap::support() const {
  Box b = Box::unit(spec_.n);
  b.lo.setConstant(spec_.collar);
  b.hi.setConstant(1.0 - spec_.collar);
  return b;
}

json ExchangeMap::describe() const {
  json j = SmoothMap::describe();
  j["spec"] = spec_.to_json();
  j["center_twist"] = center_->spec().to_json();
  j["layer_twist"] = top_->spec().to_json();
  j["protected_reach"] = reach_;
  return j;
}

Rigidity ExchangeMap::rigidity(const Point& x, double margin) const {
  {
    bool in = true;
    for (int i = 0; i < spec_.n && in; ++i) {
      const double q = x[i] > 0.5 ? 0.75 : 0.25;
      in = std::abs(x[i] - q) <= reach_ - margin;
    }
    if (in) return Rigidity::Translation;
  }
  const int c = center_->classify(x, margin);
  if (c < 0) return Rigidity::NonRigid;
  const Point y = c == 1 ? center_->forward(x) : x;
  const int t = top_->classify(y, margin), b = bottom_->classify(y, margin);
  if (t < 0 || b < 0) return Rigidity::NonRigid;
  const bool layer = t == 1 || b == 1;
  if (c == 0) return layer ? Rigidity::NonRigid : Rigidity::Identity;
  return layer ? Rigidity::Translation : Rigidity::CenterTurn;
}

Mat ExchangeMap::rigid_linear(Rigidity r) const {
  Mat A = Mat::Identity(spec_.n, spec_.n);
  if (r == Rigidity::CenterTurn) {
    A(0, 0) = -1;
    A(spec_.n - 1, spec_.n - 1) = -1;
  }
  return A;
}

std::shared_ptr<const ExchangeMap> exchange_diffeo(const ExchangeSpec& spec) {
  return std::make_shared<ExchangeMap>(spec, false);
}

std::shared_ptr<const ExchangeMap> mp_exchange_exact(const ExchangeSpec& spec) {
  return std::make_shared<ExchangeMap>(spec, true);
}

json CubeTransportSpec::to_json() const {
  json j;
  j["source"] = {{"center", std::vector<double>(source.center.data(), source.center.data() + source.center.size())},
                 {"radius", source.radius}};
  std::vector<double> sh(target.shape.data(), target.shape.data() + target.shape.size());
  j["target"] = {{"center", std::vector<double>(target.center.data(), target.center.data() + target.center.size())},
                 {"shape", sh}};
  j["source_cubes"] = json::array();
  for (auto& c : source_cubes) j["source_cubes"].push_back(c.to_json());
  j["target_cubes"] = json::array();
  for (auto& c : target_cubes) j["target_cubes"].push_back(c.to_json());
  j["assignment"] = assignment;
  return j;
}

std::shared_ptr<PlaneTwist> cube_half_turn(const Point& center, double cell, double cube_edge, int axis_a, int axis_b,
                                           bool measure_preserving) {
  const int n = static_cast<int>(center.size());
  const double h = 0.5 * cube_edge;
  const double gap = 0.5 * (cell - cube_edge);
  if (!(gap > 0)) throw ConstructionError("cube_half_turn: cube must be smaller than its cell");
  const double nu = gap / 4, kappa = gap / 4, tau = gap / 4;
  const double p = even_exponent((0.5 * cell - kappa - tau) / (h + nu));
  const double corner = (h + nu) * std::pow(2.0, 1.0 / p);
  const double slack = 0.5 * cell - kappa - tau - corner;
  TwistSpec t;
  t.n = n;
  t.axis_a = axis_a;
  t.axis_b = axis_b;
  t.ca = center[axis_a];
  t.cb = center[axis_b];
  t.p = p;
  t.s_in = corner + 0.5 * slack;
  t.s_out = t.s_in + tau;
  t.angle = kPi;
  t.area_angle = measure_preserving;
  if (n > 2) {
    t.mid_center.assign(center.data(), center.data() + n);
    t.mid_in.assign(n, h + nu);
    t.mid_out.assign(n, 0.5 * cell - kappa);
  }
  return std::make_shared<PlaneTwist>(t);
}

namespace {

class TransportMap final : public SmoothMap {
 public:
  TransportMap(Ball ball, Mat L, Point cE, MapPtr K, std::string kind)
      : ball_(std::move(ball)), L_(std::move(L)), Linv_(L_.inverse()), cE_(std::move(cE)), K_(std::move(K)), kind_(std::move(kind)) {}
  int dim() const override { return static_cast<int>(cE_.size()); }
  Point forward(const Point& x) const override {
    Point z = K_ ? K_->forward(x) : x;
    return cE_ + L_ * (z - ball_.center);
  }
  Point inverse(const Point& y) const override {
    Point z = ball_.center + Linv_ * (y - cE_);
    return K_ ? K_->inverse(z) : z;
  }
  Box support() const override {
    return {Point(ball_.center.array() - ball_.radius), Point(ball_.center.array() + ball_.radius)};
  }
  std::optional<std::pair<Mat, Point>> outside_affine() const override {
    return std::make_pair(L_, Point(cE_ - L_ * ball_.center));
  }
  std::string provenance() const override { return "ball_ellipsoid_transport(" + kind_ + ")"; }

 private:
  Ball ball_;
  Mat L_, Linv_;
  Point cE_;
  MapPtr K_;
  std::string kind_;
};

bool is_plane_half_turn(const Mat& L) {
  const int n = static_cast<int>(L.rows());
  Mat H = Mat::Identity(n, n);
  H(0, 0) = -1;
  H(n - 1, n - 1) = -1;
  return (L - H).norm() < 1e-12;
}

// Divergence free stream-function field realising exp(X) near a cube centre (n = 2).
struct LocalDeformation {
  Point c;
  Mat S;  // Hessian of the quadratic stream function
  double r1, r2;
};

}  // namespace

std::vector<AxisCube> natural_targets(const CubeTransportSpec& spec) {
  const Mat L = spec.target.shape / spec.source.radius;
  std::vector<AxisCube> out;
  for (auto& c : spec.source_cubes) {
    Point d = spec.target.center + L * (c.center_d() - spec.source.center);
    AxisCube t = c;
    for (int i = 0; i < c.n; ++i) t.center[i] = exact(d[i]);
    out.push_back(t);
  }
  return out;
}

MapPtr ball_ellipsoid_transport(const CubeTransportSpec& spec) {
  const int n = static_cast<int>(spec.source.center.size());
  const double R = spec.source.radius;
  if (!(R > 0)) throw ConstructionError("transport: source radius must be positive");
  const Mat L = spec.target.shape / R;
  if (std::abs(L.determinant() - 1.0) > 1e-9)
    throw ConstructionError("transport: |E| != |B| (shape/radius must have unit determinant)");
  const size_t m = spec.source_cubes.size();
  if (spec.target_cubes.size() != m || spec.assignment.size() != m)
    throw ConstructionError("transport: cube counts and assignment must match");
  const Mat Linv = L.inverse();
  std::vector<Point> cs(m), es(m);
  double edge = 0.0;
  for (size_t j = 0; j < m; ++j) {
    const auto& sc = spec.source_cubes[j];
    const auto& tc = spec.target_cubes.at(spec.assignment[j]);
    if (sc.half_edge != tc.half_edge) throw ConstructionError("transport: cubes must have equal edges");
    if (j && std::abs(2 * sc.half_edge_d() - edge) > 0) throw ConstructionError("transport: cubes must be identical");
    edge = 2 * sc.half_edge_d();
    cs[j] = sc.center_d();
    es[j] = spec.source.center + Linv * (tc.center_d() - spec.target.center);
    // cube corners inside the ball
    if ((cs[j] - spec.source.center).norm() + std::sqrt(double(n)) * sc.half_edge_d() > R)
      throw ConstructionError("transport: source cube not inside the ball");
  }
  const double scale = std::max(R, 1e-300);
  bool natural = true;
  for (size_t j = 0; j < m; ++j) natural = natural && (es[j] - cs[j]).norm() < 1e-12 * scale;

  // spacing available to each cube: half the distance to the nearest other cube (L_inf), capped by the ball
  auto cell_for = [&](size_t j) {
    double cell = 1e300;
    for (size_t i = 0; i < m; ++i) {
      if (i == j) continue;
      cell = std::min(cell, (cs[i] - cs[j]).cwiseAbs().maxCoeff());
    }
    const double room = 2.0 * (R - (cs[j] - spec.source.center).norm()) / std::sqrt(double(n));
    return std::min(cell, room);
  };

  const bool identity_L = (L - Mat::Identity(n, n)).norm() < 1e-12;
  if (identity_L && natural) return std::make_shared<TransportMap>(spec.source, L, spec.target.center, nullptr, "identity");

  if (is_plane_half_turn(L) && natural) {
    std::vector<MapPtr> parts;
    for (size_t j = 0; j < m; ++j) {
      const double cell = cell_for(j);
      if (!(cell > edge)) throw ConstructionError("transport: cubes too densely packed for local half-turns");
      parts.push_back(cube_half_turn(cs[j], cell, edge, 0, n - 1));
    }
    MapPtr K = parts.empty() ? nullptr : smoothmaps::compose(parts);
    return std::make_shared<TransportMap>(spec.source, L, spec.target.center, K, "half-turn");
  }

  if (identity_L) {
    // swapped cubes must come in pairs symmetric about the ball centre
    std::vector<size_t> moved;
    for (size_t j = 0; j < m; ++j) {
      if ((es[j] - cs[j]).norm() < 1e-12 * scale) continue;
      if ((es[j] - (2.0 * spec.source.center - cs[j])).norm() > 1e-12 * scale)
        throw ConstructionError("transport: infeasible assignment (only swaps symmetric about the ball centre are routed)");
      moved.push_back(j);
    }
    if (n < 2) throw ConstructionError("transport: swaps need n >= 2");
    double reach = 0.0;
    std::vector<MapPtr> parts;
    for (size_t j : moved) {
      const double cell = cell_for(j);
      if (!(cell > edge)) throw ConstructionError("transport: cubes too densely packed for local half-turns");
      parts.push_back(cube_half_turn(cs[j], cell, edge, 0, n - 1));
      reach = std::max(reach, (cs[j] - spec.source.center).norm() + std::sqrt(double(n)) * 0.5 * cell);
    }
    for (size_t j = 0; j < m; ++j) {
      if (std::find(moved.begin(), moved.end(), j) != moved.end()) continue;
      if ((cs[j] - spec.source.center).norm() - std::sqrt(double(n)) * 0.5 * edge < 1.3 * reach)
        throw ConstructionError("transport: a fixed cube lies inside the swap disk");
    }
    TwistSpec t;
    t.n = n;
    t.axis_a = 0;
    t.axis_b = n - 1;
    t.ca = spec.source.center[0];
    t.cb = spec.source.center[n - 1];
    t.p = 2.0;
    t.s_in = reach;
    t.s_out = std::min(0.95 * R, 1.25 * reach);
    if (!(t.s_out > t.s_in)) throw ConstructionError("transport: swap disk does not fit in the ball");
    t.angle = kPi;
    if (n > 2) {
      t.mid_center.assign(spec.source.center.data(), spec.source.center.data() + n);
      t.mid_in.assign(n, reach);
      t.mid_out.assign(n, t.s_out);
    }
    parts.push_back(std::make_shared<PlaneTwist>(t));
    return std::make_shared<TransportMap>(spec.source, L, spec.target.center, smoothmaps::compose(parts), "swap");
  }

  if (n == 2 && natural) {
    const Mat M = Linv;
    Eigen::Matrix2d M2 = M;
    Eigen::EigenSolver<Eigen::Matrix2d> es2(M2);
    for (int i = 0; i < 2; ++i)
      if (std::abs(es2.eigenvalues()[i].imag()) < 1e-14 && es2.eigenvalues()[i].real() <= 0)
        throw ConstructionError("transport: linear map has no real logarithm");
    Eigen::Matrix2d X = M2.log();
    Mat Rm(2, 2);
    Rm << 0, 1, -1, 0;
    Mat S = -Rm * Mat(X);
    std::vector<LocalDeformation> defs;
    double grow = 1.0;
    for (int s = 0; s <= 16; ++s) grow = std::max(grow, Mat((Mat(X) * (s / 16.0)).exp()).norm());
    for (size_t j = 0; j < m; ++j) {
      LocalDeformation d;
      d.c = cs[j];
      d.S = S;
      d.r1 = 1.05 * grow * std::sqrt(2.0) * 0.5 * edge * 1.02;
      d.r2 = 1.5 * d.r1;
      if ((cs[j] - spec.source.center).norm() + d.r2 > R) throw ConstructionError("transport: deformation disk leaves the ball");
      for (auto& o : defs)
        if ((o.c - d.c).norm() < o.r2 + d.r2) throw ConstructionError("transport: deformation disks overlap");
      defs.push_back(d);
    }
    Mat Rmat = Rm;
    auto field = [defs, Rmat](double, const Point& x) {
      Point u = Point::Zero(2);
      const auto& cut = smoothmaps::SmoothStep::instance();
      for (auto& d : defs) {
        Point z = x - d.c;
        const double rho = z.norm();
        if (rho >= d.r2) continue;
        const double t = (rho - d.r1) / (d.r2 - d.r1);
        const double chi = 1.0 - cut(t);
        Point grad = chi * (d.S * z);
        if (t > 0 && rho > 0) {
          const double Q = 0.5 * z.dot(d.S * z);
          grad += Q * (-cut.derivative(t) / (d.r2 - d.r1)) * (z / rho);
        }
        u += Rmat * grad;
      }
      return u;
    };
    smoothmaps::FlowParams fp;
    fp.halving_tol = 1e-10 * R;
    auto flow = std::make_shared<smoothmaps::FlowMap>(2, field,
                                                      Box{Point(spec.source.center.array() - R), Point(spec.source.center.array() + R)},
                                                      fp, "local_linear_flow");
    std::vector<Point> probes;
    for (auto& d : defs)
      for (int s = 0; s < 8; ++s) {
        const double a = 2 * kPi * s / 8;
        probes.push_back(d.c + d.r1 * 1.2 * make_point({std::cos(a), std::sin(a)}));
        probes.push_back(d.c + 0.5 * edge * make_point({std::cos(a), std::sin(a)}));
      }
    flow->calibrate(probes);
    return std::make_shared<TransportMap>(spec.source, L, spec.target.center, flow, "local-linear");
  }
  throw ConstructionError("transport: infeasible assignment for this linear map (no routing implemented)");
}

namespace {
template <class Inside>
std::vector<AxisCube> pack_impl(const Point& c, double reach, double q, double shrink, Inside inside) {
  if (!(q > 0) || !(shrink > 0 && shrink < 1)) throw std::invalid_argument("pack_grid_cubes: need q > 0, 0 < shrink < 1");
  const int n = static_cast<int>(c.size());
  const int K = static_cast<int>(std::ceil(reach / q)) + 1;
  const int width = 2 * K + 1;
  long total = 1;
  for (int d = 0; d < n; ++d) total *= width;
  std::vector<AxisCube> out;
  for (long s = 0; s < total; ++s) {
    long rem = s;
    Point center(n);
    for (int d = 0; d < n; ++d) {
      center[d] = c[d] + q * (static_cast<int>(rem % width) - K);
      rem /= width;
    }
    bool ok = true;
    for (int corner = 0; corner < (1 << n) && ok; ++corner) {
      Point v = center;
      for (int d = 0; d < n; ++d) v[d] += ((corner >> d) & 1 ? 0.5 : -0.5) * q;
      ok = inside(v);
    }
    if (!ok) continue;
    AxisCube cube;
    cube.n = n;
    for (int d = 0; d < n; ++d) cube.center.push_back(exact(center[d]));
    cube.half_edge = exact(0.5 * q * shrink);
    out.push_back(cube);
  }
  return out;
}
}  // namespace

std::vector<AxisCube> pack_grid_cubes(const Ball& region, double q, double shrink) {
  return pack_impl(region.center, region.radius, q, shrink, [&](const Point& v) { return region.contains(v); });
}

std::vector<AxisCube> pack_grid_cubes(const Ellipsoid& region, double q, double shrink) {
  Eigen::JacobiSVD<Mat> svd(region.shape);
  return pack_impl(region.center, svd.singularValues()[0], q, shrink, [&](const Point& v) { return region.contains(v); });
}

}  // namespace cubeflow::rearrange
