#include "cubeflow/linearize.hpp"

#include <cmath>
#include <random>

namespace cubeflow::linearize {

namespace {
constexpr double kPi = 3.14159265358979323846;

// nested quasi-random points in the unit ball
std::vector<Point> ball_points(int n, int count) {
  static const double g[4] = {0.7548776662466927, 0.5698402909980532, 0.6180339887498949, 0.4142135623730951};
  std::vector<Point> pts;
  for (long i = 0; static_cast<int>(pts.size()) < count; ++i) {
    Point p(n);
    for (int d = 0; d < n; ++d) p[d] = 2.0 * std::fmod(0.5 + (i + 1) * g[d], 1.0) - 1.0;
    if (p.norm() <= 1.0) pts.push_back(p);
  }
  return pts;
}

std::vector<Point> sphere_points(int n, int count) {
  std::vector<Point> pts;
  if (n == 2) {
    for (int i = 0; i < count; ++i) pts.push_back(make_point({std::cos(2 * kPi * i / count), std::sin(2 * kPi * i / count)}));
    return pts;
  }
  std::mt19937_64 rng(12345);
  std::normal_distribution<double> N(0, 1);
  for (int i = 0; i < count; ++i) {
    Point p(n);
    for (int d = 0; d < n; ++d) p[d] = N(rng);
    pts.push_back(p / p.norm());
  }
  return pts;
}

double op_norm(const Mat& A) { return Eigen::JacobiSVD<Mat>(A).singularValues()[0]; }
}  // namespace

json NormBundle::to_json() const {
  return json{{"center", std::vector<double>(region.center.data(), region.center.data() + region.center.size())},
              {"radius", region.radius},
              {"D", D},
              {"Dinv", Dinv},
              {"D2", D2},
              {"M", M},
              {"samples", samples},
              {"fd_step", fd_step}};
}

NormBundle measure_norms(const SmoothMap& phi, const Ball& region, int samples, double fd_step) {
  if (samples < 1) throw std::invalid_argument("measure_norms: need samples >= 1");
  const int n = phi.dim();
  NormBundle b;
  b.region = region;
  b.samples = samples;
  b.fd_step = fd_step;
  auto F = [&](const Point& z) { return phi.forward(z); };
  for (auto& u : ball_points(n, samples)) {
    const Point x = region.center + region.radius * u;
    const Mat J = smoothmaps::numeric_jacobian(F, x, fd_step);
    const auto sv = Eigen::JacobiSVD<Mat>(J).singularValues();
    b.D = std::max(b.D, sv[0]);
    b.Dinv = std::max(b.Dinv, 1.0 / sv[n - 1]);
    b.D2 = std::max(b.D2, smoothmaps::numeric_hessian_norm(F, x, std::sqrt(fd_step) * 1e-2));
  }
  b.M = b.D + b.Dinv + b.D2;
  if (!std::isfinite(b.M) || !(b.M > 0)) throw NumericError("measure_norms: non-finite norm estimate");
  return b;
}

double admissible_radius(double M, int ell) {
  if (!(M > 0) || ell < 0) throw std::invalid_argument("admissible_radius: need M > 0, ell >= 0");
  return 1.0 / (10.0 * (M + 1) * (M + 1) * std::ldexp(1.0, ell));
}

LinearizedMap::LinearizedMap(MapPtr phi, Point x0, double r, Mat DPhi, std::shared_ptr<const SmoothMap> correction)
    : phi_(std::move(phi)), x0_(std::move(x0)), r_(r), corr_(std::move(correction)) {
  T_.A = DPhi;
  T_.b = phi_->forward(x0_) - DPhi * x0_;
  Ainv_ = DPhi.inverse();
  cut_ = smoothmaps::cutoff_phi();
}

Point LinearizedMap::glued(const Point& x) const {
  const double t = (x - x0_).norm() / r_;
  if (t >= cut_.outer) return phi_->forward(x);
  if (t <= cut_.inner) return T_(x);
  const Point tx = T_(x);
  return tx + cut_(t) * (phi_->forward(x) - tx);
}

Point LinearizedMap::forward(const Point& x) const {
  if (!corr_ || (x - x0_).norm() >= r_) return phi_->forward(x);
  return glued(corr_->inverse(x));
}

Point LinearizedMap::inverse(const Point& y) const {
  const Point xp = phi_->inverse(y);
  if (!corr_ || (xp - x0_).norm() >= cut_.outer * r_) return xp;
  Point z = Ainv_ * (y - T_.b);
  if ((z - x0_).norm() > cut_.inner * r_)
    z = smoothmaps::newton_inverse([this](const Point& p) { return glued(p); }, y, xp, 1e-14 * std::max(1.0, y.norm()));
  return corr_->forward(z);
}

json LinearizedMap::describe() const {
  json j = SmoothMap::describe();
  j["center"] = std::vector<double>(x0_.data(), x0_.data() + x0_.size());
  j["radius"] = r_;
  j["tangent"] = std::vector<double>(T_.A.data(), T_.A.data() + T_.A.size());
  j["cutoff_sup_derivative"] = cut_.sup_derivative;
  j["trivial"] = trivial();
  if (corr_) j["correction"] = corr_->describe();
  return j;
}

std::shared_ptr<const LinearizedMap> linearize_on_ball(MapPtr phi, const Point& x0, double r, const NormBundle& norms,
                                                       const LinearizeOptions& opt) {
  const double rmax = admissible_radius(norms.M, opt.ell);
  if (!(r > 0 && r < rmax))
    throw std::invalid_argument("linearize_on_ball: radius " + std::to_string(r) + " not below admissible " +
                                std::to_string(rmax));
  const int n = phi->dim();
  auto F = [&](const Point& z) { return phi->forward(z); };
  const Mat A = smoothmaps::numeric_jacobian(F, x0, std::min(opt.fd_step, 1e-4 * r));
  if (std::abs(A.determinant() - 1.0) > opt.tol) throw ConstructionError("linearize_on_ball: map is not measure preserving at the centre");
  auto probe = std::make_shared<LinearizedMap>(phi, x0, r, A, nullptr);
  // affine on the ball: nothing to glue. The trivial result evaluates Phi itself, so the tolerance only has to
  // absorb the finite-difference error of the tangent.
  bool affine = true;
  for (auto& u : ball_points(n, 256)) {
    const Point x = x0 + r * u;
    if ((phi->forward(x) - probe->tangent()(x)).norm() > 1e-8 * r) {
      affine = false;
      break;
    }
  }
  if (affine) return probe;
  if (n != 2) throw ConstructionError("linearize_on_ball: non-affine surgery implemented for n = 2");
  // injectivity spot-check of G
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> U(-1, 1);
  auto rand_in_ball = [&]() {
    Point p(n);
    do {
      for (int d = 0; d < n; ++d) p[d] = U(rng);
    } while (p.norm() > 1);
    return Point(x0 + r * p);
  };
  for (int i = 0; i < opt.injectivity_pairs; ++i) {
    const Point x = rand_in_ball(), y = rand_in_ball();
    if ((probe->glued(x) - probe->glued(y)).norm() < 0.5 * (A * (x - y)).norm())
      throw NumericError("linearize_on_ball: injectivity estimate violated (M under-measured?)");
  }
  moser::AnnulusProblem ap;
  ap.center = x0;
  ap.A = Mat::Identity(2, 2);
  ap.s1 = 0.6 * r;
  ap.s2 = 0.8 * r;
  ap.radial_cells = opt.radial_cells;
  ap.angular_cells = opt.angular_cells;
  const double h = 1e-4 * r;
  ap.f = [probe, h](const Point& x) {
    return smoothmaps::numeric_jacobian([&](const Point& z) { return probe->glued(z); }, x, h).determinant();
  };
  auto corr = std::make_shared<moser::AnnulusFlow>(ap, opt.flow);
  return std::make_shared<LinearizedMap>(phi, x0, r, A, corr);
}

json ContainmentReport::to_json() const {
  return json{{"pass", pass}, {"center_distance", center_distance}, {"hausdorff", hausdorff}, {"samples", samples}, {"tolerance", tolerance}};
}

ContainmentReport containment_check(const SmoothMap& F, const SmoothMap& G, const Ball& ball, int samples, double tol) {
  ContainmentReport rep;
  rep.samples = samples;
  rep.tolerance = tol;
  rep.center_distance = (F.forward(ball.center) - G.forward(ball.center)).norm();
  std::vector<Point> a, b;
  for (auto& u : sphere_points(F.dim(), samples)) {
    const Point x = ball.center + ball.radius * u;
    a.push_back(F.forward(x));
    b.push_back(G.forward(x));
  }
  auto directed = [](const std::vector<Point>& P, const std::vector<Point>& Q) {
    double worst = 0.0;
    for (auto& p : P) {
      double best = 1e300;
      for (auto& q : Q) best = std::min(best, (p - q).norm());
      worst = std::max(worst, best);
    }
    return worst;
  };
  rep.hausdorff = std::max(directed(a, b), directed(b, a));
  rep.pass = rep.center_distance <= tol && rep.hausdorff <= tol;
  return rep;
}

TangentContainment tangent_containment(const SmoothMap& phi, const LinearizedMap& lin, int samples) {
  TangentContainment tc;
  const int n = lin.dim();
  auto pts = ball_points(n, samples / 2);
  for (auto& u : sphere_points(n, samples - samples / 2)) pts.push_back(u);
  for (auto& u : pts) {
    const Point p = lin.center() + 0.5 * lin.radius() * u;
    const Point x = phi.inverse(lin.tangent()(p));
    const double ratio = (x - lin.center()).norm() / lin.radius();
    tc.worst_ratio = std::max(tc.worst_ratio, ratio);
    if (ratio > 1.0) ++tc.outside;
    ++tc.samples;
  }
  return tc;
}

double glue_derivative_bound(const LinearizedMap& lin, int samples, double fd_step) {
  double worst = 0.0;
  auto G = [&](const Point& z) { return lin.glued(z); };
  for (auto& u : ball_points(lin.dim(), samples)) {
    const Point x = lin.center() + lin.radius() * u;
    worst = std::max(worst, op_norm(smoothmaps::numeric_jacobian(G, x, fd_step) - lin.tangent().A));
  }
  return worst;
}

double image_diameter(const SmoothMap& m, const Ball& ball, int samples) {
  std::vector<Point> img;
  for (auto& u : sphere_points(m.dim(), samples)) img.push_back(m.forward(ball.center + ball.radius * u));
  double d = 0.0;
  for (size_t i = 0; i < img.size(); ++i)
    for (size_t j = i + 1; j < img.size(); ++j) d = std::max(d, (img[i] - img[j]).norm());
  return d;
}

}  // namespace cubeflow::linearize
