#include "cubeflow/shape.hpp"

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <cmath>
#include <map>
#include <mutex>

namespace cubeflow {

namespace {
constexpr double kPi = 3.14159265358979323846;

inline double pow_ratio(double r, double p) { return r <= 0.0 ? 0.0 : std::exp(p * std::log(r)); }
}  // namespace

std::shared_ptr<const PNormTable> PNormTable::get(double p) {
  static std::mutex mu;
  static std::map<double, std::shared_ptr<const PNormTable>> cache;
  std::lock_guard<std::mutex> lock(mu);
  auto it = cache.find(p);
  if (it != cache.end()) return it->second;
  auto t = std::make_shared<const PNormTable>(p);
  cache.emplace(p, t);
  return t;
}

PNormTable::PNormTable(double p) : p_(p) {
  if (!(p >= 2.0)) throw std::invalid_argument("p-norm shape: p must be >= 2");
  N_ = 4096;
  h_ = 1.0 / N_;
  v_.assign(N_ + 1, 0.0);
  d_.assign(N_ + 1, 0.0);
  auto dens = [p](double v) { return std::exp(-(2.0 / p) * std::log1p(pow_ratio(v, p))); };
  double acc = 0.0;
  for (int i = 0; i < N_; ++i) {
    acc += boost::math::quadrature::gauss_kronrod<double, 15>::integrate(dens, i * h_, (i + 1) * h_, 6, 1e-13);
    v_[i + 1] = acc;
  }
  for (int i = 0; i <= N_; ++i) d_[i] = dens(i * h_);
  g1_ = v_[N_];
}

double PNormTable::G(double u) const {
  if (u <= 0.0) return 0.0;
  if (u >= 1.0) return g1_;
  const double x = u / h_;
  int i = static_cast<int>(x);
  if (i >= N_) i = N_ - 1;
  const double t = x - i, t2 = t * t, t3 = t2 * t;
  return (2 * t3 - 3 * t2 + 1) * v_[i] + (t3 - 2 * t2 + t) * h_ * d_[i] + (-2 * t3 + 3 * t2) * v_[i + 1] +
         (t3 - t2) * h_ * d_[i + 1];
}

double PNormTable::Ginv(double v) const {
  if (v <= 0.0) return 0.0;
  if (v >= g1_) return 1.0;
  int lo = 0, hi = N_;
  while (hi - lo > 1) {
    const int mid = (lo + hi) / 2;
    if (v_[mid] <= v) lo = mid;
    else hi = mid;
  }
  // Newton on the cubic segment, safeguarded by bisection
  double a = lo * h_, b = hi * h_;
  double u = a + (v - v_[lo]) / std::max(v_[hi] - v_[lo], 1e-300) * h_;
  for (int it = 0; it < 60; ++it) {
    const double f = G(u) - v;
    if (f > 0) b = u;
    else a = u;
    // derivative of the Hermite cubic
    const double x = u / h_;
    int i = std::min(static_cast<int>(x), N_ - 1);
    const double t = x - i, t2 = t * t;
    const double dv = ((6 * t2 - 6 * t) * v_[i] + (-6 * t2 + 6 * t) * v_[i + 1]) / h_ + (3 * t2 - 4 * t + 1) * d_[i] +
                      (3 * t2 - 2 * t) * d_[i + 1];
    double un = dv > 0 ? u - f / dv : 0.5 * (a + b);
    if (!(un > a && un < b)) un = 0.5 * (a + b);
    if (std::abs(un - u) < 1e-17) {
      u = un;
      break;
    }
    u = un;
  }
  return u;
}

double PNormTable::norm(double X, double Y) const {
  const double ax = std::abs(X), ay = std::abs(Y);
  const double m = std::max(ax, ay);
  if (m == 0.0) return 0.0;
  const double r = std::min(ax, ay) / m;
  return m * std::exp(std::log1p(pow_ratio(r, p_)) / p_);
}

double PNormTable::major_for(double u) const { return std::exp(-std::log1p(pow_ratio(u, p_)) / p_); }

json TwistSpec::to_json() const {
  return json{{"n", n},           {"axes", {axis_a, axis_b}},   {"center", {ca, cb}},   {"scales", {ha, hb}},
              {"p", p},           {"s_in", s_in},               {"s_out", s_out},       {"angle", angle},
              {"mid_center", mid_center}, {"mid_in", mid_in}, {"mid_out", mid_out}, {"area_angle", area_angle}};
}

PlaneTwist::PlaneTwist(TwistSpec spec) : spec_(std::move(spec)) {
  if (spec_.n < 2) throw ConstructionError("plane twist needs n >= 2");
  if (!(spec_.s_in > 0 && spec_.s_out > spec_.s_in)) throw ConstructionError("plane twist: need 0 < s_in < s_out");
  if (!(spec_.ha > 0 && spec_.hb > 0)) throw ConstructionError("plane twist: scales must be positive");
  if (spec_.n > 2) {
    if (static_cast<int>(spec_.mid_center.size()) != spec_.n || static_cast<int>(spec_.mid_in.size()) != spec_.n ||
        static_cast<int>(spec_.mid_out.size()) != spec_.n)
      throw ConstructionError("plane twist: mid window must have n entries");
  }
  table_ = PNormTable::get(spec_.p);
  lip_ = 1.0 / std::min(spec_.ha, spec_.hb);
}

Box PlaneTwist::support() const {
  Box b = Box::unit(spec_.n);
  for (int i = 0; i < spec_.n; ++i) {
    if (i == spec_.axis_a) {
      b.lo[i] = spec_.ca - spec_.ha * spec_.s_out;
      b.hi[i] = spec_.ca + spec_.ha * spec_.s_out;
    } else if (i == spec_.axis_b) {
      b.lo[i] = spec_.cb - spec_.hb * spec_.s_out;
      b.hi[i] = spec_.cb + spec_.hb * spec_.s_out;
    } else {
      b.lo[i] = spec_.mid_center[i] - spec_.mid_out[i];
      b.hi[i] = spec_.mid_center[i] + spec_.mid_out[i];
    }
  }
  return b;
}

json PlaneTwist::describe() const {
  json j = SmoothMap::describe();
  j["twist"] = spec_.to_json();
  return j;
}

double PlaneTwist::level(const Point& x) const {
  return table_->norm((x[spec_.axis_a] - spec_.ca) / spec_.ha, (x[spec_.axis_b] - spec_.cb) / spec_.hb);
}

double PlaneTwist::mid_factor(const Point& x, double margin, bool& zero, bool& one) const {
  zero = false;
  one = true;
  if (spec_.n == 2) return 1.0;
  const auto& step = smoothmaps::SmoothStep::instance();
  double f = 1.0;
  for (int i = 0; i < spec_.n; ++i) {
    if (i == spec_.axis_a || i == spec_.axis_b) continue;
    const double d = std::abs(x[i] - spec_.mid_center[i]);
    if (d >= spec_.mid_out[i] + margin) {
      zero = true;
      one = false;
      return 0.0;
    }
    if (d > spec_.mid_in[i] - margin) one = false;
    f *= 1.0 - step((d - spec_.mid_in[i]) / (spec_.mid_out[i] - spec_.mid_in[i]));
  }
  return f;
}

double PlaneTwist::amount(const Point& x) const {
  const double s = level(x);
  if (s >= spec_.s_out) return 0.0;
  bool zero, one;
  const double m = mid_factor(x, 0.0, zero, one);
  if (zero) return 0.0;
  return m * (1.0 - smoothmaps::SmoothStep::instance()((s - spec_.s_in) / (spec_.s_out - spec_.s_in)));
}

int PlaneTwist::classify(const Point& x, double margin) const {
  const double s = level(x);
  bool zero, one;
  mid_factor(x, margin, zero, one);
  if (zero || s >= spec_.s_out + lip_ * margin) return 0;
  if (one && s <= spec_.s_in - lip_ * margin) return 1;
  return -1;
}

Point PlaneTwist::apply(const Point& x, double sign) const {
  const int a = spec_.axis_a, b = spec_.axis_b;
  const double X = (x[a] - spec_.ca) / spec_.ha, Y = (x[b] - spec_.cb) / spec_.hb;
  const double s = table_->norm(X, Y);
  if (s >= spec_.s_out || s == 0.0) return x;
  bool zero, one;
  const double m = mid_factor(x, 0.0, zero, one);
  if (zero) return x;
  const double amt = m * (1.0 - smoothmaps::SmoothStep::instance()((s - spec_.s_in) / (spec_.s_out - spec_.s_in)));
  if (amt == 0.0) return x;
  Point y = x;
  if (amt == 1.0 && spec_.angle == kPi) {
    y[a] = 2.0 * spec_.ca - x[a];
    y[b] = 2.0 * spec_.cb - x[b];
    return y;
  }
  double theta;  // in octant units, [0, 8)
  if (spec_.area_angle) {
    const double ax = std::abs(X), ay = std::abs(Y);
    int o;
    if (X > 0 && Y >= 0) o = ay < ax ? 0 : 1;
    else if (X <= 0 && Y > 0) o = ax <= ay ? 2 : 3;
    else if (X < 0 && Y <= 0) o = ay < ax ? 4 : 5;
    else o = ax <= ay ? 6 : 7;
    const double u = std::min(ax, ay) / std::max(ax, ay);
    const double fr = table_->G(u) / table_->G1();
    theta = o + ((o & 1) ? 1.0 - fr : fr);
  } else {
    theta = std::atan2(Y, X) * (4.0 / kPi);
    if (theta < 0) theta += 8.0;
  }
  theta += sign * spec_.angle * amt * (4.0 / kPi);
  theta = std::fmod(theta, 8.0);
  if (theta < 0) theta += 8.0;
  double Xu, Yu;
  if (spec_.area_angle) {
    int o = static_cast<int>(theta);
    if (o > 7) o = 7;
    const double f = theta - o;
    const double u = table_->Ginv(((o & 1) ? 1.0 - f : f) * table_->G1());
    const double M = table_->major_for(u), mn = u * M;
    switch (o) {
      case 0: Xu = M, Yu = mn; break;
      case 1: Xu = mn, Yu = M; break;
      case 2: Xu = -mn, Yu = M; break;
      case 3: Xu = -M, Yu = mn; break;
      case 4: Xu = -M, Yu = -mn; break;
      case 5: Xu = -mn, Yu = -M; break;
      case 6: Xu = mn, Yu = -M; break;
      default: Xu = M, Yu = -mn; break;
    }
  } else {
    const double phi = theta * (kPi / 4.0);
    const double c = std::cos(phi), sn = std::sin(phi);
    const double r = table_->norm(c, sn);
    Xu = c / r;
    Yu = sn / r;
  }
  y[a] = spec_.ca + spec_.ha * s * Xu;
  y[b] = spec_.cb + spec_.hb * s * Yu;
  return y;
}

}  // namespace cubeflow
