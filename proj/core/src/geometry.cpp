#include "cubeflow/geometry.hpp"

#include <boost/math/constants/constants.hpp>

#include <cmath>
#include <sstream>

namespace cubeflow {

Point make_point(std::initializer_list<double> xs) {
  Point p(static_cast<Eigen::Index>(xs.size()));
  int i = 0;
  for (double v : xs) p[i++] = v;
  return p;
}

Point constant_point(int n, double v) { return Point::Constant(n, v); }

std::string rational_str(const Rational& r) {
  std::ostringstream os;
  os << numerator(r) << "/" << denominator(r);
  return os.str();
}

Rational parse_rational(const std::string& s) {
  auto slash = s.find('/');
  if (slash == std::string::npos) return Rational(BigInt(s));
  return Rational(BigInt(s.substr(0, slash)), BigInt(s.substr(slash + 1)));
}

double to_double(const Rational& r) { return r.convert_to<double>(); }

namespace geometry {

Rational alpha(int k) {
  if (k < 0) throw std::invalid_argument("alpha: k must be non-negative");
  if (k == 0) return Rational(1);
  BigInt d = (BigInt(1) << (k + 1)) - 1;
  return Rational(BigInt(1), d);
}

double alpha_d(int k) {
  if (k < 0) throw std::invalid_argument("alpha: k must be non-negative");
  if (k == 0) return 1.0;
  return 1.0 / (std::ldexp(1.0, k + 1) - 1.0);
}

Rational generation_measure(int k, int n) {
  if (k < 1 || n < 1) throw std::invalid_argument("generation_measure: need k >= 1, n >= 1");
  Rational a = alpha(k);
  Rational r = 1;
  for (int i = 0; i < n; ++i) r *= a;
  return r * Rational(BigInt(1) << (n * k));
}

Rational edge_ratio(int k) {
  if (k < 1) throw std::invalid_argument("edge_ratio: k >= 1");
  return alpha(k) / alpha(k - 1);
}

double edge_ratio_d(int k) {
  if (k < 1) throw std::invalid_argument("edge_ratio: k >= 1");
  // (2^k - 1)/(2^{k+1} - 1)
  double a = std::ldexp(1.0, k) - 1.0;
  double b = std::ldexp(1.0, k + 1) - 1.0;
  return k == 1 ? 1.0 / 3.0 : a / b;
}

int DyadicFamily::pair(int j) const {
  if (j < 1 || j > size()) throw std::out_of_range("dyadic pair: digit out of range");
  return dyadic_pair(n, j);
}

DyadicFamily dyadic_family(int n) {
  if (n < 1 || n > kMaxDim) throw std::invalid_argument("dyadic_family: unsupported dimension");
  DyadicFamily f;
  f.n = n;
  const Rational q1(1, 4), q3(3, 4);
  for (int j = 0; j < (1 << n); ++j) {
    std::vector<Rational> c(n);
    for (int i = 0; i < n; ++i) c[i] = ((j >> i) & 1) ? q3 : q1;
    f.centers.push_back(std::move(c));
  }
  return f;
}

void CantorAddress::validate() const {
  if (n < 1 || n > kMaxDim) throw std::invalid_argument("address: unsupported dimension");
  for (int d : digits)
    if (d < 1 || d > (1 << n)) throw std::out_of_range("address: digit out of range");
}

CantorAddress CantorAddress::paired() const {
  CantorAddress a = *this;
  for (int& d : a.digits) d = dyadic_pair(n, d);
  return a;
}

CantorAddress CantorAddress::prefix(int k) const {
  if (k > length()) throw std::out_of_range("address prefix longer than address");
  CantorAddress a;
  a.n = n;
  a.digits.assign(digits.begin(), digits.begin() + k);
  return a;
}

std::string CantorAddress::str() const {
  std::string s;
  for (size_t i = 0; i < digits.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(digits[i]);
  }
  return s;
}

CantorAddress CantorAddress::parse(int n, const std::string& s) {
  CantorAddress a;
  a.n = n;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok.empty()) continue;
    size_t pos = 0;
    int d = std::stoi(tok, &pos);
    if (pos != tok.size()) throw std::invalid_argument("address: bad digit '" + tok + "'");
    a.digits.push_back(d);
  }
  a.validate();
  return a;
}

Point AxisCube::center_d() const {
  Point p(n);
  for (int i = 0; i < n; ++i) p[i] = to_double(center[i]);
  return p;
}

bool AxisCube::contains(const Point& x) const {
  const double h = half_edge_d();
  for (int i = 0; i < n; ++i)
    if (std::abs(x[i] - to_double(center[i])) > h) return false;
  return true;
}

json AxisCube::to_json() const {
  json c = json::array();
  for (auto& v : center) c.push_back(rational_str(v));
  return json{{"center", c}, {"half_edge", rational_str(half_edge)}, {"n", n}};
}

AxisCube AxisCube::from_json(const json& j) {
  AxisCube c;
  c.n = j.at("n").get<int>();
  for (auto& v : j.at("center")) c.center.push_back(parse_rational(v.get<std::string>()));
  c.half_edge = parse_rational(j.at("half_edge").get<std::string>());
  if (static_cast<int>(c.center.size()) != c.n || c.half_edge <= 0)
    throw std::invalid_argument("cube json: inconsistent fields");
  return c;
}

AxisCube unit_cube(int n) {
  AxisCube c;
  c.n = n;
  c.center.assign(n, Rational(1, 2));
  c.half_edge = Rational(1, 2);
  return c;
}

AxisCube cube_at(const CantorAddress& a, int k) {
  a.validate();
  if (k > a.length()) throw std::out_of_range("cube_at: address shorter than k");
  AxisCube c = unit_cube(a.n);
  Rational edge = 1;
  for (int g = 1; g <= k; ++g) {
    const int j = a.digits[g - 1];
    for (int i = 0; i < a.n; ++i) {
      Rational q = ((j - 1) >> i) & 1 ? Rational(3, 4) : Rational(1, 4);
      c.center[i] += edge * (q - Rational(1, 2));
    }
    edge = alpha(g);
  }
  c.half_edge = edge / 2;
  return c;
}

Point cube_center_d(int n, const int* digits, int k) {
  Point c = Point::Constant(n, 0.5);
  double edge = 1.0;
  for (int g = 1; g <= k; ++g) {
    const int j = digits[g - 1];
    for (int i = 0; i < n; ++i) c[i] += edge * (dyadic_coord(j, i) - 0.5);
    edge = alpha_d(g);
  }
  return c;
}

double unit_ball_volume(int n) {
  const double pi = boost::math::constants::pi<double>();
  return std::pow(pi, n / 2.0) / std::tgamma(n / 2.0 + 1.0);
}

double Ball::volume() const { return unit_ball_volume(static_cast<int>(center.size())) * std::pow(radius, center.size()); }

double Ellipsoid::volume() const {
  return unit_ball_volume(static_cast<int>(center.size())) * std::abs(shape.determinant());
}

bool Ellipsoid::contains(const Point& x) const {
  Point z = shape.lu().solve(Point(x - center));
  return z.norm() <= 1.0;
}

Point cantor_point(const CantorAddress& a) {
  a.validate();
  return cube_center_d(a.n, a.digits.data(), a.length());
}

}  // namespace geometry
}  // namespace cubeflow
