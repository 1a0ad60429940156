#pragma once

#include <Eigen/Dense>
#include <boost/multiprecision/cpp_int.hpp>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

namespace cubeflow {

constexpr int kMaxDim = 4;

// Stack-allocated dynamic vectors/matrices (n <= kMaxDim).
using Point = Eigen::Matrix<double, Eigen::Dynamic, 1, Eigen::ColMajor, kMaxDim, 1>;
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor, kMaxDim, kMaxDim>;
using Rational = boost::multiprecision::cpp_rational;
using BigInt = boost::multiprecision::cpp_int;
using json = nlohmann::json;

struct ConstructionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ResourceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

Point make_point(std::initializer_list<double> xs);
Point constant_point(int n, double v);

std::string rational_str(const Rational& r);
Rational parse_rational(const std::string& s);
double to_double(const Rational& r);

namespace geometry {

// alpha(0) = 1, alpha(k) = 1/(2^{k+1}-1).
Rational alpha(int k);
double alpha_d(int k);

// 2^{nk} alpha(k)^n, the total measure of the generation-k cubes.
Rational generation_measure(int k, int n);

// ratio alpha(k)/alpha(k-1) of child edge to parent edge
Rational edge_ratio(int k);
double edge_ratio_d(int k);

struct DyadicFamily {
  int n = 0;
  std::vector<std::vector<Rational>> centers;  // 2^n centers, 0-based storage
  int size() const { return static_cast<int>(centers.size()); }
  // 1-based pairing j <-> j +- 2^{n-1}
  int pair(int j) const;
};

DyadicFamily dyadic_family(int n);

// coordinate i of dyadic center j (1-based j), as a double: 1/4 or 3/4
inline double dyadic_coord(int j, int i) { return ((j - 1) >> i) & 1 ? 0.75 : 0.25; }
inline int dyadic_pair(int n, int j) {
  const int h = 1 << (n - 1);
  return j > h ? j - h : j + h;
}

struct CantorAddress {
  int n = 2;
  std::vector<int> digits;  // 1-based digits in {1..2^n}

  int length() const { return static_cast<int>(digits.size()); }
  void validate() const;
  CantorAddress paired() const;
  CantorAddress prefix(int k) const;
  std::string str() const;
  static CantorAddress parse(int n, const std::string& s);
  bool operator==(const CantorAddress&) const = default;
};

struct AxisCube {
  int n = 0;
  std::vector<Rational> center;
  Rational half_edge;

  Point center_d() const;
  double half_edge_d() const { return to_double(half_edge); }
  bool contains(const Point& x) const;
  json to_json() const;
  static AxisCube from_json(const json& j);
};

AxisCube unit_cube(int n);
AxisCube cube_at(const CantorAddress& a, int k);

// Fast floating point center of the generation-k cube on the address prefix.
Point cube_center_d(int n, const int* digits, int k);

struct Ball {
  Point center;
  double radius = 0.0;
  double volume() const;
  bool contains(const Point& x) const { return (x - center).norm() <= radius; }
};

struct Ellipsoid {
  Point center;
  Mat shape;  // image of the unit ball under shape (invertible)
  double volume() const;
  bool contains(const Point& x) const;
};

double unit_ball_volume(int n);

// Floating point approximation of the Cantor point with this address prefix (center of the cube).
Point cantor_point(const CantorAddress& a);

}  // namespace geometry

using geometry::AxisCube;
using geometry::Ball;
using geometry::CantorAddress;
using geometry::Ellipsoid;

}  // namespace cubeflow
