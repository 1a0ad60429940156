#pragma once

#include "cubeflow/geometry.hpp"

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace cubeflow {

struct Box {
  Point lo, hi;
  static Box unit(int n) { return {Point::Zero(n), Point::Ones(n)}; }
  static Box everywhere(int n);
  bool contains(const Point& x, double pad = 0.0) const;
  int dim() const { return static_cast<int>(lo.size()); }
  double volume() const;
  json to_json() const;
};

struct Tolerances {
  double tau_inv = 1e-6;       // analytic maps
  double tau_inv_flow = 1e-4;  // flow maps
  double tau_inj = 1e-9;
  int interp_order = 3;
  json to_json() const;
  static Tolerances from_json(const json& j);
};

// Evaluable, invertible map of a region with a declared support outside of which it is the identity
// (or the declared affine map).
class SmoothMap {
 public:
  virtual ~SmoothMap() = default;
  virtual int dim() const = 0;
  virtual Point forward(const Point& x) const = 0;
  virtual Point inverse(const Point& y) const = 0;
  virtual Box support() const = 0;
  virtual std::string provenance() const = 0;
  // Outside the support the map is x -> outside_A x + outside_b (identity unless overridden).
  virtual std::optional<std::pair<Mat, Point>> outside_affine() const { return std::nullopt; }
  virtual json describe() const;
};

using MapPtr = std::shared_ptr<const SmoothMap>;

namespace smoothmaps {

// Smooth non-decreasing step: 0 for s <= 0, 1 for s >= 1, integrated bump exp(-a/(1-x^2)).
class SmoothStep {
 public:
  static const SmoothStep& instance();
  double operator()(double s) const;
  double derivative(double s) const;
  double second_derivative(double s) const;

 private:
  SmoothStep();
  std::vector<double> v_, d_;
  double h_ = 0.0, z_ = 0.0;
};

// Profile parameter for the bump exp(-a/(1-x^2)) integrated by SmoothStep.
constexpr double kBumpSharpness = 0.2;

struct Cutoff {
  double inner = 0.6;
  double outer = 0.8;
  double sup_derivative = 0.0;  // measured
  int samples = 0;
  double operator()(double t) const;
  double derivative(double t) const;
  double second_derivative(double t) const;
};

// Builds the fixed cutoff and measures sup|phi'| on >= 10^4 points; throws ConstructionError when >= 9.
Cutoff cutoff_phi(int samples = 20001);

// C-infinity bump exp(1 - 1/(1-s^2)) for |s|<1, 0 otherwise (value 1 at s=0).
double bump(double s);

class IdentityMap final : public SmoothMap {
 public:
  explicit IdentityMap(int n) : n_(n) {}
  int dim() const override { return n_; }
  Point forward(const Point& x) const override { return x; }
  Point inverse(const Point& y) const override { return y; }
  Box support() const override;
  std::string provenance() const override { return "identity"; }

 private:
  int n_;
};

class AffineMap final : public SmoothMap {
 public:
  AffineMap(Mat A, Point b, std::string tag = "affine");
  int dim() const override { return static_cast<int>(b_.size()); }
  Point forward(const Point& x) const override { return A_ * x + b_; }
  Point inverse(const Point& y) const override;
  Box support() const override { return Box::everywhere(dim()); }
  std::string provenance() const override { return tag_; }
  const Mat& matrix() const { return A_; }
  const Point& offset() const { return b_; }

 private:
  Mat A_, Ainv_;
  Point b_;
  std::string tag_;
};

MapPtr translation(const Point& v);
// (x_1,...,x_n) -> (x_1,...,1-x_n)
MapPtr reflection(int n);

class LambdaMap final : public SmoothMap {
 public:
  using Fn = std::function<Point(const Point&)>;
  LambdaMap(int n, Fn fwd, Fn inv, Box support, std::string tag);
  int dim() const override { return n_; }
  Point forward(const Point& x) const override { return support_.contains(x) ? fwd_(x) : x; }
  Point inverse(const Point& y) const override { return support_.contains(y) ? inv_(y) : y; }
  Box support() const override { return support_; }
  std::string provenance() const override { return tag_; }

 private:
  int n_;
  Fn fwd_, inv_;
  Box support_;
  std::string tag_;
};

class CompositeMap final : public SmoothMap {
 public:
  // forward applies maps[0] first
  explicit CompositeMap(std::vector<MapPtr> maps);
  int dim() const override;
  Point forward(const Point& x) const override;
  Point inverse(const Point& y) const override;
  Box support() const override;
  std::string provenance() const override { return "compose"; }
  json describe() const override;
  const std::vector<MapPtr>& parts() const { return maps_; }

 private:
  std::vector<MapPtr> maps_;
};

MapPtr compose(std::vector<MapPtr> maps);

// S o map o S^{-1}, S the similarity x -> lo + e x carrying Q onto the target cube.
class ConjugatedMap final : public SmoothMap {
 public:
  ConjugatedMap(MapPtr inner, Point lo, double edge);
  int dim() const override { return inner_->dim(); }
  Point forward(const Point& x) const override;
  Point inverse(const Point& y) const override;
  Box support() const override;
  std::string provenance() const override { return "conjugate(" + inner_->provenance() + ")"; }

 private:
  MapPtr inner_;
  Point lo_;
  double e_;
};

MapPtr conjugate_into_cube(MapPtr map, const AxisCube& target);

struct JacobianResult {
  Mat J;
  bool reduced_order = false;
};

// Central differences; falls back to one-sided differences near the boundary of `domain`.
JacobianResult numeric_jacobian(const SmoothMap& m, const Point& x, double h, const Box& domain);
Mat numeric_jacobian(const std::function<Point(const Point&)>& f, const Point& x, double h);
// Second derivative tensor sup-norm estimate: max_{|u|=|v|=1} |D^2 f(x)[u,v]| approximated on coordinate pairs.
double numeric_hessian_norm(const std::function<Point(const Point&)>& f, const Point& x, double h);

// Time-dependent vector field X(t, x).
using TimeField = std::function<Point(double, const Point&)>;

struct FlowParams {
  int steps = 0;              // 0: choose automatically by step halving
  double halving_tol = 1e-6;  // positions change < tol when halving the step
  int max_steps = 4096;
  int min_steps = 8;
};

// Tabulated vector field on a regular grid over a box; cubic convolution interpolation, zero outside.
class VectorFieldGrid {
 public:
  VectorFieldGrid() = default;
  VectorFieldGrid(Box box, std::vector<int> nodes, int components);
  Point eval(const Point& x) const;
  double& at(const std::vector<int>& idx, int comp);
  double& at_linear(size_t node, int comp) { return data_[node * comps_ + comp]; }
  size_t node_count() const { return data_.size() / std::max(comps_, 1); }
  Point node_position(size_t node) const;
  const Box& box() const { return box_; }
  const std::vector<int>& nodes() const { return nodes_; }
  int components() const { return comps_; }
  const std::vector<double>& data() const { return data_; }
  std::vector<double>& data() { return data_; }
  int order = 3;  // 1 = multilinear, 3 = cubic convolution

 private:
  Box box_;
  std::vector<int> nodes_;
  int comps_ = 0;
  std::vector<double> data_;
  std::vector<double> h_;
};

class FlowMap final : public SmoothMap {
 public:
  FlowMap(int n, TimeField field, Box support, FlowParams params, std::string tag);
  int dim() const override { return n_; }
  Point forward(const Point& x) const override;
  Point inverse(const Point& y) const override;
  Box support() const override { return support_; }
  std::string provenance() const override { return tag_; }
  int steps() const { return steps_; }
  json describe() const override;
  // Choose steps by halving on a probe set.
  void calibrate(const std::vector<Point>& probes);

 private:
  Point integrate(Point x, double t0, double t1, int steps) const;
  int n_;
  TimeField field_;
  Box support_;
  FlowParams params_;
  int steps_;
  std::string tag_;
};

// Time-1 flow of a stationary grid field.
std::shared_ptr<FlowMap> flow_time1(std::shared_ptr<const VectorFieldGrid> field, FlowParams params,
                                    std::vector<Point> probes = {});

// Damped Newton solve of F(x) = y seeded at x0.
Point newton_inverse(const std::function<Point(const Point&)>& F, const Point& y, Point x0, double tol,
                     int max_iter = 60);

}  // namespace smoothmaps
}  // namespace cubeflow
