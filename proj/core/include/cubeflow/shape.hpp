#pragma once

#include "cubeflow/smoothmaps.hpp"

#include <memory>
#include <vector>

namespace cubeflow {

// Octant area function of the unit p-ball: G(u) = int_0^u (1+v^p)^{-2/p} dv on [0,1].
// Twice the area of the sector of the unit p-ball between angle 0 and atan(u).
class PNormTable {
 public:
  static std::shared_ptr<const PNormTable> get(double p);
  explicit PNormTable(double p);
  double p() const { return p_; }
  double G(double u) const;
  double Ginv(double v) const;
  double G1() const { return g1_; }
  // (|X|^p + |Y|^p)^{1/p}
  double norm(double X, double Y) const;
  // unit-sphere point with minor/major = u: returns major coordinate
  double major_for(double u) const;
  // area of unit p-ball
  double unit_area() const { return 4.0 * g1_; }

 private:
  double p_;
  int N_;
  double h_;
  double g1_;
  std::vector<double> v_, d_;
};

struct TwistSpec {
  int n = 2;
  int axis_a = 0, axis_b = 1;  // rotation plane
  double ca = 0.5, cb = 0.5;   // center in the plane
  double ha = 1.0, hb = 1.0;   // axis scales of the shape
  double p = 2.0;              // even exponent
  double s_in = 0.3, s_out = 0.4;
  double angle = 3.14159265358979323846;
  std::vector<double> mid_center, mid_in, mid_out;  // per coordinate (unused entries for plane axes)
  bool area_angle = true;                            // true: measure preserving action-angle twist

  json to_json() const;
};

// Rotation by angle*(1-step) along nested p-norm level curves in a coordinate plane.
// Rigid rotation by `angle` on {s <= s_in} (times the plateau of the other coordinates), identity for s >= s_out.
class PlaneTwist final : public SmoothMap {
 public:
  explicit PlaneTwist(TwistSpec spec);
  int dim() const override { return spec_.n; }
  Point forward(const Point& x) const override { return apply(x, +1.0); }
  Point inverse(const Point& y) const override { return apply(y, -1.0); }
  Box support() const override;
  std::string provenance() const override { return spec_.area_angle ? "twist(area)" : "twist(polar)"; }
  json describe() const override;
  const TwistSpec& spec() const { return spec_; }

  // shape level s of x
  double level(const Point& x) const;
  // twist fraction in [0,1] (1 on the plateau)
  double amount(const Point& x) const;
  // 0: identity there, 1: rigid rotation there, -1: neither. `margin` shrinks both rigid zones (in x units).
  int classify(const Point& x, double margin) const;

 private:
  Point apply(const Point& x, double sign) const;
  double mid_factor(const Point& x, double margin, bool& zero, bool& one) const;
  TwistSpec spec_;
  std::shared_ptr<const PNormTable> table_;
  double lip_;  // Lipschitz constant of the level function in x units
};

}  // namespace cubeflow
