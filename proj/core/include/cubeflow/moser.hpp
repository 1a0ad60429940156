#pragma once

#include "cubeflow/rearrange.hpp"

#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace cubeflow::moser {

struct MoserConfig {
  int resolution = 0;  // grid cells per unit length; 0: 256 (n=2), 64 (n=3)
  double tau_mass = 1e-6;
  smoothmaps::FlowParams flow{0, 1e-9, 4096, 8};
  double fd_step = 1e-5;  // finite-difference step of residual measurements
  json to_json() const;
  static MoserConfig from_json(const json& j);
  int resolution_for(int n) const;
};

// Prescribed density f on a box. f is sampled on the nodes of a regular grid spanning the box.
struct JacobianProblem {
  Box domain;
  double collar = 0.05;  // f == 1 within this distance of the boundary
  std::vector<Box> protected_regions;
  smoothmaps::VectorFieldGrid f;  // one component
  double tau_mass = 1e-6;

  int dim() const { return domain.dim(); }
  double value(const Point& x) const { return f.eval(x)[0]; }
  // (trapezoid integral of f - 1) / |domain|
  double mass_defect() const;
  // Throws ConstructionError when f <= 0 somewhere, f != 1 on collar/protected nodes or the mass is off.
  void validate() const;
  // Removes the residual mass with a bump supported inside the collar; the defect must be <= tau_mass.
  void renormalize();

  static JacobianProblem from_function(const Box& domain, int cells, double collar,
                                       const std::function<double(const Point&)>& fn);
  // JSON descriptor + binary node grid
  void save(const std::string& json_path, const std::string& grid_path) const;
  static JacobianProblem load(const std::string& json_path);
  json to_json(const std::string& grid_path) const;
};

// f = 1 + 0.3 (bump((x-(0.35,0.5))/rho) - bump((x-(0.65,0.5))/rho)) on [0,1]^2.
double benchmark_density(const Point& x);
JacobianProblem benchmark_problem(int cells);

struct SolveReport {
  int cells = 0;
  double mass_defect = 0;
  double residual = 0;  // max |det D Psi - f| over grid nodes
  int flow_steps = 0;
  double seconds = 0;
  json to_json() const;
};

// Psi with det D Psi = f, identity on the collar and on protected regions. Throws NumericError when the
// measured residual exceeds tol (tol <= 0 skips the check).
MapPtr prescribe_jacobian(const JacobianProblem& p, double tol, const MoserConfig& cfg = {},
                          SolveReport* report = nullptr);

// max over grid nodes of |det D psi(x) - f(x)|
double jacobian_residual(const SmoothMap& psi, const JacobianProblem& p, double fd_step);

// Flow along the level curves of a polar twist that restores unit Jacobian: Phi~ with
// J(Phi~) = J(twist^{-1}). The sector-area function gives the divergence solution in closed form.
class TwistCorrection final : public SmoothMap {
 public:
  TwistCorrection(std::shared_ptr<const PlaneTwist> twist, smoothmaps::FlowParams params);
  int dim() const override { return twist_->dim(); }
  Point forward(const Point& x) const override { return run(x, true); }
  Point inverse(const Point& y) const override { return run(y, false); }
  Box support() const override { return twist_->support(); }
  std::string provenance() const override { return "moser_twist_correction"; }
  json describe() const override;
  int steps() const { return steps_; }

 private:
  Point run(const Point& x, bool fwd) const;
  double integrate(double phi, double theta, double t0, double t1, int steps) const;
  double velocity(double t, double phi, double theta) const;
  double sector(double phi) const;  // cumulative int_0^phi l^2, continuous in phi
  double ell2(double phi) const;
  std::shared_ptr<const PlaneTwist> twist_;
  std::shared_ptr<const PNormTable> table_;
  smoothmaps::FlowParams params_;
  int steps_;
  bool rigid_plateau_ = false;
};

// Prescribed Jacobian on an elliptic annulus {c + A s (cos t, sin t) : s1 <= s <= s2} (n = 2), f == 1 near
// both boundary circles. Solved in the polar chart: angular then radial integration of s (f-1).
struct AnnulusProblem {
  Point center;
  Mat A;
  double s1 = 0.0, s2 = 1.0;
  std::function<double(const Point&)> f;
  int radial_cells = 64, angular_cells = 512;
  json to_json() const;
};

// Flow map with det D = f (forward) on the annulus and identity elsewhere.
class AnnulusFlow final : public SmoothMap {
 public:
  AnnulusFlow(const AnnulusProblem& p, smoothmaps::FlowParams params);
  int dim() const override { return 2; }
  Point forward(const Point& x) const override { return run(x, 0.0, 1.0); }
  Point inverse(const Point& y) const override { return run(y, 1.0, 0.0); }
  Box support() const override;
  std::string provenance() const override { return "moser_annulus"; }
  json describe() const override;
  double mass_defect() const { return mass_defect_; }
  int steps() const { return steps_; }

 private:
  Point run(const Point& x, double t0, double t1) const;
  // chart velocity (ds/dt, dphi/dt)
  Eigen::Vector2d velocity(double t, double s, double phi) const;
  Eigen::Vector2d integrate(Eigen::Vector2d q, double t0, double t1, int steps) const;
  AnnulusProblem p_;
  Mat Ainv_;
  smoothmaps::VectorFieldGrid U_;  // (U^s, U^phi, f-1) on (s, phi) with periodic padding
  double hphi_;
  double mass_defect_ = 0.0;
  smoothmaps::FlowParams params_;
  int steps_;
};

// Phi = Phi~ o Psi with unit Jacobian. Already measure-preserving maps are returned unchanged.
MapPtr mp_correct(MapPtr psi, double tol, const MoserConfig& cfg = {});

enum class ExchangeMethod { ActionAngle, Moser };
ExchangeMethod parse_exchange_method(const std::string& s);
std::string to_string(ExchangeMethod m);

// Measure-preserving exchange of the dyadic cubes of ratio `ratio`.
MapPtr mp_exchange(int n, double ratio, ExchangeMethod method = ExchangeMethod::Moser);

// Max |det D - 1| over `count` quasi-random points of the support.
double sampled_jacobian_defect(const SmoothMap& m, int count, double fd_step);

}  // namespace cubeflow::moser
