#pragma once

#include "cubeflow/moser.hpp"

#include <memory>
#include <vector>

namespace cubeflow::linearize {

struct NormBundle {
  Ball region;
  double D = 0.0;     // sup |D Phi|
  double Dinv = 0.0;  // sup |(D Phi)^{-1}|
  double D2 = 0.0;    // sup |D^2 Phi|
  double M = 0.0;
  int samples = 0;
  double fd_step = 0.0;
  json to_json() const;
};

// Sampled suprema on the first `samples` points of a fixed quasi-random sequence in the ball
// (nested, so M is non-decreasing in the sample count).
NormBundle measure_norms(const SmoothMap& phi, const Ball& region, int samples, double fd_step = 1e-5);

// 1 / (10 (M+1)^2 2^ell)
double admissible_radius(double M, int ell);

struct Affine {
  Mat A;
  Point b;
  Point operator()(const Point& x) const { return A * x + b; }
};

// Phi~: the tangent map on B(x0, 3r/5), Phi outside B(x0, 4r/5), unit Jacobian in between.
class LinearizedMap final : public SmoothMap {
 public:
  LinearizedMap(MapPtr phi, Point x0, double r, Mat DPhi, std::shared_ptr<const SmoothMap> correction);
  int dim() const override { return phi_->dim(); }
  Point forward(const Point& x) const override;
  Point inverse(const Point& y) const override;
  Box support() const override { return phi_->support(); }
  std::optional<std::pair<Mat, Point>> outside_affine() const override { return phi_->outside_affine(); }
  std::string provenance() const override { return "linearize(" + phi_->provenance() + ")"; }
  json describe() const override;

  // G = T + cutoff(|x - x0|/r) (Phi - T)
  Point glued(const Point& x) const;
  const Affine& tangent() const { return T_; }
  const Point& center() const { return x0_; }
  double radius() const { return r_; }
  bool trivial() const { return !corr_; }

 private:
  MapPtr phi_;
  Point x0_;
  double r_;
  Affine T_;
  Mat Ainv_;
  smoothmaps::Cutoff cut_;
  std::shared_ptr<const SmoothMap> corr_;  // K^{-1}: det = J_G on the source side
};

struct LinearizeOptions {
  int ell = 1;
  double tol = 1e-3;           // allowed |det - 1| of the result
  int injectivity_pairs = 10000;
  double fd_step = 1e-7;
  smoothmaps::FlowParams flow{0, 1e-12, 4096, 8};
  int radial_cells = 96, angular_cells = 256;
};

// Throws std::invalid_argument when r is not admissible, NumericError when the injectivity spot-check fails.
std::shared_ptr<const LinearizedMap> linearize_on_ball(MapPtr phi, const Point& x0, double r, const NormBundle& norms,
                                                       const LinearizeOptions& opt = {});

struct ContainmentReport {
  bool pass = false;
  double center_distance = 0.0;
  double hausdorff = 0.0;
  int samples = 0;
  double tolerance = 0.0;
  json to_json() const;
};

// F(center) = G(center) and the sampled images of the boundary sphere agree (Hausdorff distance <= tol).
ContainmentReport containment_check(const SmoothMap& F, const SmoothMap& G, const Ball& ball, int samples = 2048,
                                    double tol = 1e-9);

// Points of the tangent image of the closed half-ball that fall outside Phi(B) (via Phi^{-1}); count and worst
// normalised radius |Phi^{-1}(T p) - x0| / r.
struct TangentContainment {
  int samples = 0;
  int outside = 0;
  double worst_ratio = 0.0;
};
TangentContainment tangent_containment(const SmoothMap& phi, const LinearizedMap& lin, int samples);

// sup of |D[cutoff (Phi - T)]| over sampled points of the ball (bounded by 10 M r)
double glue_derivative_bound(const LinearizedMap& lin, int samples, double fd_step = 1e-7);

// sampled diameter of Phi~(B)
double image_diameter(const SmoothMap& m, const Ball& ball, int samples);

}  // namespace cubeflow::linearize
