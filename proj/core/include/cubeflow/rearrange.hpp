#pragma once

#include "cubeflow/shape.hpp"

#include <memory>
#include <vector>

namespace cubeflow::rearrange {

struct ExchangeSpec {
  int n = 2;
  double ratio = 1.0 / 3.0;  // cube edge / parent edge, < 1/2
  double collar = 0.0;       // identity band at the boundary of Q (default gap/8)
  double margin = 0.0;       // protected neighbourhood around each cube (default gap/8)
  double shell = 0.0;        // width of the twist transition shells (default gap/8)

  double gap() const { return 0.25 - 0.5 * ratio; }
  // Fills defaults and checks the invariants; throws ConstructionError.
  ExchangeSpec resolved() const;
  json to_json() const;
};

ExchangeSpec exchange_spec_for_generation(int n, int k);

// Rigid behaviour of an exchange at a point.
enum class Rigidity { Identity, CenterTurn, Translation, NonRigid };

// L o C: a half-turn of the cube block about the centre of Q followed by half-turns of the
// two horizontal layers; pure translation q_j -> q_{pair(j)} on the cube neighbourhoods.
class ExchangeMap final : public SmoothMap {
 public:
  ExchangeMap(const ExchangeSpec& spec, bool measure_preserving);
  int dim() const override { return spec_.n; }
  Point forward(const Point& x) const override;
  Point inverse(const Point& y) const override;
  Box support() const override;
  std::string provenance() const override { return mp_ ? "mp_exchange" : "exchange_diffeo"; }
  json describe() const override;

  const ExchangeSpec& spec() const { return spec_; }
  bool measure_preserving() const { return mp_; }
  // 1-based index of the cube whose protected neighbourhood contains x, or 0
  int cube_neighbourhood(const Point& x) const;
  Rigidity rigidity(const Point& x, double margin) const;
  // linear part of the map where rigid (identity / half-turn)
  Mat rigid_linear(Rigidity r) const;
  const PlaneTwist& center_twist() const { return *center_; }
  const PlaneTwist& layer_twist(int top) const { return top ? *top_ : *bottom_; }
  std::vector<MapPtr> factors() const { return {center_, layers_}; }

 private:
  ExchangeSpec spec_;
  bool mp_;
  std::shared_ptr<PlaneTwist> center_, top_, bottom_;
  MapPtr layers_;
  double reach_;  // half-width of the protected neighbourhood
};

std::shared_ptr<const ExchangeMap> exchange_diffeo(const ExchangeSpec& spec);
std::shared_ptr<const ExchangeMap> mp_exchange_exact(const ExchangeSpec& spec);

struct CubeTransportSpec {
  Ball source;
  Ellipsoid target;
  std::vector<AxisCube> source_cubes;
  std::vector<AxisCube> target_cubes;
  std::vector<int> assignment;  // source index -> target index
  json to_json() const;
};

// Diffeomorphism of the closed ball onto the ellipsoid: equal to the unit-determinant linear map near the
// boundary, translation near each source cube onto its assigned target cube.
MapPtr ball_ellipsoid_transport(const CubeTransportSpec& spec);

// Target cubes in `natural` position: centre c_E + L (c_j - c_B).
std::vector<AxisCube> natural_targets(const CubeTransportSpec& spec);

// Axis cubes of edge q*shrink centred at the cells c + q*i (i integer) of a grid anchored at the region
// centre whose cells lie fully inside the region. Deterministic lexicographic order.
std::vector<AxisCube> pack_grid_cubes(const Ball& region, double q, double shrink = 0.95);
std::vector<AxisCube> pack_grid_cubes(const Ellipsoid& region, double q, double shrink = 0.95);

// Half-turn twist about a cube centre with square shape inside the cube's grid cell.
std::shared_ptr<PlaneTwist> cube_half_turn(const Point& center, double cell, double cube_edge, int axis_a, int axis_b,
                                           bool measure_preserving = true);

}  // namespace cubeflow::rearrange
