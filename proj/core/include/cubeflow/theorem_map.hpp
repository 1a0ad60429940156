#pragma once

#include "cubeflow/linearize.hpp"
#include "cubeflow/verify.hpp"

#include <cstdint>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

namespace cubeflow::theorem_map {

struct PipelineConfig {
  int n = 2;
  int eval_depth = 20;            // generations of the basic tower used for F_1 and for every glued copy
  double radius_fraction = 0.99;  // ball radius as a fraction of the admissible radius
  double lattice_slack = 0.02;    // hexagonal lattice spacing 2r(1 + slack)
  int cube_cells = 3;             // grid cells across the half-ball radius
  double cube_shrink = 0.9;       // cube edge / grid cell
  long omega_samples = 200000;
  long norm_samples = 2000;
  long check_samples = 100000;
  std::uint64_t seed = 1;
  json to_json() const;
  static PipelineConfig from_json(const json& j);
};

// Half-ball D = B(center, radius/2) of a surgery ball, with T(x) = A x + b the value of F_k on B.
struct BallSurgery {
  Point center;
  double radius = 0.0;
  Mat A;
  Point b;
  Point image_center() const { return A * center + b; }
};

// Q_{ki}^j: a grid cube inside D_ki, translated rigidly by F''_k.
struct CubePiece {
  Point lo;
  double edge = 0.0;
  Point shift;
  bool contains(const Point& x) const;
};

class BallIndex {
 public:
  BallIndex() = default;
  BallIndex(int n, double cell) : n_(n), cell_(cell) {}
  void insert(const Point& c, double radius, int id);
  const std::vector<int>* candidates(const Point& x) const;

 private:
  std::uint64_t key(const Point& x, const int* offset) const;
  int n_ = 0;
  double cell_ = 1.0;
  std::unordered_map<std::uint64_t, std::vector<int>> buckets_;
};

// Surgeries of one step k (producing F_{k+1} from F_k).
struct Layer {
  int k = 0;
  double radius = 0.0;
  double M = 0.0;
  double cell = 0.0;
  double shrink = 0.0;
  Rational cube_half_edge;
  std::vector<BallSurgery> balls;
  std::vector<MapPtr> transports;           // F''_k on D_i
  std::vector<std::vector<CubePiece>> cubes;  // per ball
  BallIndex source_index, image_index;

  long cube_count() const;
  // 1-based (ball, cube) containing x, cube = 0 when x is in D but in no cube; ball = 0 when outside every D
  std::pair<int, int> locate(const Point& x) const;
  int locate_image(const Point& y) const;
};

// F_k: the basic tower with the glued surgeries of every completed step.
class StageMap final : public SmoothMap {
 public:
  StageMap(std::shared_ptr<const basic_map::MapTower> tower, std::vector<std::shared_ptr<const Layer>> layers,
           int depth, bool glue_last = true);
  int dim() const override { return tower_->dim(); }
  Point forward(const Point& x) const override;
  Point inverse(const Point& y) const override;
  Box support() const override { return Box::unit(dim()); }
  std::string provenance() const override;
  json describe() const override;

 private:
  std::shared_ptr<const basic_map::MapTower> tower_;
  std::vector<std::shared_ptr<const Layer>> layers_;
  int depth_;
  bool glue_last_;
};

struct Bookkeeping {
  Rational measure_C;  // |C_k|
  Rational measure_E;  // |E_k| (0 for k = 1)
  double omega_measure = 0.0;
  double ball_measure = 0.0;
  double half_ball_measure = 0.0;
  Rational cube_measure;
  double M = 0.0;
  double radius = 0.0;
  double admissible_radius = 0.0;
  long balls = 0;
  long cubes = 0;
  double distance_sampled = 0.0;  // sampled d(F_{k-1}, F_k)
  double distance_bound = 0.0;    // structural bound on d(F_{k-1}, F_k)
  json to_json() const;
  static Bookkeeping from_json(const json& j);
};

// A Cantor carrier piece: lo + edge * A, where F_k acts as x -> reflection-in-cube + shift.
struct CarrierPiece {
  int stage = 1;
  Point lo;
  double edge = 1.0;
  Point shift;
};

struct Stage {
  int k = 1;
  PipelineConfig cfg;
  std::shared_ptr<const basic_map::MapTower> tower;
  std::vector<std::shared_ptr<const Layer>> layers;  // k - 1 layers
  std::shared_ptr<const StageMap> F;
  Bookkeeping book;
  std::vector<verify::Report> checks;

  int dim() const { return cfg.n; }
  Rational complement_measure() const { return Rational(1) - book.measure_C; }
  // undecided at `depth` in A or in one of the glued copies
  bool on_carrier(const Point& x, int depth) const;
  std::vector<CarrierPiece> carriers() const;
  bool invariants_hold() const;
  json to_json() const;
};

Stage init_stage(const PipelineConfig& cfg);

struct LinearizeResult {
  std::vector<BallSurgery> balls;
  linearize::NormBundle norms;
  double radius = 0.0;
  double admissible = 0.0;
  double omega_measure = 0.0;
  double ball_measure = 0.0;
  std::vector<verify::Report> checks;
};

// Omega_k: points of Q off the closed generation-1 cubes and off every earlier half-ball where F_k is rigid.
// Balls on a hexagonal lattice at radius_fraction of the admissible radius. Throws ResourceError when the
// measure bounds are not reached.
LinearizeResult step_linearize(const Stage& s);

struct RearrangeResult {
  std::shared_ptr<Layer> layer;
  std::shared_ptr<const StageMap> F_second;  // F''_k (no glued towers)
  std::vector<verify::Report> checks;
};
RearrangeResult step_rearrange(const Stage& s, const LinearizeResult& lin);

Stage step_glue(const Stage& s, const RearrangeResult& r);

// Steps 1-3 with the stage invariants checked.
Stage advance(const Stage& s);

struct PipelineResult {
  std::vector<Stage> stages;
  std::string error;  // set when a step aborted; stages holds the partial result
  json decay_ledger() const;
};
PipelineResult run_pipeline(const PipelineConfig& cfg, int K_max);

// Stage directory: stage.json plus one binary grid per layer (ball centres, tangent maps).
void save_stage(const Stage& s, const std::string& dir);
Stage load_stage(const std::string& dir);

// Difference-quotient derivative of F at the Cantor point of `a` inside a carrier piece (entrywise median).
Mat carrier_derivative(const SmoothMap& F, const CarrierPiece& piece, const CantorAddress& a, int depth,
                       int samples, std::uint64_t seed);

}  // namespace cubeflow::theorem_map
