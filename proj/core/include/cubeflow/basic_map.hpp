#pragma once

#include "cubeflow/moser.hpp"

#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <vector>

namespace cubeflow::basic_map {

struct EvalResult {
  Point value;
  double error_bound = 0.0;  // 0 when resolved
  int resolved_depth = 0;    // generation at which the orbit left the cubes (max_depth when truncated)
  bool truncated = false;
  json to_json() const;
};

struct TowerConfig {
  moser::ExchangeMethod method = moser::ExchangeMethod::ActionAngle;
  int budget = 24;  // deepest generation that may be built
  json to_json() const;
};

// One generation: the exchange used in local coordinates of every generation-(k-1) cube.
struct Stage {
  int k = 0;
  std::shared_ptr<const rearrange::ExchangeMap> layout;  // cube neighbourhoods / pairing
  MapPtr map;                                            // map actually applied (equal to layout unless corrected)
};

class MapTower : public std::enable_shared_from_this<MapTower> {
 public:
  MapTower(int n, int depth, bool mp, TowerConfig cfg = {});
  int dim() const { return n_; }
  bool measure_preserving() const { return mp_; }
  int depth() const { return depth_; }
  const TowerConfig& config() const { return cfg_; }

  // stage k (1-based), built on first use
  const Stage& stage(int k) const;
  // Phi_{max_depth}(x) with the resolution bookkeeping
  EvalResult eval(const Point& x, int max_depth) const;
  EvalResult eval_inverse(const Point& y, int max_depth) const;
  // Phi_k as a map; keeps the tower alive when it is owned by a shared_ptr
  MapPtr stage_map(int k) const;
  json describe() const;

 private:
  EvalResult walk(const Point& x, int max_depth, bool inverse) const;
  int n_, depth_;
  bool mp_;
  TowerConfig cfg_;
  mutable std::mutex mu_;
  mutable std::vector<std::unique_ptr<Stage>> stages_;
};

std::shared_ptr<MapTower> build_tower(int n, int depth, bool mp, TowerConfig cfg = {});

// Exact image of a Cantor point given by an address prefix: the cube of the paired address
// (the point itself is the intersection of the nested cubes).
struct CantorImage {
  CantorAddress address;
  AxisCube enclosure;
  Point value;
};
CantorImage eval_cantor(const CantorAddress& a);

enum class CantorState { In, Out, Undecided };
struct CantorStatus {
  CantorState state = CantorState::Undecided;
  int witness = 0;  // generation that excludes the point when Out
  CantorAddress prefix;
  json to_json() const;
};
CantorStatus cantor_status(const Point& x, int depth);
CantorStatus cantor_status(const CantorAddress& a);
// address prefix of length `depth` when x lies in the closed generation-depth cubes
std::optional<CantorAddress> address_of(const Point& x, int depth);

// K given as a union of closed boxes.
struct Region {
  std::vector<Box> boxes;
};
// Smallest k <= max_k with K disjoint from the generation-k cubes, or 0 if none.
int avoid_depth(const Region& K, int n, int max_k);
// Smallest k with 2 sqrt(n) alpha(k-1) < eps (exact comparison).
int truncation_depth(int n, double eps);

struct Truncation {
  MapPtr map;
  int depth = 0;
  int depth_for_eps = 0;
  int depth_for_region = 0;
};
Truncation smooth_truncate(const MapTower& tower, const Region& K, double eps);

// Difference-quotient estimate of the derivative at the Cantor point of `a` using Cantor points that share
// the first depth+1 digits. Entrywise median over `sample_count` n-tuples.
Mat approximate_derivative_on_A(const MapTower& tower, const CantorAddress& a, int depth, int sample_count,
                                std::uint64_t seed = 1);

// Random address of the given length.
CantorAddress random_address(int n, int length, std::mt19937_64& rng);

}  // namespace cubeflow::basic_map
