#pragma once

#include "cubeflow/smoothmaps.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace cubeflow::cli {

struct RunConfig {
  int n = 2;
  std::vector<int> depths{1, 2, 3};
  int grid_cells = 64;    // export-grid and render resolution
  int moser_cells = 128;  // Moser solver grid
  Tolerances tolerances;
  double solver_tol = 5e-3;
  double tau_mass = 1e-6;
  std::uint64_t seed = 1;
  std::string out_dir = "cubeflow_out";

  json to_json() const;
  static RunConfig from_json(const json& j);
  // throws std::invalid_argument
  void validate() const;
  int max_depth() const;
};

// CUBEFLOW_OUT_DIR, when set, replaces out_dir.
std::string output_dir(const RunConfig& c);

}  // namespace cubeflow::cli
