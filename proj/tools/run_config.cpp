#include "run_config.hpp"

#include <algorithm>
#include <cstdlib>
#include <stdexcept>

namespace cubeflow::cli {

json RunConfig::to_json() const {
  return json{{"n", n},
              {"depths", depths},
              {"grid_cells", grid_cells},
              {"moser_cells", moser_cells},
              {"tolerances", tolerances.to_json()},
              {"solver_tol", solver_tol},
              {"tau_mass", tau_mass},
              {"seed", seed},
              {"out_dir", out_dir}};
}

RunConfig RunConfig::from_json(const json& j) {
  RunConfig c;
  c.n = j.value("n", c.n);
  c.depths = j.value("depths", c.depths);
  c.grid_cells = j.value("grid_cells", c.grid_cells);
  c.moser_cells = j.value("moser_cells", c.moser_cells);
  if (j.contains("tolerances")) c.tolerances = Tolerances::from_json(j.at("tolerances"));
  c.solver_tol = j.value("solver_tol", c.solver_tol);
  c.tau_mass = j.value("tau_mass", c.tau_mass);
  c.seed = j.value("seed", c.seed);
  c.out_dir = j.value("out_dir", c.out_dir);
  c.validate();
  return c;
}

void RunConfig::validate() const {
  if (n < 2 || n > 3) throw std::invalid_argument("config: n must be 2 or 3");
  if (depths.empty()) throw std::invalid_argument("config: depths is empty");
  for (int d : depths)
    if (d < 1 || d > 24) throw std::invalid_argument("config: depths must lie in [1, 24]");
  if (grid_cells < 1 || moser_cells < 4) throw std::invalid_argument("config: grid resolutions too small");
  if (!(tolerances.tau_inv > 0 && tolerances.tau_inv_flow > 0 && tolerances.tau_inj > 0 && solver_tol > 0 && tau_mass > 0))
    throw std::invalid_argument("config: tolerances must be positive");
  if (out_dir.empty()) throw std::invalid_argument("config: out_dir is empty");
}

int RunConfig::max_depth() const { return *std::max_element(depths.begin(), depths.end()); }

std::string output_dir(const RunConfig& c) {
  if (const char* env = std::getenv("CUBEFLOW_OUT_DIR"); env && *env) return env;
  return c.out_dir;
}

}  // namespace cubeflow::cli
