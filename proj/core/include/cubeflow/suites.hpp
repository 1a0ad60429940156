#pragma once

#include "cubeflow/theorem_map.hpp"

#include <string>
#include <vector>

namespace cubeflow::verify::suites {

// Shared knobs; zero means the per-suite default.
struct SuiteOptions {
  int n = 2;
  int depth = 0;
  long samples = 0;
  std::uint64_t seed = 1;
  int cells = 0;       // moser grid
  double tol = 0.0;    // moser residual
  int addresses = 0;   // approx-diff
  int theorem_k = 2;   // theorem stage included in the measure suite (0: none)
  json to_json() const;
};

const std::vector<std::string>& names();
// Throws std::invalid_argument for an unknown name; "all" runs every suite.
std::vector<Report> run(const std::string& name, const SuiteOptions& o);

// exact alpha / generation measure identities up to max_k
std::vector<Report> sequences(int max_k = 20);
// fraction of points undecided at depth k against the generation measure, k = 1..max_depth
std::vector<Report> cantor(int n, int max_depth, long samples, std::uint64_t seed);
// |Phi_k(x) - Phi_m(x)| <= 2 sqrt(n) alpha_{k-1} for 1 <= k < m <= max_depth
std::vector<Report> cauchy(int n, int max_depth, long samples, std::uint64_t seed);
// benchmark density at `cells` and at twice that
std::vector<Report> moser(int cells, double tol);
// Monte Carlo on 20 rectangles: basic stages 1..depth, optionally F_theorem_k, and the power-map control
std::vector<Report> measure(int n, int depth, long samples, std::uint64_t seed, int theorem_k);
std::vector<Report> change_of_variables(int n, int depth);
std::vector<Report> jacobian_sign(int n, int depth, long samples, std::uint64_t seed);
// carrier difference quotients and approximate-derivative densities at `count` random addresses
std::vector<Report> approx_diff(int count, int depth, std::uint64_t seed);
// surgery on a test ball of a polar twist
std::vector<Report> lemma(long pairs, std::uint64_t seed);
std::vector<Report> theorem(int n, int K_max, std::uint64_t seed);
std::vector<Report> segment_length(int max_depth);

}  // namespace cubeflow::verify::suites
