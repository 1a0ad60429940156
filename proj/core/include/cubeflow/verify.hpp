#pragma once

#include "cubeflow/basic_map.hpp"

#include <cstdint>
#include <functional>
#include <memory>
#include <ostream>
#include <random>
#include <string>
#include <vector>

namespace cubeflow::verify {

struct Report {
  std::string check;
  json statistics = json::object();
  double tolerance = 0.0;
  bool pass = false;
  long samples = 0;
  std::uint64_t seed = 0;
  json config = json::object();
  std::string provenance = "sampled";  // sampled | exact
  json to_json() const;
  static Report from_json(const json& j);
};

// Appends one JSON line per report.
void write_jsonl(std::ostream& os, const Report& r);
// Lines without a "check" key (provenance headers) are skipped.
std::vector<Report> read_jsonl(const std::string& path);

enum class Scheme { Uniform, Sobol, Grid };
Scheme parse_scheme(const std::string& s);
std::string to_string(Scheme s);

// Deterministic point stream in [0,1)^n. Grid emits cell midpoints of a regular grid whose size is fixed by
// `grid_count` (lexicographic, then wraps).
class Sampler {
 public:
  Sampler(int n, std::uint64_t seed, Scheme scheme = Scheme::Uniform, long grid_count = 0);
  // copies start from the beginning of the stream
  Sampler(const Sampler& o);
  Sampler& operator=(const Sampler&) = delete;
  ~Sampler();
  Point next();
  Point next_in(const Box& b);
  // uniform in the ball (rejection from the bounding box)
  Point next_in(const Ball& b);
  std::vector<Point> take(long count);
  void reset();
  int dim() const { return n_; }
  std::uint64_t seed() const { return seed_; }
  Scheme scheme() const { return scheme_; }

 private:
  int n_;
  std::uint64_t seed_;
  Scheme scheme_;
  long grid_count_;
  long index_ = 0;
  int grid_side_ = 1;
  std::mt19937_64 rng_;
  struct SobolState;
  std::unique_ptr<SobolState> sobol_;
};

// max |f - g| + max |f^{-1} - g^{-1}| over the first N points (lower bound of the uniform distance).
double uniform_distance(const SmoothMap& f, const SmoothMap& g, Sampler& s, long N);

// `count` axis boxes inside Q with sides in [0.1, 0.5]
std::vector<Box> random_rectangles(int n, int count, std::uint64_t seed);

// |map(R)| estimated from uniform y in Q through map^{-1}(y) in R, compared with |R| at `sigmas` binomial
// standard deviations.
Report measure_preservation_test(const SmoothMap& map, const std::vector<Box>& regions, Sampler& s, long N,
                                 double sigmas = 3.0);

struct Quadrature {
  int log2_points = 16;  // Sobol points; the refinement check uses twice as many
  double fd_step = 1e-8;
  double refine_tol = 2e-3;
};

// int g |det D map| dx against int g(map^{-1}(y)) dy over Q, relative discrepancy <= tol
Report change_of_variables_test(const SmoothMap& map, const std::function<double(const Point&)>& g,
                                const Quadrature& q = {}, double tol = 1e-2);
double gaussian_bump(const Point& x);

using PointMap = std::function<Point(const Point&)>;

struct ApproxDiffConfig {
  std::vector<double> eps_list{0.1};
  std::vector<double> r_list;  // decreasing radii
  long samples_per_radius = 10000;
  double min_density = 0.9;
  std::uint64_t seed = 1;
  json to_json() const;
};

// Density in B(x, r) of {y : |map(y) - map(x) - L (y - x)| < eps |y - x|}, stratified over shells of equal
// volume. `fx` is map(x) (exact when x is a Cantor point).
double approx_density(const PointMap& map, const Point& x, const Point& fx, const Mat& L, double eps, double r,
                      long samples, std::uint64_t seed);

// Density trajectory per eps; pass when every trajectory is non-decreasing and ends >= min_density. Also the
// nested witness radii r_{k+1} <= r_k / 2^{k/n} with densities against 1 - 2^{-k}.
Report approx_diff_test(const PointMap& map, const Point& x, const Point& fx, const Mat& L,
                        const ApproxDiffConfig& cfg);

// Winding number of map(circle(x, radius)) around map(x) (n = 2); 0 when the adaptive subdivision fails.
int local_degree(const SmoothMap& map, const Point& x, double radius);

struct SignSurvey {
  double fd_step = 1e-7;  // first step; divided by 10 down to min_step until estimates agree
  double min_step = 1e-12;
  double agreement = 0.05;
  double degree_radius = 1e-4;  // first circle of the winding-number fallback (n = 2), grown on failure
  std::function<bool(const Point&)> on_carrier;  // samples for which this is true are skipped
  std::vector<Mat> carrier_estimates;            // difference-quotient derivatives on the carrier
  double carrier_lo = -1.1, carrier_hi = -0.9;
};

// Fraction of positive determinants over N off-carrier samples (points whose estimate never settles count against
// it; at most 100 N draws); carrier estimates must have det in [lo, hi].
Report jacobian_sign_survey(const SmoothMap& map, Sampler& s, long N, const SignSurvey& cfg);

struct SegmentLength {
  int depth = 0;
  double length = 0.0;
  double refined = 0.0;  // length with halved tolerance and doubled seed grid
  bool converged = false;
  long evaluations = 0;
};

struct SegmentConfig {
  int seed_points = 1 << 14;
  double tol = 1e-4;  // subdivide while the polyline gains more than tol * chord
  double min_dt = 1e-11;
  double stability = 1e-2;
};

// Image length of the segment {x : x_i = base_i (i < n-1), x_{n-1} in [0,1]} under Phi_k for k in depths
// (depth 0 is the identity).
std::vector<SegmentLength> segment_image_lengths(const basic_map::MapTower& tower, const Point& base,
                                                 const std::vector<int>& depths, const SegmentConfig& cfg = {});
Report segment_image_length(const basic_map::MapTower& tower, const Point& base, const std::vector<int>& depths,
                            const SegmentConfig& cfg = {});

// Coordinatewise x -> x^exponent: a homeomorphism of Q onto itself, mapping each face onto itself, not measure
// preserving (negative control).
MapPtr power_map(int n, double exponent = 1.5);

}  // namespace cubeflow::verify
