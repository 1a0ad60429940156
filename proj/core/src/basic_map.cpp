#include "cubeflow/basic_map.hpp"

#include <algorithm>
#include <cmath>

namespace cubeflow::basic_map {

json EvalResult::to_json() const {
  return json{{"value", std::vector<double>(value.data(), value.data() + value.size())},
              {"error_bound", error_bound},
              {"resolved_depth", resolved_depth},
              {"truncated", truncated}};
}

json TowerConfig::to_json() const { return json{{"method", moser::to_string(method)}, {"budget", budget}}; }

MapTower::MapTower(int n, int depth, bool mp, TowerConfig cfg) : n_(n), depth_(depth), mp_(mp), cfg_(cfg) {
  if (depth < 1) throw std::invalid_argument("tower: depth must be >= 1");
  if (depth > cfg_.budget) throw ResourceError("tower: depth " + std::to_string(depth) + " exceeds build budget");
  stages_.resize(cfg_.budget + 1);
  for (int k = 1; k <= depth; ++k) stage(k);
}

const Stage& MapTower::stage(int k) const {
  if (k < 1 || k > cfg_.budget) throw ResourceError("tower: stage " + std::to_string(k) + " outside build budget");
  std::lock_guard<std::mutex> lock(mu_);
  if (!stages_[k]) {
    auto st = std::make_unique<Stage>();
    st->k = k;
    rearrange::ExchangeSpec spec;
    spec.n = n_;
    spec.ratio = geometry::edge_ratio_d(k);
    if (!mp_) {
      st->layout = rearrange::exchange_diffeo(spec);
      st->map = st->layout;
    } else if (cfg_.method == moser::ExchangeMethod::ActionAngle) {
      st->layout = rearrange::mp_exchange_exact(spec);
      st->map = st->layout;
    } else {
      st->layout = rearrange::exchange_diffeo(spec);
      st->map = moser::mp_correct(st->layout, 1e-2);
    }
    stages_[k] = std::move(st);
  }
  return *stages_[k];
}

EvalResult MapTower::walk(const Point& x, int max_depth, bool inverse) const {
  const int n = n_;
  EvalResult r;
  Point lo = Point::Zero(n);
  double edge = 1.0;
  Point shift = Point::Zero(n);  // accumulated translations
  for (int k = 1; k <= max_depth; ++k) {
    const double ratio = geometry::edge_ratio_d(k);
    const Point z = (x - lo) / edge;
    // which dyadic cube (closed) or neighbourhood
    int j = 0;
    bool in_cube = true;
    for (int i = 0; i < n; ++i) {
      const int b = z[i] > 0.5 ? 1 : 0;
      j |= b << i;
      in_cube = in_cube && std::abs(z[i] - (b ? 0.75 : 0.25)) <= 0.5 * ratio;
    }
    ++j;
    if (!in_cube) {
      const Stage& st = stage(k);
      const Point w = inverse ? st.map->inverse(z) : st.map->forward(z);
      r.value = lo + shift + edge * w;
      r.resolved_depth = k;
      return r;
    }
    const int jp = geometry::dyadic_pair(n, j);
    shift[n - 1] += edge * (geometry::dyadic_coord(jp, n - 1) - geometry::dyadic_coord(j, n - 1));
    for (int i = 0; i < n; ++i) lo[i] += edge * (geometry::dyadic_coord(j, i) - 0.5 * ratio);
    edge = geometry::alpha_d(k);
  }
  r.value = x + shift;
  r.resolved_depth = max_depth;
  r.truncated = true;
  r.error_bound = std::sqrt(double(n)) * geometry::alpha_d(max_depth);
  return r;
}

EvalResult MapTower::eval(const Point& x, int max_depth) const { return walk(x, max_depth, false); }
EvalResult MapTower::eval_inverse(const Point& y, int max_depth) const { return walk(y, max_depth, true); }

namespace {
class TowerMap final : public SmoothMap {
 public:
  TowerMap(std::shared_ptr<const MapTower> owner, const MapTower* t, int k) : owner_(std::move(owner)), t_(t), k_(k) {}
  int dim() const override { return t_->dim(); }
  Point forward(const Point& x) const override { return inside(x) ? t_->eval(x, k_).value : x; }
  Point inverse(const Point& y) const override { return inside(y) ? t_->eval_inverse(y, k_).value : y; }
  Box support() const override {
    const double c = t_->stage(1).layout->spec().collar;
    return {Point::Constant(dim(), c), Point::Constant(dim(), 1.0 - c)};
  }
  std::string provenance() const override {
    return std::string(t_->measure_preserving() ? "mp_tower(" : "tower(") + std::to_string(k_) + ")";
  }

 private:
  bool inside(const Point& x) const {
    for (int i = 0; i < dim(); ++i)
      if (!(x[i] >= 0.0 && x[i] <= 1.0)) return false;
    return true;
  }
  std::shared_ptr<const MapTower> owner_;
  const MapTower* t_;
  int k_;
};
}  // namespace

MapPtr MapTower::stage_map(int k) const {
  stage(k);
  return std::make_shared<TowerMap>(weak_from_this().lock(), this, k);
}

json MapTower::describe() const {
  json j{{"n", n_}, {"depth", depth_}, {"mp", mp_}, {"config", cfg_.to_json()}};
  j["stages"] = json::array();
  for (int k = 1; k <= depth_; ++k) j["stages"].push_back(stage(k).map->describe());
  return j;
}

std::shared_ptr<MapTower> build_tower(int n, int depth, bool mp, TowerConfig cfg) {
  return std::make_shared<MapTower>(n, depth, mp, cfg);
}

CantorImage eval_cantor(const CantorAddress& a) {
  a.validate();
  CantorImage img;
  img.address = a.paired();
  img.enclosure = geometry::cube_at(img.address, img.address.length());
  img.value = img.enclosure.center_d();
  return img;
}

json CantorStatus::to_json() const {
  static const char* names[] = {"in", "out", "undecided"};
  json j{{"state", names[static_cast<int>(state)]}};
  if (state == CantorState::Out) j["witness"] = witness;
  j["prefix"] = prefix.str();
  return j;
}

std::optional<CantorAddress> address_of(const Point& x, int depth) {
  const int n = static_cast<int>(x.size());
  CantorAddress a;
  a.n = n;
  Point lo = Point::Zero(n);
  double edge = 1.0;
  for (int k = 1; k <= depth; ++k) {
    const double ratio = geometry::edge_ratio_d(k);
    const Point z = (x - lo) / edge;
    int j = 0;
    for (int i = 0; i < n; ++i) {
      const int b = z[i] > 0.5 ? 1 : 0;
      if (std::abs(z[i] - (b ? 0.75 : 0.25)) > 0.5 * ratio) return std::nullopt;
      j |= b << i;
    }
    a.digits.push_back(j + 1);
    for (int i = 0; i < n; ++i) lo[i] += edge * (geometry::dyadic_coord(j + 1, i) - 0.5 * ratio);
    edge = geometry::alpha_d(k);
  }
  return a;
}

CantorStatus cantor_status(const Point& x, int depth) {
  CantorStatus s;
  const int n = static_cast<int>(x.size());
  for (int k = 1; k <= depth; ++k) {
    if (!address_of(x, k)) {
      s.state = CantorState::Out;
      s.witness = k;
      s.prefix = k > 1 ? *address_of(x, k - 1) : CantorAddress{n, {}};
      return s;
    }
  }
  s.state = CantorState::Undecided;
  s.prefix = *address_of(x, depth);
  return s;
}

CantorStatus cantor_status(const CantorAddress& a) {
  a.validate();
  CantorStatus s;
  s.state = CantorState::In;
  s.prefix = a;
  return s;
}

namespace {
bool box_meets(const Box& b, const Point& lo, double edge) {
  for (int i = 0; i < b.dim(); ++i)
    if (b.hi[i] < lo[i] || b.lo[i] > lo[i] + edge) return false;
  return true;
}

// does the box meet a generation-k cube below the cube [lo, lo+edge] of generation g?
bool meets_generation(const Box& b, const Point& lo, double edge, int g, int k) {
  if (!box_meets(b, lo, edge)) return false;
  if (g == k) return true;
  const int n = b.dim();
  const double ratio = geometry::edge_ratio_d(g + 1), child = geometry::alpha_d(g + 1);
  for (int j = 1; j <= (1 << n); ++j) {
    Point c = lo;
    for (int i = 0; i < n; ++i) c[i] += edge * (geometry::dyadic_coord(j, i) - 0.5 * ratio);
    if (meets_generation(b, c, child, g + 1, k)) return true;
  }
  return false;
}
}  // namespace

int avoid_depth(const Region& K, int n, int max_k) {
  for (int k = 1; k <= max_k; ++k) {
    bool hit = false;
    for (auto& b : K.boxes) hit = hit || meets_generation(b, Point::Zero(n), 1.0, 0, k);
    if (!hit) return k;
  }
  return 0;
}

int truncation_depth(int n, double eps) {
  if (!(eps > 0)) throw std::invalid_argument("truncation: eps must be positive");
  const Rational e(eps);
  for (int k = 1; k < 4096; ++k) {
    const Rational a = geometry::alpha(k - 1);
    if (4 * n * a * a < e * e) return k;  // (2 sqrt(n) alpha)^2 < eps^2
  }
  throw ResourceError("truncation: eps too small");
}

Truncation smooth_truncate(const MapTower& tower, const Region& K, double eps) {
  Truncation t;
  t.depth_for_eps = truncation_depth(tower.dim(), eps);
  t.depth_for_region = avoid_depth(K, tower.dim(), tower.config().budget);
  if (t.depth_for_region == 0)
    throw ResourceError("smooth_truncate: region meets the cubes of every buildable generation (budget " +
                        std::to_string(tower.config().budget) + ")");
  t.depth = std::max(t.depth_for_eps, t.depth_for_region);
  if (t.depth > tower.config().budget)
    throw ResourceError("smooth_truncate: required depth " + std::to_string(t.depth) + " exceeds build budget " +
                        std::to_string(tower.config().budget));
  t.map = tower.stage_map(t.depth);
  return t;
}

CantorAddress random_address(int n, int length, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> D(1, 1 << n);
  CantorAddress a;
  a.n = n;
  for (int i = 0; i < length; ++i) a.digits.push_back(D(rng));
  return a;
}

Mat approximate_derivative_on_A(const MapTower& tower, const CantorAddress& a, int depth, int sample_count,
                                std::uint64_t seed) {
  const int n = tower.dim();
  if (depth < 2) throw std::invalid_argument("approximate derivative: depth must be >= 2");
  const int shared = depth + 1;
  const int length = std::min(depth + 12, tower.config().budget);
  if (length <= shared) throw ResourceError("approximate derivative: budget too small for the requested depth");
  if (a.length() < shared) throw std::invalid_argument("approximate derivative: address shorter than depth + 1");
  std::mt19937_64 rng(seed);
  auto extend = [&](const CantorAddress& base) {
    CantorAddress c = base.prefix(shared);
    auto tail = random_address(n, length - shared, rng);
    c.digits.insert(c.digits.end(), tail.digits.begin(), tail.digits.end());
    return c;
  };
  CantorAddress xa = a.length() >= length ? a.prefix(length) : extend(a);
  const Point x = geometry::cantor_point(xa);
  const Point fx = tower.eval(x, length).value;
  std::vector<std::vector<double>> entries(n * n);
  int attempts = 0;
  while (static_cast<int>(entries[0].size()) < sample_count && attempts < 20 * sample_count) {
    ++attempts;
    Mat dX(n, n), dF(n, n);
    for (int c = 0; c < n; ++c) {
      const Point y = geometry::cantor_point(extend(a));
      dX.col(c) = y - x;
      dF.col(c) = tower.eval(y, length).value - fx;
    }
    Eigen::JacobiSVD<Mat> svd(dX);
    const auto sv = svd.singularValues();
    if (sv[n - 1] < 1e-3 * sv[0] || sv[n - 1] == 0.0) continue;
    const Mat D = dF * dX.inverse();
    for (int i = 0; i < n * n; ++i) entries[i].push_back(D(i % n, i / n));
  }
  if (static_cast<int>(entries[0].size()) < sample_count)
    throw ConstructionError("approximate derivative: insufficient distinct sample addresses");
  Mat M(n, n);
  for (int i = 0; i < n * n; ++i) {
    auto& v = entries[i];
    std::nth_element(v.begin(), v.begin() + v.size() / 2, v.end());
    M(i % n, i / n) = v[v.size() / 2];
  }
  return M;
}

}  // namespace cubeflow::basic_map
