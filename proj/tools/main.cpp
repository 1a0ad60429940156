#include "raster.hpp"
#include "run_config.hpp"

#include "cubeflow/io.hpp"
#include "cubeflow/suites.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using namespace cubeflow;
using cli::RunConfig;

namespace {

constexpr int kFailed = 1;
constexpr int kUsage = 2;

struct Common {
  std::string config_path;
  std::string out;  // explicit output path; empty: default inside the output directory
  RunConfig cfg;
  bool quiet = false;
};

RunConfig load_config(const Common& c) {
  RunConfig r = c.config_path.empty() ? c.cfg : RunConfig::from_json(io::read_json(c.config_path));
  r.validate();
  return r;
}

std::string out_path(const Common& c, const RunConfig& cfg, const std::string& name) {
  if (!c.out.empty()) return c.out;
  const fs::path dir = cli::output_dir(cfg);
  fs::create_directories(dir);
  return (dir / name).string();
}

void ensure_parent(const std::string& path) {
  const fs::path p = fs::path(path).parent_path();
  if (!p.empty()) fs::create_directories(p);
}

std::string provenance_line(const json& config, std::uint64_t seed) {
  const json h = io::provenance_header(config, seed);
  return "cubeflow " + h["version"].get<std::string>() + " config " + h["config_hash"].get<std::string>() + " seed " +
         std::to_string(seed);
}

void emit(const Common& c, const std::string& path, json doc, const json& config, std::uint64_t seed) {
  doc["provenance"] = io::provenance_header(config, seed);
  ensure_parent(path);
  io::write_json(path, doc);
  if (!c.quiet) std::cout << doc.dump(2) << "\n";
}

Point parse_point(const std::string& s, int n) {
  std::vector<double> v;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) v.push_back(std::stod(tok));
  if (static_cast<int>(v.size()) != n) throw std::invalid_argument("--point needs " + std::to_string(n) + " coordinates");
  Point p(n);
  for (int i = 0; i < n; ++i) p[i] = v[i];
  return p;
}

std::vector<double> vec(const Point& p) { return std::vector<double>(p.data(), p.data() + p.size()); }

int summarize(const std::vector<verify::Report>& reports, bool quiet) {
  bool all = true;
  for (auto& r : reports) {
    all = all && r.pass;
    if (!quiet) std::cout << (r.pass ? "PASS " : "FAIL ") << r.check << "\n";
  }
  return all ? 0 : kFailed;
}

// ---------------------------------------------------------------------------------------------------------

int cmd_build_basic(const Common& c, bool raw, const std::string& method) {
  const RunConfig cfg = load_config(c);
  basic_map::TowerConfig tc;
  tc.method = moser::parse_exchange_method(method);
  tc.budget = std::max(24, cfg.max_depth());
  auto tower = basic_map::build_tower(cfg.n, cfg.max_depth(), !raw, tc);
  json doc = tower->describe();
  json stages = json::array();
  for (int d : cfg.depths) stages.push_back({{"depth", d}, {"measure", rational_str(geometry::generation_measure(d, cfg.n))}});
  doc["generation_measures"] = stages;
  json config = cfg.to_json();
  config["raw"] = raw;
  config["method"] = method;
  emit(c, out_path(c, cfg, "basic_tower.json"), doc, config, cfg.seed);
  return 0;
}

int cmd_eval(const Common& c, const std::string& point, const std::string& address, int depth, bool inverse) {
  const RunConfig cfg = load_config(c);
  if (point.empty() == address.empty()) throw std::invalid_argument("eval: give exactly one of --point, --address");
  auto tower = basic_map::build_tower(cfg.n, depth, true);
  json doc;
  json config = cfg.to_json();
  config["depth"] = depth;
  if (!address.empty()) {
    const CantorAddress a = CantorAddress::parse(cfg.n, address);
    const auto img = basic_map::eval_cantor(a);
    const Point x = geometry::cantor_point(a);
    const auto e = tower->eval(x, std::min(depth, a.length()));
    doc = {{"address", a.str()},
           {"image_address", img.address.str()},
           {"point", vec(x)},
           {"value", vec(img.value)},
           {"enclosure", img.enclosure.to_json()},
           {"tower_value", vec(e.value)},
           {"tower_error_bound", e.error_bound},
           {"difference", (e.value - img.value).norm()}};
    config["address"] = address;
  } else {
    const Point x = parse_point(point, cfg.n);
    const auto e = inverse ? tower->eval_inverse(x, depth) : tower->eval(x, depth);
    doc = e.to_json();
    doc["point"] = vec(x);
    doc["inverse"] = inverse;
    doc["carrier"] = basic_map::cantor_status(x, depth).to_json();
    config["point"] = point;
  }
  emit(c, out_path(c, cfg, "eval.json"), doc, config, cfg.seed);
  return 0;
}

int cmd_moser_solve(const Common& c, const std::string& problem, double tol) {
  const RunConfig cfg = load_config(c);
  const moser::JacobianProblem p =
      problem == "benchmark" ? moser::benchmark_problem(cfg.moser_cells) : moser::JacobianProblem::load(problem);
  moser::MoserConfig mc;
  mc.tau_mass = cfg.tau_mass;
  moser::SolveReport rep;
  int code = 0;
  MapPtr psi;
  try {
    psi = moser::prescribe_jacobian(p, tol, mc, &rep);
  } catch (const NumericError& e) {
    std::cerr << e.what() << "\n";
    code = kFailed;
  }
  json config = cfg.to_json();
  config["problem"] = problem;
  config["tol"] = tol;
  const fs::path dir = c.out.empty() ? fs::path(cli::output_dir(cfg)) / "moser_map" : fs::path(c.out);
  fs::create_directories(dir);
  json report = rep.to_json();
  report.erase("seconds");  // keep artifacts byte-identical across runs
  json doc{{"report", report}, {"tol", tol}, {"pass", code == 0}};
  if (psi) {
    // forward values on the problem nodes, n components per node
    const int n = p.dim();
    io::GridFile g;
    for (int d : p.f.nodes()) g.dims.push_back(static_cast<std::uint32_t>(d));
    g.dims.push_back(static_cast<std::uint32_t>(n));
    for (size_t s = 0; s < p.f.node_count(); ++s) {
      const Point y = psi->forward(p.f.node_position(s));
      for (int i = 0; i < n; ++i) g.values.push_back(y[i]);
    }
    io::write_grid((dir / "forward.bin").string(), g);
    doc["map"] = psi->describe();
    doc["forward_grid"] = "forward.bin";
  }
  std::cerr << "residual " << rep.residual << "\n";
  emit(c, (dir / "map.json").string(), doc, config, cfg.seed);
  return code;
}

theorem_map::PipelineConfig pipeline_config(const RunConfig& cfg) {
  theorem_map::PipelineConfig pc;
  pc.n = cfg.n;
  pc.seed = cfg.seed;
  return pc;
}

int cmd_theorem_step(const Common& c, const std::string& in) {
  const RunConfig cfg = load_config(c);
  theorem_map::Stage s = in.empty() ? theorem_map::init_stage(pipeline_config(cfg)) : theorem_map::load_stage(in);
  theorem_map::Stage t;
  try {
    t = theorem_map::advance(s);
  } catch (const ResourceError& e) {
    std::cerr << e.what() << "\n";
    return kFailed;
  }
  const std::string dir = c.out.empty() ? (fs::path(cli::output_dir(cfg)) / ("stage_" + std::to_string(t.k))).string() : c.out;
  theorem_map::save_stage(t, dir);
  if (!c.quiet) {
    for (auto& r : t.checks) std::cout << (r.pass ? "PASS " : "FAIL ") << r.check << "\n";
    std::cout << "stage " << t.k << " saved to " << dir << "\n";
  }
  return t.invariants_hold() ? 0 : kFailed;
}

int cmd_theorem_run(const Common& c, int k_max, bool save) {
  const RunConfig cfg = load_config(c);
  const auto res = theorem_map::run_pipeline(pipeline_config(cfg), k_max);
  json doc{{"error", res.error}, {"decay_ledger", res.decay_ledger()}};
  doc["stages"] = json::array();
  bool ok = res.error.empty();
  for (auto& s : res.stages) {
    doc["stages"].push_back(s.to_json());
    ok = ok && s.invariants_hold();
  }
  doc["pass"] = ok;
  json config = pipeline_config(cfg).to_json();
  config["K_max"] = k_max;
  const std::string path = out_path(c, cfg, "theorem_run.json");
  if (save && !res.stages.empty()) theorem_map::save_stage(res.stages.back(), (fs::path(path).parent_path() / "stage_last").string());
  Common quiet = c;
  quiet.quiet = true;
  emit(quiet, path, doc, config, cfg.seed);
  if (!c.quiet) {
    for (auto& s : res.stages)
      std::cout << "stage " << s.k << ": " << (s.invariants_hold() ? "invariants hold" : "INVARIANT FAILED")
                << ", |C| = " << to_double(s.book.measure_C) << "\n";
    if (!res.error.empty()) std::cout << "aborted: " << res.error << "\n";
  }
  return ok ? 0 : kFailed;
}

int cmd_verify(const Common& c, const std::string& suite, verify::suites::SuiteOptions o) {
  const RunConfig cfg = load_config(c);
  o.n = cfg.n;
  o.seed = cfg.seed;
  const auto reports = verify::suites::run(suite, o);
  const std::string path = out_path(c, cfg, "verify_" + suite + ".jsonl");
  ensure_parent(path);
  std::ofstream os(path);
  json header{{"provenance", io::provenance_header(o.to_json(), o.seed)}, {"suite", suite}};
  os << header.dump() << "\n";
  for (auto& r : reports) verify::write_jsonl(os, r);
  return summarize(reports, c.quiet);
}

int cmd_export_grid(const Common& c, int depth, bool raw) {
  const RunConfig cfg = load_config(c);
  const int n = cfg.n, m = cfg.grid_cells;
  auto tower = basic_map::build_tower(n, depth, !raw);
  auto map = tower->stage_map(depth);
  json config = cfg.to_json();
  config["depth"] = depth;
  config["raw"] = raw;
  const std::string path = out_path(c, cfg, "grid.csv");
  ensure_parent(path);
  std::ofstream os(path);
  os << "# " << provenance_line(config, cfg.seed) << "\n";
  const char* axes[] = {"x", "y", "z"};
  for (int i = 0; i < n; ++i) os << "i" << i << ",";
  for (int i = 0; i < n; ++i) os << axes[i] << ",";
  for (int i = 0; i < n; ++i) os << "f" << axes[i] << (i + 1 < n ? "," : "\n");
  os << std::setprecision(17);
  long total = 1;
  for (int i = 0; i < n; ++i) total *= m + 1;
  std::vector<int> idx(n);
  for (long s = 0; s < total; ++s) {
    long rem = s;
    Point x(n);
    for (int i = 0; i < n; ++i) {
      idx[i] = static_cast<int>(rem % (m + 1));
      rem /= m + 1;
      x[i] = double(idx[i]) / m;
    }
    const Point y = map->forward(x);
    for (int i = 0; i < n; ++i) os << idx[i] << ",";
    for (int i = 0; i < n; ++i) os << x[i] << ",";
    for (int i = 0; i < n; ++i) os << y[i] << (i + 1 < n ? "," : "\n");
  }
  if (!c.quiet) std::cout << "wrote " << total << " nodes to " << path << "\n";
  return 0;
}

int cmd_render(const Common& c, const std::string& field, int depth, int size, bool raw) {
  const RunConfig cfg = load_config(c);
  if (cfg.n != 2) throw std::invalid_argument("render: n = 2 only");
  if (size < 1) throw std::invalid_argument("render: --size must be positive");
  json config = cfg.to_json();
  config["field"] = field;
  config["depth"] = depth;
  config["size"] = size;
  config["raw"] = raw;
  const std::string comment = provenance_line(config, cfg.seed);
  auto pixel = [&](int row, int col) { return make_point({(col + 0.5) / size, 1.0 - (row + 0.5) / size}); };
  if (field == "jacobian") {
    auto tower = basic_map::build_tower(2, depth, !raw);
    auto map = tower->stage_map(depth);
    const Box Q = Box::unit(2);
    // |det| on a log scale, mid grey = 1, black/white = factor 4 below/above
    std::vector<std::uint8_t> gray(static_cast<size_t>(size) * size);
    for (int r = 0; r < size; ++r)
      for (int col = 0; col < size; ++col) {
        const double d = std::abs(smoothmaps::numeric_jacobian(*map, pixel(r, col), 1e-7, Q).J.determinant());
        const double t = std::clamp(0.5 + std::log(std::max(d, 1e-300)) / (2 * std::log(4.0)), 0.0, 1.0);
        gray[static_cast<size_t>(r) * size + col] = static_cast<std::uint8_t>(std::lround(255 * t));
      }
    const std::string path = out_path(c, cfg, "jacobian.pgm");
    ensure_parent(path);
    cli::write_pgm(path, size, size, gray, comment);
    if (!c.quiet) std::cout << "wrote " << path << "\n";
  } else if (field == "carrier") {
    std::vector<std::array<std::uint8_t, 3>> rgb(static_cast<size_t>(size) * size);
    for (int r = 0; r < size; ++r)
      for (int col = 0; col < size; ++col) {
        const auto st = basic_map::cantor_status(pixel(r, col), depth);
        const int reached = st.state == basic_map::CantorState::Out ? st.witness - 1 : depth;
        rgb[static_cast<size_t>(r) * size + col] = cli::depth_colour(reached, depth);
      }
    const std::string path = out_path(c, cfg, "carrier.ppm");
    ensure_parent(path);
    cli::write_ppm(path, size, size, rgb, comment);
    if (!c.quiet) std::cout << "wrote " << path << "\n";
  } else {
    throw std::invalid_argument("render: --field must be jacobian or carrier");
  }
  return 0;
}

int cmd_report(const Common& c, const std::vector<std::string>& inputs) {
  const RunConfig cfg = load_config(c);
  json matrix = json::object();
  long passed = 0, failed = 0;
  json files = json::array();
  for (auto& f : inputs) {
    files.push_back(f);
    for (auto& r : verify::read_jsonl(f)) {
      const std::string key = r.config.value("suite", std::string("unknown")) + "/" + r.check;
      json& row = matrix[key];
      if (row.is_null()) row = {{"pass", 0}, {"fail", 0}};
      row["pass"] = row.value("pass", 0) + (r.pass ? 1 : 0);
      row["fail"] = row.value("fail", 0) + (r.pass ? 0 : 1);
      (r.pass ? passed : failed) += 1;
    }
  }
  json doc{{"inputs", files}, {"matrix", matrix}, {"passed", passed}, {"failed", failed}, {"pass", failed == 0 && passed > 0}};
  emit(c, out_path(c, cfg, "report.json"), doc, json{{"inputs", files}}, cfg.seed);
  return failed == 0 && passed > 0 ? 0 : kFailed;
}

void add_common(CLI::App* app, Common& c, bool with_n = true) {
  app->add_option("--config", c.config_path, "RunConfig JSON (flags below are ignored when given)")->check(CLI::ExistingFile);
  app->add_option("--out", c.out, "output path");
  app->add_option("--seed", c.cfg.seed, "random seed");
  app->add_flag("--quiet", c.quiet, "no stdout summary");
  if (with_n) app->add_option("--n", c.cfg.n, "dimension (2 or 3)")->check(CLI::Range(2, 3));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cubeflow: measure-preserving cube exchanges, Cantor carriers and their verification"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(CUBEFLOW_VERSION));
  Common c;
  std::function<int()> run;

  auto* build = app.add_subcommand("build-basic", "build the basic tower to a depth");
  add_common(build, c);
  int depth = 3;
  bool raw = false;
  std::string method = "action_angle";
  build->add_option("--depth", depth, "tower depth")->check(CLI::Range(1, 24));
  build->add_flag("--raw", raw, "non measure-preserving exchanges");
  build->add_option("--method", method, "action_angle | moser");
  build->callback([&] {
    c.cfg.depths = {depth};
    run = [&] { return cmd_build_basic(c, raw, method); };
  });

  auto* eval = app.add_subcommand("eval", "evaluate the tower at a point or a Cantor address");
  add_common(eval, c);
  std::string point, address;
  bool inverse = false;
  eval->add_option("--point", point, "comma separated coordinates");
  eval->add_option("--address", address, "comma separated digits in 1..2^n");
  eval->add_option("--depth", depth, "evaluation depth")->check(CLI::Range(1, 24));
  eval->add_flag("--inverse", inverse, "evaluate the inverse");
  eval->callback([&] { run = [&] { return cmd_eval(c, point, address, depth, inverse); }; });

  auto* ms = app.add_subcommand("moser-solve", "solve a prescribed-Jacobian problem");
  add_common(ms, c, false);
  std::string problem;
  double tol = 5e-3;
  ms->add_option("problem", problem, "problem JSON, or 'benchmark'")->required();
  ms->add_option("--tol", tol, "residual tolerance")->check(CLI::PositiveNumber);
  ms->add_option("--cells", c.cfg.moser_cells, "grid cells of the benchmark problem");
  ms->callback([&] { run = [&] { return cmd_moser_solve(c, problem, tol); }; });

  auto* ts = app.add_subcommand("theorem-step", "advance a persisted stage by one step");
  add_common(ts, c);
  std::string in;
  ts->add_option("--in", in, "stage directory (default: start from the basic map)");
  ts->callback([&] { run = [&] { return cmd_theorem_step(c, in); }; });

  auto* tr = app.add_subcommand("theorem-run", "run the stage pipeline");
  add_common(tr, c);
  int k_max = 2;
  bool save = false;
  tr->add_option("--kmax", k_max, "number of stages")->check(CLI::Range(1, 8));
  tr->add_flag("--save", save, "persist the last stage next to the report");
  tr->callback([&] { run = [&] { return cmd_theorem_run(c, k_max, save); }; });

  auto* vf = app.add_subcommand("verify", "run a named verification suite");
  add_common(vf, c);
  std::string suite;
  verify::suites::SuiteOptions so;
  std::vector<std::string> suite_choices = verify::suites::names();
  suite_choices.push_back("all");
  vf->add_option("suite", suite, "suite name")->required()->check(CLI::IsMember(suite_choices));
  vf->add_option("--depth", so.depth, "depth / stage count (0: suite default)");
  vf->add_option("--samples", so.samples, "sample count (0: suite default)");
  vf->add_option("--cells", so.cells, "moser grid cells (0: 128)");
  vf->add_option("--tol", so.tol, "moser residual tolerance (0: 5e-3)");
  vf->add_option("--addresses", so.addresses, "approx-diff addresses (0: 100)");
  vf->add_option("--theorem-k", so.theorem_k, "theorem stage in the measure suite (0: none)");
  vf->callback([&] { run = [&] { return cmd_verify(c, suite, so); }; });

  auto* eg = app.add_subcommand("export-grid", "CSV of a deformed grid");
  add_common(eg, c);
  eg->add_option("--depth", depth, "stage")->check(CLI::Range(1, 24));
  eg->add_option("--cells", c.cfg.grid_cells, "grid cells per axis")->check(CLI::PositiveNumber);
  eg->add_flag("--raw", raw, "non measure-preserving tower");
  eg->callback([&] { run = [&] { return cmd_export_grid(c, depth, raw); }; });

  auto* rd = app.add_subcommand("render", "PGM of |det J| or PPM of carrier depth");
  add_common(rd, c);
  std::string field = "carrier";
  int size = 512;
  rd->add_option("--field", field, "jacobian | carrier")->check(CLI::IsMember({"jacobian", "carrier"}));
  rd->add_option("--depth", depth, "stage / carrier depth")->check(CLI::Range(1, 24));
  rd->add_option("--size", size, "pixels per side")->check(CLI::Range(1, 8192));
  rd->add_flag("--raw", raw, "non measure-preserving tower");
  rd->callback([&] { run = [&] { return cmd_render(c, field, depth, size, raw); }; });

  auto* rp = app.add_subcommand("report", "aggregate verify outputs");
  add_common(rp, c, false);
  std::vector<std::string> inputs;
  rp->add_option("inputs", inputs, "JSON-lines files from verify")->required()->check(CLI::ExistingFile);
  rp->callback([&] { run = [&] { return cmd_report(c, inputs); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kUsage;
  }
  try {
    return run();
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailed;
  }
}
