// steposc: experiment runner for the step oscillator.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "steposc/classical.hpp"
#include "steposc/io.hpp"
#include "steposc/schrodinger.hpp"
#include "steposc/semiclassics.hpp"
#include "steposc/spectral_stats.hpp"
#include "steposc/wavefn.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace steposc;

namespace {

constexpr const char* kVersion = "1.0.0";

// ---------------------------------------------------------------------------
// Configuration

struct Table {
  double center = 0.0;
  std::vector<double> offsets, values;
};

struct Config {
  double omega1 = 1.0, omega2 = std::sqrt(2.0), eps1 = 0.0, eps2 = 0.0;
  std::optional<Table> table1, table2;
  std::vector<std::array<double, 2>> sweep;

  double q1_wall = 0.0, q2_wall = 0.0;
  std::string step_mode = "excluded-nodes";

  double ppw = 8.0, confinement = 1.8, memory_budget_gb = 3.0;

  int levels = 100;
  double tol = 1e-8;
  int max_restarts = 40, slice_size = 60;
  bool store_vectors = true;

  double E1 = 5.625, E2 = 5.5, theta1 = 0.3, theta2 = 0.7, horizon = 200.0, sample_dt = 0.05;

  std::string unfold = "mean-spacing";
  int poly_degree = 3;
  double trim_fraction = 0.1;
  bool collapse = false;
  double collapse_tol = 1e-6, degeneracy_tol = 1e-6, threshold = 0.7;
  std::optional<std::array<int, 2>> window;

  std::vector<int> mix_N{151, 301};
  int mix_dN = 10, mix_J = 400, E_ref_index = 301;
  double mix_delta = 0.01, eps_ratio = 0.5;
  std::vector<double> x_scaled{0.25, 0.5, 1.0, 2.0};

  std::uint64_t seed = 20240611;
};

class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_.empty() ? "<root>" : path_, "expected an object");
  }
  std::string at(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  bool has(const std::string& key) const { return j_.contains(key) && !j_[key].is_null(); }
  const json& raw(const std::string& key) const { return j_[key]; }
  void only(std::initializer_list<const char*> keys) const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      bool ok = false;
      for (const char* k : keys) ok = ok || it.key() == k;
      if (!ok) throw ConfigError(at(it.key()), "unknown key");
    }
  }
  void num(const std::string& key, double& out, double lo = -1e300, double hi = 1e300) const {
    if (!has(key)) return;
    if (!j_[key].is_number()) throw ConfigError(at(key), "expected a number");
    const double v = j_[key].get<double>();
    if (!(v >= lo && v <= hi)) {
      throw ConfigError(at(key), "value " + io::num(v) + " outside [" + io::num(lo) + ", " + io::num(hi) + "]");
    }
    out = v;
  }
  void integer(const std::string& key, int& out, int lo, int hi) const {
    if (!has(key)) return;
    if (!j_[key].is_number_integer()) throw ConfigError(at(key), "expected an integer");
    const long v = j_[key].get<long>();
    if (v < lo || v > hi) throw ConfigError(at(key), "value outside [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
    out = static_cast<int>(v);
  }
  void boolean(const std::string& key, bool& out) const {
    if (!has(key)) return;
    if (!j_[key].is_boolean()) throw ConfigError(at(key), "expected true or false");
    out = j_[key].get<bool>();
  }
  void choice(const std::string& key, std::string& out, std::initializer_list<const char*> allowed) const {
    if (!has(key)) return;
    if (!j_[key].is_string()) throw ConfigError(at(key), "expected a string");
    const auto v = j_[key].get<std::string>();
    std::string list;
    for (const char* a : allowed) {
      if (v == a) {
        out = v;
        return;
      }
      list += std::string(list.empty() ? "" : ", ") + a;
    }
    throw ConfigError(at(key), "'" + v + "' is not one of {" + list + "}");
  }
  std::vector<double> numbers(const std::string& key) const {
    if (!j_[key].is_array()) throw ConfigError(at(key), "expected an array of numbers");
    std::vector<double> out;
    for (std::size_t i = 0; i < j_[key].size(); ++i) {
      if (!j_[key][i].is_number()) throw ConfigError(at(key) + "[" + std::to_string(i) + "]", "expected a number");
      out.push_back(j_[key][i].get<double>());
    }
    return out;
  }
  Reader sub(const std::string& key) const { return Reader(j_[key], at(key)); }

 private:
  const json& j_;
  std::string path_;
};

Table read_table(const Reader& r) {
  r.only({"center", "offsets", "values"});
  Table t;
  r.num("center", t.center);
  if (!r.has("offsets") || !r.has("values")) throw ConfigError(r.at("offsets"), "tabulated potential needs offsets and values");
  t.offsets = r.numbers("offsets");
  t.values = r.numbers("values");
  try {
    (void)Potential::tabulated_even(t.center, t.offsets, t.values);
  } catch (const DomainError& e) {
    throw ConfigError(r.at("values"), e.what());
  }
  return t;
}

Config parse_config(const json& root) {
  Config c;
  Reader r(root, "");
  r.only({"potentials", "step", "grid", "solver", "classical", "analysis", "seed"});
  if (r.has("potentials")) {
    auto p = r.sub("potentials");
    p.only({"omega1", "omega2", "eps1", "eps2", "table1", "table2", "sweep"});
    p.num("omega1", c.omega1, 1e-6, 1e6);
    p.num("omega2", c.omega2, 1e-6, 1e6);
    p.num("eps1", c.eps1);
    p.num("eps2", c.eps2);
    if (p.has("table1")) c.table1 = read_table(p.sub("table1"));
    if (p.has("table2")) c.table2 = read_table(p.sub("table2"));
    if (p.has("sweep")) {
      const auto& s = p.raw("sweep");
      if (!s.is_array()) throw ConfigError(p.at("sweep"), "expected an array of [eps1, eps2] pairs");
      for (std::size_t i = 0; i < s.size(); ++i) {
        const auto path = p.at("sweep") + "[" + std::to_string(i) + "]";
        if (!s[i].is_array() || s[i].size() != 2 || !s[i][0].is_number() || !s[i][1].is_number()) {
          throw ConfigError(path, "expected [eps1, eps2]");
        }
        c.sweep.push_back({s[i][0].get<double>(), s[i][1].get<double>()});
      }
    }
  }
  if (r.has("step")) {
    auto s = r.sub("step");
    s.only({"q1_wall", "q2_wall", "mode"});
    s.num("q1_wall", c.q1_wall, -1e6, 0.0);
    s.num("q2_wall", c.q2_wall, -1e6, 0.0);
    s.choice("mode", c.step_mode, {"excluded-nodes", "penalty", "none"});
  }
  if (r.has("grid")) {
    auto g = r.sub("grid");
    g.only({"points_per_wavelength", "confinement", "memory_budget_gb"});
    g.num("points_per_wavelength", c.ppw, 4.0, 1e3);
    g.num("confinement", c.confinement, 1.0 + 1e-9, 100.0);
    g.num("memory_budget_gb", c.memory_budget_gb, 1e-3, 1e4);
  }
  if (r.has("solver")) {
    auto s = r.sub("solver");
    s.only({"levels", "tol", "max_restarts", "slice_size", "store_vectors"});
    s.integer("levels", c.levels, 1, 1000000);
    s.num("tol", c.tol, 1e-15, 1e-2);
    s.integer("max_restarts", c.max_restarts, 1, 100000);
    s.integer("slice_size", c.slice_size, 4, 100000);
    s.boolean("store_vectors", c.store_vectors);
  }
  if (r.has("classical")) {
    auto s = r.sub("classical");
    s.only({"E1", "E2", "theta1", "theta2", "horizon", "sample_dt"});
    s.num("E1", c.E1);
    s.num("E2", c.E2);
    s.num("theta1", c.theta1, -10.0, 10.0);
    s.num("theta2", c.theta2, -10.0, 10.0);
    s.num("horizon", c.horizon, 0.0, 1e7);
    s.num("sample_dt", c.sample_dt, 0.0, 1e7);
  }
  if (r.has("analysis")) {
    auto a = r.sub("analysis");
    a.only({"unfold", "poly_degree", "trim_fraction", "collapse", "collapse_tol", "degeneracy_tol", "threshold",
            "window", "mixing"});
    a.choice("unfold", c.unfold, {"mean-spacing", "weyl", "polynomial"});
    a.integer("poly_degree", c.poly_degree, 1, 12);
    a.num("trim_fraction", c.trim_fraction, 0.0, 0.9);
    a.boolean("collapse", c.collapse);
    a.num("collapse_tol", c.collapse_tol, 0.0, 1.0);
    a.num("degeneracy_tol", c.degeneracy_tol, 0.0, 1e6);
    a.num("threshold", c.threshold, 0.0, 10.0);
    if (a.has("window")) {
      const auto w = a.numbers("window");
      if (w.size() != 2 || w[0] < 1 || w[1] < w[0] || w[0] != std::floor(w[0]) || w[1] != std::floor(w[1])) {
        throw ConfigError(a.at("window"), "expected [first, last] 1-based level indices with first <= last");
      }
      c.window = std::array<int, 2>{static_cast<int>(w[0]), static_cast<int>(w[1])};
    }
    if (a.has("mixing")) {
      auto m = a.sub("mixing");
      m.only({"N", "dN", "J", "delta", "x_scaled", "E_ref_index", "eps_ratio"});
      if (m.has("N")) {
        c.mix_N.clear();
        for (double v : m.numbers("N")) {
          if (v < 1 || v != std::floor(v)) throw ConfigError(m.at("N"), "level indices must be positive integers");
          c.mix_N.push_back(static_cast<int>(v));
        }
      }
      m.integer("dN", c.mix_dN, 0, 100000);
      m.integer("J", c.mix_J, 1, 1000000);
      m.integer("E_ref_index", c.E_ref_index, 1, 1000000);
      m.num("delta", c.mix_delta, 0.0, 1.0);
      m.num("eps_ratio", c.eps_ratio);
      if (m.has("x_scaled")) c.x_scaled = m.numbers("x_scaled");
    }
  }
  if (r.has("seed")) {
    if (!root["seed"].is_number_unsigned()) throw ConfigError("seed", "expected a nonnegative integer");
    c.seed = root["seed"].get<std::uint64_t>();
  }
  return c;
}

json table_json(const std::optional<Table>& t) {
  if (!t) return nullptr;
  return json{{"center", t->center}, {"offsets", t->offsets}, {"values", t->values}};
}

/// Every field, defaults included, so the manifest records exactly what ran.
json config_json(const Config& c) {
  json sweep = json::array();
  for (const auto& e : c.sweep) sweep.push_back({e[0], e[1]});
  json window = c.window ? json{(*c.window)[0], (*c.window)[1]} : json(nullptr);
  return json{
      {"potentials",
       {{"omega1", c.omega1}, {"omega2", c.omega2}, {"eps1", c.eps1}, {"eps2", c.eps2},
        {"table1", table_json(c.table1)}, {"table2", table_json(c.table2)}, {"sweep", sweep}}},
      {"step", {{"q1_wall", c.q1_wall}, {"q2_wall", c.q2_wall}, {"mode", c.step_mode}}},
      {"grid",
       {{"points_per_wavelength", c.ppw}, {"confinement", c.confinement}, {"memory_budget_gb", c.memory_budget_gb}}},
      {"solver",
       {{"levels", c.levels}, {"tol", c.tol}, {"max_restarts", c.max_restarts}, {"slice_size", c.slice_size},
        {"store_vectors", c.store_vectors}}},
      {"classical",
       {{"E1", c.E1}, {"E2", c.E2}, {"theta1", c.theta1}, {"theta2", c.theta2}, {"horizon", c.horizon},
        {"sample_dt", c.sample_dt}}},
      {"analysis",
       {{"unfold", c.unfold}, {"poly_degree", c.poly_degree}, {"trim_fraction", c.trim_fraction},
        {"collapse", c.collapse}, {"collapse_tol", c.collapse_tol}, {"degeneracy_tol", c.degeneracy_tol},
        {"threshold", c.threshold}, {"window", window},
        {"mixing",
         {{"N", c.mix_N}, {"dN", c.mix_dN}, {"J", c.mix_J}, {"delta", c.mix_delta}, {"x_scaled", c.x_scaled},
          {"E_ref_index", c.E_ref_index}, {"eps_ratio", c.eps_ratio}}}}},
      {"seed", c.seed}};
}

// ---------------------------------------------------------------------------
// Model construction

Potential axis_potential(double omega, double eps, const std::optional<Table>& t) {
  if (t) return Potential::tabulated_even(t->center, t->offsets, t->values);
  return Potential::harmonic(omega, eps);
}

Potential pot1(const Config& c, double eps) { return axis_potential(c.omega1, eps, c.table1); }
Potential pot2(const Config& c, double eps) { return axis_potential(c.omega2, eps, c.table2); }

/// Without a step the walls move far outside any grid.
StepRegion step_of(const Config& c) {
  if (c.step_mode == "none") return StepRegion(-1e30, -1e30);
  return StepRegion(c.q1_wall, c.q2_wall);
}

/// Walls anchor the grid lines even when the step is switched off.
StepRegion anchor_of(const Config& c) { return StepRegion(c.q1_wall, c.q2_wall); }

fd::StepMode mode_of(const Config& c) {
  return c.step_mode == "penalty" ? fd::StepMode::penalty : fd::StepMode::excluded_nodes;
}

fd::EigenOptions eigen_of(const Config& c) {
  fd::EigenOptions o;
  o.tol = c.tol;
  o.max_restarts = c.max_restarts;
  o.slice_size = c.slice_size;
  o.seed = c.seed;
  return o;
}

fd::GridOptions grid_of(const Config& c, int levels) {
  fd::GridOptions g;
  g.points_per_wavelength = c.ppw;
  g.confinement = c.confinement;
  g.levels = levels;
  g.memory_budget_bytes = c.memory_budget_gb * 1e9;
  return g;
}

/// Scale s and m such that (omega1, omega2) = s (1, 1/m) up to an axis swap.
std::optional<std::pair<int, double>> resonance(const Config& c) {
  if (c.table1 || c.table2) return std::nullopt;
  const double r = c.omega2 / c.omega1;
  for (int m = 1; m <= 64; ++m) {
    if (std::abs(r - m) < 1e-12 * m) return std::make_pair(m, c.omega1 * m);
    if (std::abs(r - 1.0 / m) < 1e-12) return std::make_pair(m, c.omega1);
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Run bookkeeping

struct Run {
  fs::path out;
  json config;
  json timings = json::object();
  std::string command;

  void time(const std::string& key, double seconds) { timings[key] = seconds; }

  void write_manifest() const {
    json files = json::array();
    std::vector<fs::path> paths;
    for (const auto& e : fs::recursive_directory_iterator(out)) {
      if (e.is_regular_file() && e.path().filename() != io::kManifestName) paths.push_back(e.path());
    }
    std::sort(paths.begin(), paths.end());
    for (const auto& p : paths) {
      files.push_back({{"name", fs::relative(p, out).generic_string()},
                       {"sha256", io::sha256_file(p)},
                       {"bytes", fs::file_size(p)}});
    }
    json m{{"command", command},
           {"config_sha256", io::sha256_hex(config.dump())},
           {"config", config},
           {"module_versions",
            {{"classical_dynamics", kVersion}, {"semiclassics", kVersion}, {"schrodinger", kVersion},
             {"spectral_stats", kVersion}, {"wavefn_analysis", kVersion}, {"cli", kVersion}}},
           {"timings", timings},
           {"files", files}};
    auto f = io::open_out(out / io::kManifestName);
    f << m.dump(2) << '\n';
  }
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void write_json(const fs::path& p, const json& j) {
  auto f = io::open_out(p);
  f << j.dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// classical

void cmd_classical(const Config& c, Run& run) {
  const auto v1 = pot1(c, c.eps1), v2 = pot2(c, c.eps2);
  const auto step = step_of(c);
  auto start_axis = [](const Potential& v, double E, double theta, const char* path) {
    if (!(E > v.minimum())) throw ConfigError(path, "energy must exceed the potential minimum");
    if (v.is_harmonic()) {
      const double a = v.half_width(E);
      return std::make_pair(v.center() + a * std::cos(theta), -v.omega() * a * std::sin(theta));
    }
    if (theta != 0.0) throw ConfigError(path, "tabulated potentials start at the turning point (theta = 0)");
    return std::make_pair(v.center() + v.half_width(E), 0.0);
  };
  const auto [q1, p1] = start_axis(v1, c.E1, c.theta1, "classical.theta1");
  const auto [q2, p2] = start_axis(v2, c.E2, c.theta2, "classical.theta2");
  if (step.contains(q1, q2)) throw ConfigError("classical.theta1", "initial point lies inside the step");

  classical::Horizon hz;
  hz.time = c.horizon;
  hz.sample_dt = c.sample_dt;
  const auto t0 = std::chrono::steady_clock::now();
  const auto tr = classical::integrate_with_impacts({q1, q2, p1, p2, 0.0}, v1, v2, step, hz);
  run.time("integrate", seconds_since(t0));
  io::write_trajectory_csv(run.out / "trajectory.csv", tr);

  const classical::AngleChart c1(v1, c.E1, step.q1_wall), c2(v2, c.E2, step.q2_wall);
  {
    auto fc = io::open_out(run.out / "cross.csv");
    auto fl = io::open_out(run.out / "lbilliard.csv");
    fc << "t,theta1,theta2,event\n";
    fl << "t,x,y,event\n";
    for (const auto& s : tr.samples) {
      const auto [a, b] = classical::to_angle_coords(s.state, c1, c2);
      const auto [x, y] = classical::fold_to_L(a, b);
      const char* ev = classical::to_string(s.event);
      fc << io::num(s.state.t) << ',' << io::num(a) << ',' << io::num(b) << ',' << ev << '\n';
      fl << io::num(s.state.t) << ',' << io::num(x) << ',' << io::num(y) << ',' << ev << '\n';
    }
  }
  double drift = 0.0;
  for (const auto& s : tr.samples) {
    const double e1 = 0.5 * s.state.p1 * s.state.p1 + v1(s.state.q1);
    const double e2 = 0.5 * s.state.p2 * s.state.p2 + v2(s.state.q2);
    drift = std::max({drift, std::abs(e1 - c.E1) / std::abs(c.E1), std::abs(e2 - c.E2) / std::abs(c.E2)});
  }
  const auto per = classical::detect_periodicity(tr);
  json summary{{"impacts", tr.impacts},
               {"E1", c.E1},
               {"E2", c.E2},
               {"max_relative_energy_drift", drift},
               {"theta1_wall", c1.wall_or_pi()},
               {"theta2_wall", c2.wall_or_pi()},
               {"periodic", per.is_periodic},
               {"period", per.period},
               {"mu", per.mu},
               {"b", per.b}};
  if (const auto res = resonance(c); res && step.at_origin() && c.eps1 == 0.0 && c.eps2 == 0.0) {
    json fams = json::array();
    for (const auto& f : classical::resonant_family(res->first)) fams.push_back({{"mu", f.mu}, {"b", f.b}});
    summary["resonance_m"] = res->first;
    summary["predicted_families"] = fams;
  }
  write_json(run.out / "summary.json", summary);
}

// ---------------------------------------------------------------------------
// spectrum

void spectrum_reports(const Config& c, const Spectrum& s, const fs::path& dir, double e1, double e2) {
  const auto step = step_of(c);
  if (c.step_mode == "none" && !c.table1 && !c.table2) {
    // Smooth harmonic: analytic ladder (k1 + 1/2) w1 + (k2 + 1/2) w2 + Vmin.
    const double vmin = pot1(c, e1).minimum() + pot2(c, e2).minimum();
    std::vector<double> ex;
    const int K = s.size();
    for (int a = 0; a < K; ++a) {
      for (int b = 0; b < K; ++b) {
        const double e = vmin + c.omega1 * (a + 0.5) + c.omega2 * (b + 0.5);
        if (a * c.omega1 > s.values.back() + c.omega1 || b * c.omega2 > s.values.back() + c.omega2) break;
        ex.push_back(e);
      }
    }
    std::sort(ex.begin(), ex.end());
    auto f = io::open_out(dir / "analytic_comparison.csv");
    f << "index,eigenvalue,analytic,relative_error\n";
    for (int k = 0; k < K && k < static_cast<int>(ex.size()); ++k) {
      f << k << ',' << io::num(s.values[k]) << ',' << io::num(ex[k]) << ','
        << io::num(std::abs(s.values[k] - ex[k]) / std::abs(ex[k])) << '\n';
    }
  }
  const auto res = resonance(c);
  if (res && step.at_origin() && e1 == 0.0 && e2 == 0.0 && c.step_mode != "none") {
    const auto [m, scale] = *res;
    const int count = static_cast<int>(std::ceil((s.values.back() / scale) * 2.0 * m)) + 2;
    std::vector<double> rungs;
    for (const auto& fam : semiclassics::families(m)) {
      const auto ladder = semiclassics::ebk_ladder(m, fam.label, count, scale);
      io::write_ladder_csv(dir / (std::string("ebk_") + semiclassics::to_string(fam.label) + ".csv"), ladder);
      rungs.insert(rungs.end(), ladder.begin(), ladder.end());
    }
    std::sort(rungs.begin(), rungs.end());
    auto f = io::open_out(dir / "ebk_comparison.csv");
    f << "index,eigenvalue,nearest_rung,deviation\n";
    for (int k = 0; k < s.size(); ++k) {
      auto it = std::lower_bound(rungs.begin(), rungs.end(), s.values[k]);
      double best = it == rungs.end() ? rungs.back() : *it;
      if (it != rungs.begin() && std::abs(*(it - 1) - s.values[k]) < std::abs(best - s.values[k])) best = *(it - 1);
      f << k << ',' << io::num(s.values[k]) << ',' << io::num(best) << ',' << io::num(s.values[k] - best) << '\n';
    }
  }
}

void cmd_spectrum(const Config& c, Run& run) {
  std::vector<std::array<double, 2>> members = c.sweep;
  if (members.empty()) members.push_back({c.eps1, c.eps2});
  const auto step = step_of(c);
  std::vector<std::pair<Potential, Potential>> pairs;
  double e_max = -1e300;
  for (const auto& e : members) {
    pairs.emplace_back(pot1(c, e[0]), pot2(c, e[1]));
    e_max = std::max(e_max, weyl_energy(1.15 * c.levels + 10.0, pairs.back().first, pairs.back().second, step));
  }
  const auto grid = fd::build_grid(pairs, anchor_of(c), e_max, grid_of(c, c.levels));
  json info = json::array();
  for (std::size_t i = 0; i < members.size(); ++i) {
    const fs::path dir = members.size() == 1 ? run.out : run.out / ("eps_" + std::to_string(i));
    const auto t0 = std::chrono::steady_clock::now();
    const auto H = fd::build_hamiltonian(grid, pairs[i].first, pairs[i].second, step, mode_of(c));
    Spectrum s;
    try {
      s = lowest_eigenpairs(H, c.levels, eigen_of(c), c.store_vectors);
    } catch (const fd::ConvergenceError& e) {
      io::write_spectrum_csv(dir / "spectrum_partial.csv", e.partial.values, e.partial.residuals);
      throw;
    }
    run.time("solve_" + std::to_string(i), seconds_since(t0));
    io::write_spectrum_csv(dir / "spectrum.csv", s.values, s.residuals);
    if (c.store_vectors) io::write_fields(dir / "eigenvectors.bin", s.grid, s.fields);
    spectrum_reports(c, s, dir, members[i][0], members[i][1]);
    double max_res = 0.0;
    for (double r : s.residuals) max_res = std::max(max_res, r);
    json one{{"eps1", members[i][0]},
             {"eps2", members[i][1]},
             {"dimension", H.dimension()},
             {"levels", s.size()},
             {"max_residual", max_res},
             {"factorizations", s.factorizations},
             {"lanczos_steps", s.lanczos_steps}};
    write_json(dir / "solve.json", one);
    info.push_back(one);
  }
  write_json(run.out / "grid.json", json{{"n1", grid.x1.n},
                                         {"n2", grid.x2.n},
                                         {"h1", grid.x1.h},
                                         {"h2", grid.x2.h},
                                         {"q1_first", grid.x1.node(0)},
                                         {"q2_first", grid.x2.node(0)},
                                         {"E_max_sizing", e_max},
                                         {"members", info}});
}

// ---------------------------------------------------------------------------
// stats

stats::SpacingOptions spacing_options(const Config& c, const Potential& v1, const Potential& v2,
                                      const StepRegion& step) {
  stats::SpacingOptions o;
  o.trim_fraction = c.trim_fraction;
  o.collapse = c.collapse;
  o.collapse_tol = c.collapse_tol;
  o.unfold.degree = c.poly_degree;
  if (c.unfold == "weyl") {
    o.unfold.method = stats::UnfoldMethod::weyl;
    o.unfold.counting = [v1, v2, step](double E) { return semiclassics::weyl_count(E, v1, v2, step); };
  } else if (c.unfold == "polynomial") {
    o.unfold.method = stats::UnfoldMethod::polynomial;
  }
  return o;
}

void stats_bundle(const Config& c, const std::vector<double>& levels, const fs::path& dir, bool with_weyl) {
  const auto v1 = pot1(c, c.eps1), v2 = pot2(c, c.eps2);
  const auto step = step_of(c);
  const auto sample = stats::spacing_sample(levels, spacing_options(c, v1, v2, step));
  io::write_spacing_csv(dir / "spacing.csv", sample.spacings);
  io::write_histogram_csv(dir / "spacing_pdf.csv", sample.spacings);
  const double kp = stats::ks_distance(sample.spacings, stats::Law::poisson);
  const double ks = stats::ks_distance(sample.spacings, stats::Law::semi_poisson);
  const double kg = stats::ks_distance(sample.spacings, stats::Law::goe_wigner);
  const char* best = ks <= kp && ks <= kg ? "semi-poisson" : (kp <= kg ? "poisson" : "goe-wigner");
  write_json(dir / "stats.json", json{{"ks_poisson", kp},
                                      {"ks_sp", ks},
                                      {"ks_goe", kg},
                                      {"best_fit", best},
                                      {"n_levels", levels.size()},
                                      {"n_spacings", sample.spacings.size()},
                                      {"unfold", stats::to_string(sample.method)},
                                      {"window",
                                       {{"first_index", sample.first_index},
                                        {"last_index", sample.last_index},
                                        {"E_lo", sample.e_lo},
                                        {"E_hi", sample.e_hi}}}});
  {
    const double mean = (levels.back() - levels.front()) / static_cast<double>(levels.size() - 1);
    auto f = io::open_out(dir / "degeneracy.csv");
    f << "energy,multiplicity,first_index\n";
    for (const auto& cl : stats::degeneracy_count(levels, c.degeneracy_tol * mean)) {
      f << io::num(cl.energy) << ',' << cl.multiplicity << ',' << cl.first << '\n';
    }
  }
  if (with_weyl) {
    auto counting = [&](double E) { return semiclassics::weyl_count(E, v1, v2, step); };
    std::vector<std::pair<double, double>> curve;
    const double lo = v1.minimum() + v2.minimum();
    for (int i = 1; i <= 200; ++i) {
      const double E = lo + (levels.back() - lo) * i / 200.0;
      curve.emplace_back(E, counting(E));
    }
    io::write_weyl_csv(dir / "weyl.csv", curve);
    auto f = io::open_out(dir / "weyl_check.csv");
    f << "E,N_empirical,N_weyl,ratio\n";
    for (const auto& p : stats::weyl_check(levels, counting)) {
      f << io::num(p.E) << ',' << io::num(p.n_empirical) << ',' << io::num(p.n_weyl) << ',' << io::num(p.ratio) << '\n';
    }
  }
}

void cmd_stats(const Config& c, Run& run, const std::vector<std::string>& inputs, const std::string& selftest) {
  if (!selftest.empty()) {
    std::vector<double> levels(1000);
    std::mt19937_64 rng(c.seed);
    if (selftest == "uniform") {
      for (std::size_t k = 0; k < levels.size(); ++k) levels[k] = 0.5 + 0.25 * static_cast<double>(k);
    } else {
      std::exponential_distribution<double> ex(1.0);
      double e = 0.0;
      for (auto& l : levels) l = e += ex(rng);
    }
    Config cc = c;
    cc.trim_fraction = 0.0;
    cc.unfold = "mean-spacing";
    stats_bundle(cc, levels, run.out, false);
    return;
  }
  if (inputs.empty()) throw ConfigError("inputs", "stats needs at least one spectrum file (or --selftest)");
  for (const auto& in : inputs) {
    const auto levels = io::read_spectrum_csv(in);
    const fs::path dir = inputs.size() == 1 ? run.out : run.out / fs::path(in).parent_path().filename();
    stats_bundle(c, levels, dir, true);
  }
}

// ---------------------------------------------------------------------------
// concentration

void cmd_concentration(const Config& c, Run& run, const std::string& input) {
  if (input.empty()) throw ConfigError("input", "concentration needs --input DIR from a spectrum run");
  const fs::path dir(input);
  const auto values = io::read_spectrum_csv(dir / "spectrum.csv", true);
  io::verify_against_manifest(dir / "eigenvectors.bin", true);
  auto store = io::read_fields(dir / "eigenvectors.bin");
  if (store.fields.cols() != static_cast<Eigen::Index>(values.size())) {
    throw IngestionError("eigenvector count does not match the spectrum in " + dir.string());
  }
  Spectrum s;
  s.grid = store.grid;
  s.values = values;
  s.fields = std::move(store.fields);
  const int K = s.size();
  const auto window = c.window.value_or(std::array<int, 2>{std::max(1, K - 19), K});
  if (window[1] > K) throw ConfigError("analysis.window", "window ends beyond the " + std::to_string(K) + " stored levels");
  const auto v1 = pot1(c, c.eps1), v2 = pot2(c, c.eps2);
  const auto step = step_of(c);

  std::vector<wavefn::ProductState> products;
  const bool origin = step.at_origin() && c.step_mode != "none" && c.eps1 == 0.0 && c.eps2 == 0.0;
  if (origin) {
    const auto a1 = solve_1d(v1, s.grid.x1.n, s.grid.x1);
    const auto a2 = solve_1d(v2, s.grid.x2.n, s.grid.x2);
    products = wavefn::product_states(a1, a2, s.grid, step, s.values[window[1] - 1] + 1.0);
  }
  const auto census =
      wavefn::concentration_census(s, window[0], window[1], v1, v2, c.threshold, origin ? &products : nullptr);
  io::write_census_jsonl(run.out / "census.jsonl", census.reports);
  write_json(run.out / "census_summary.json", json{{"window", {window[0], window[1]}},
                                                   {"threshold", c.threshold},
                                                   {"fraction_concentrated", census.fraction_concentrated},
                                                   {"fraction_product", census.fraction_product},
                                                   {"product_states_flagged", origin},
                                                   {"e_tilde_histogram_20_bins", census.histogram}});
  const int count = window[1] - window[0] + 1;
  Eigen::MatrixXd mh(s.grid.x2.n, count), mv(s.grid.x1.n, count), logd(s.fields.rows(), count);
  std::vector<int> labels;
  for (int n = window[0]; n <= window[1]; ++n) {
    const auto m = wavefn::marginal_means(s.fields.col(n - 1), s.grid);
    mh.col(n - window[0]) = m.horizontal;
    mv.col(n - window[0]) = m.vertical;
    logd.col(n - window[0]) = wavefn::log_density_export(s.fields.col(n - 1));
    labels.push_back(n);
  }
  io::write_fields(run.out / "log_density.bin", s.grid, logd, labels);
  // Marginals: one-row grids along each axis.
  fd::Grid2D gh{fd::AxisGrid{0.0, 1, 1.0}, s.grid.x2}, gv{s.grid.x1, fd::AxisGrid{0.0, 1, 1.0}};
  io::write_fields(run.out / "marginal_H.bin", gh, mh, labels);
  io::write_fields(run.out / "marginal_V.bin", gv, mv, labels);
}

// ---------------------------------------------------------------------------
// mixing

void cmd_mixing(const Config& c, Run& run) {
  const auto step = step_of(c);
  if (c.table1 || c.table2) throw ConfigError("potentials", "mixing uses the harmonic potentials with linear forces");
  const auto v1 = pot1(c, 0.0), v2 = pot2(c, 0.0);
  int max_n = c.E_ref_index;
  for (int N : c.mix_N) max_n = std::max(max_n, N + c.mix_dN);
  const int K0 = std::max(c.mix_J, max_n);

  // Forces are chosen from Weyl estimates of E_N so the common grid can be sized up front.
  auto weyl_level = [&](int n) { return weyl_energy(n - 0.5, v1, v2, step); };
  struct Member {
    int N;
    double x, e1, e2;
  };
  std::vector<Member> members;
  for (int N : c.mix_N) {
    for (double x : c.x_scaled) {
      const double e1 = x * std::pow(weyl_level(c.E_ref_index) / weyl_level(N), 1.5);
      members.push_back({N, x, e1, c.eps_ratio * e1});
    }
  }
  std::vector<std::pair<Potential, Potential>> pairs{{v1, v2}};
  for (const auto& m : members) pairs.emplace_back(pot1(c, m.e1), pot2(c, m.e2));
  const double e_max = weyl_energy(1.15 * K0 + 10.0, v1, v2, step);
  const auto grid = fd::build_grid(pairs, anchor_of(c), e_max, grid_of(c, K0));

  auto t0 = std::chrono::steady_clock::now();
  const auto H0 = fd::build_hamiltonian(grid, v1, v2, step, mode_of(c));
  const auto s0 = lowest_eigenpairs(H0, K0, eigen_of(c));
  run.time("unperturbed", seconds_since(t0));
  const double e_ref = s0.values[c.E_ref_index - 1];

  std::vector<io::MixingRow> rows;
  json warnings = json::array();
  for (std::size_t i = 0; i < members.size(); ++i) {
    const auto& m = members[i];
    t0 = std::chrono::steady_clock::now();
    const auto H = fd::build_hamiltonian(grid, pairs[i + 1].first, pairs[i + 1].second, step, mode_of(c));
    const auto s = lowest_eigenpairs(H, m.N + c.mix_dN, eigen_of(c));
    run.time("perturbed_" + std::to_string(i), seconds_since(t0));
    wavefn::MixingParams prm;
    prm.N = m.N;
    prm.dN = c.mix_dN;
    prm.J = c.mix_J;
    prm.delta = c.mix_delta;
    const auto rep = wavefn::mixing_metrics(s, s0, prm);
    const double x = m.e1 * std::pow(s0.values[m.N - 1] / e_ref, 1.5);
    rows.push_back({x, rep.P, rep.T, m.N, m.e1, m.e2});
    for (const auto& w : rep.warnings) warnings.push_back({{"N", m.N}, {"eps1", m.e1}, {"warning", w}});
  }
  io::write_mixing_csv(run.out / "mixing.csv", rows);
  write_json(run.out / "mixing.json", json{{"E_ref", e_ref}, {"warnings", warnings}});
}

// ---------------------------------------------------------------------------
// presets

struct Preset {
  std::string command;
  json config;
  std::string note;
};

std::map<std::string, Preset> presets() {
  const double r2 = std::sqrt(2.0);
  std::map<std::string, Preset> p;
  p["sanity"] = {"spectrum",
                 {{"potentials", {{"omega1", 1.0}, {"omega2", r2}}},
                  {"step", {{"mode", "none"}}},
                  {"grid", {{"points_per_wavelength", 10.0}}},
                  {"solver", {{"levels", 30}, {"store_vectors", false}}}},
                 "smooth oscillator, 30 levels against the analytic ladder"};
  p["fig1"] = {"classical",
               {{"potentials", {{"omega1", 1.0}, {"omega2", r2}}},
                {"step", {{"q1_wall", -1.0}, {"q2_wall", -1.0}}},
                {"classical", {{"E1", 5.625}, {"E2", 5.5}, {"horizon", 200.0}}}},
               "trajectory, cross-surface and L-billiard data"};
  p["fig2a"] = {"spectrum",
                {{"potentials", {{"omega1", 1.0}, {"omega2", 1.0}}}, {"solver", {{"levels", 60}, {"store_vectors", false}}}},
                "omega=(1,1), 60 levels with the EBK ladder"};
  p["fig2b"] = {"spectrum",
                {{"potentials", {{"omega1", 1.0}, {"omega2", 2.0}}}, {"solver", {{"levels", 60}, {"store_vectors", false}}}},
                "omega=(1,2), 60 levels with family I/II ladders"};
  p["fig3"] = {"spectrum+stats",
               {{"potentials", {{"omega1", 1.0}, {"omega2", 2.0}}},
                {"solver", {{"levels", 420}, {"store_vectors", false}}},
                {"analysis", {{"collapse", true}, {"collapse_tol", 0.05}}}},
               "omega=(1,2), 420 levels and the Weyl staircase"};
  p["fig4"] = {"spectrum+stats",
               {{"potentials",
                 {{"omega1", 1.0},
                  {"omega2", r2},
                  {"sweep", json::array({{0.0, 0.0}, {0.5, 0.25}, {1.0, 0.5}, {1.5, 0.75}, {std::sqrt(3.0), std::sqrt(3.0) / 2}})}}},
                {"solver", {{"levels", 520}, {"store_vectors", false}}},
                {"analysis", {{"trim_fraction", 0.0}, {"unfold", "polynomial"}}}},
               "omega=(1,sqrt 2), five step positions, 520 levels each"};
  p["fig5"] = {"mixing", {{"potentials", {{"omega1", 1.0}, {"omega2", r2}}}}, "P and T for N in {151, 301}"};
  p["fig6"] = {"spectrum+concentration",
               {{"potentials", {{"omega1", 1.0}, {"omega2", r2}}}, {"solver", {{"levels", 500}}}},
               "log-density fields of states 481-500 (step at the origin)"};
  p["fig7"] = {"spectrum+concentration",
               {{"potentials", {{"omega1", 1.0}, {"omega2", r2}, {"eps1", 1.5}, {"eps2", 0.75}}},
                {"solver", {{"levels", 500}}}},
               "E-tilde census of states 481-500 (shifted step)"};
  return p;
}

int run_main(int argc, char** argv) {
  CLI::App app{"Step-oscillator laboratory"};
  app.require_subcommand(1);
  std::string config_path, out_dir = "out", preset_flag, input, selftest;
  std::optional<int> levels;
  std::optional<std::uint64_t> seed;
  int threads = 1;
  std::vector<std::string> inputs;
  app.add_option("--config", config_path, "JSON configuration file");
  app.add_option("--out", out_dir, "output directory");
  app.add_option("--levels", levels, "number of eigenpairs");
  app.add_option("--seed", seed, "random seed");
  app.add_option("--threads", threads, "worker threads (recorded; the solver runs serially)");
  app.add_option("--preset", preset_flag, "start from a preset configuration");
  auto* classical_cmd = app.add_subcommand("classical", "impact dynamics and angle maps");
  auto* spectrum_cmd = app.add_subcommand("spectrum", "finite-difference spectrum");
  auto* stats_cmd = app.add_subcommand("stats", "spacing statistics, Weyl check, degeneracies");
  stats_cmd->add_option("inputs", inputs, "spectrum CSV files");
  stats_cmd->add_option("--selftest", selftest, "synthetic input instead of files")->check(CLI::IsMember({"uniform", "poisson"}));
  auto* conc_cmd = app.add_subcommand("concentration", "E-tilde census from a stored spectrum");
  conc_cmd->add_option("--input", input, "directory written by the spectrum command")->required();
  auto* mixing_cmd = app.add_subcommand("mixing", "P and T mixing metrics");
  auto* preset_cmd = app.add_subcommand("preset", "run a named figure preset");
  std::string preset_name;
  preset_cmd->add_option("name", preset_name, "preset name")->required();
  for (auto* s : {classical_cmd, spectrum_cmd, stats_cmd, conc_cmd, mixing_cmd, preset_cmd}) s->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  const auto all = presets();
  try {
    json cfg_json = json::object();
    std::string base = preset_cmd->parsed() ? preset_name : preset_flag;
    if (!base.empty()) {
      if (!all.count(base)) throw ConfigError("preset", "unknown preset '" + base + "'");
      cfg_json = all.at(base).config;
    }
    if (!config_path.empty()) {
      std::ifstream f(config_path);
      if (!f) throw ConfigError("config", "cannot open " + config_path);
      json user;
      try {
        user = json::parse(f);
      } catch (const json::parse_error& e) {
        throw ConfigError("config", std::string("parse error: ") + e.what());
      }
      cfg_json.merge_patch(user);
    }
    Config c = parse_config(cfg_json);
    if (levels) {
      if (*levels < 1) throw ConfigError("solver.levels", "must be positive");
      c.levels = *levels;
    }
    if (seed) c.seed = *seed;
    if (threads < 1) throw ConfigError("threads", "must be positive");
    Eigen::setNbThreads(threads);

    Run run;
    run.out = out_dir;
    run.config = config_json(c);
    fs::create_directories(run.out);
    const auto t0 = std::chrono::steady_clock::now();

    if (classical_cmd->parsed()) {
      run.command = "classical";
      cmd_classical(c, run);
    } else if (spectrum_cmd->parsed()) {
      run.command = "spectrum";
      cmd_spectrum(c, run);
    } else if (stats_cmd->parsed()) {
      run.command = "stats";
      cmd_stats(c, run, inputs, selftest);
    } else if (conc_cmd->parsed()) {
      run.command = "concentration";
      cmd_concentration(c, run, input);
    } else if (mixing_cmd->parsed()) {
      run.command = "mixing";
      cmd_mixing(c, run);
    } else if (preset_cmd->parsed()) {
      const auto& p = all.at(preset_name);
      run.command = "preset " + preset_name;
      std::cerr << preset_name << ": " << p.note << '\n';
      if (p.command == "classical") cmd_classical(c, run);
      if (p.command == "mixing") cmd_mixing(c, run);
      if (p.command.rfind("spectrum", 0) == 0) {
        if (p.command == "spectrum+concentration" && c.levels < 20) {
          throw ConfigError("solver.levels", "concentration presets need at least 20 levels");
        }
        cmd_spectrum(c, run);
      }
      if (p.command == "spectrum+stats") {
        // Write the stats bundle next to each spectrum; checksums come from a fresh manifest.
        run.write_manifest();
        if (c.sweep.empty()) {
          stats_bundle(c, io::read_spectrum_csv(run.out / "spectrum.csv", true), run.out / "stats", true);
        } else {
          for (std::size_t i = 0; i < c.sweep.size(); ++i) {
            Config ci = c;
            ci.eps1 = c.sweep[i][0];
            ci.eps2 = c.sweep[i][1];
            const auto dir = run.out / ("eps_" + std::to_string(i));
            stats_bundle(ci, io::read_spectrum_csv(dir / "spectrum.csv"), dir / "stats", false);
          }
        }
      }
      if (p.command == "spectrum+concentration") {
        run.write_manifest();
        Config ci = c;
        if (!ci.window) ci.window = std::array<int, 2>{std::max(1, c.levels - 19), c.levels};
        Run sub = run;
        sub.out = run.out / "concentration";
        fs::create_directories(sub.out);
        cmd_concentration(ci, sub, run.out.string());
      }
    }
    run.time("total", seconds_since(t0));
    run.write_manifest();
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << "config error at " << e.path << ": " << e.what() << '\n';
    return 2;
  } catch (const DomainError& e) {
    std::cerr << "invalid parameters: " << e.what() << '\n';
    return 2;
  } catch (const SizingError& e) {
    std::cerr << "sizing error: " << e.what() << '\n';
    return 2;
  } catch (const fd::ConvergenceError& e) {
    std::cerr << "convergence failure: " << e.what()
              << " (raise solver.max_restarts, loosen solver.tol or reduce solver.levels)\n";
    return 3;
  } catch (const IngestionError& e) {
    std::cerr << "ingestion error: " << e.what() << '\n';
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace

int main(int argc, char** argv) { return run_main(argc, argv); }
