#include "gmfg/harness.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>
#include <set>
#include <sstream>

#include "gmfg/errors.hpp"
#include "gmfg/lq_riccati.hpp"
#include "gmfg/nplayer.hpp"

namespace gmfg {

using nlohmann::json;

namespace {

std::string num(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

void check_keys(const json& j, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ValidationError("config: '" + where + "' must be an object");
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!ok.count(it.key())) throw ValidationError("config: unknown key '" + it.key() + "' in " + where);
}

template <class T>
void read(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ValidationError(std::string("config: bad value for '") + key + "': " + e.what());
  }
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

void apply_params(LqGameParams& p, const json& j) {
  check_keys(j, "params", {"beta1", "beta0", "b2", "b3", "eta1", "eta0", "eta1_hat", "eta0_hat", "rho1", "rho0",
                           "rho1_hat", "rho0_hat", "sigma", "T"});
  read(j, "beta1", p.beta1);
  read(j, "beta0", p.beta0);
  read(j, "b2", p.b2);
  read(j, "b3", p.b3);
  read(j, "eta1", p.eta1);
  read(j, "eta0", p.eta0);
  read(j, "eta1_hat", p.eta1_hat);
  read(j, "eta0_hat", p.eta0_hat);
  read(j, "rho1", p.rho1);
  read(j, "rho0", p.rho0);
  read(j, "rho1_hat", p.rho1_hat);
  read(j, "rho0_hat", p.rho0_hat);
  read(j, "sigma", p.sigma);
  read(j, "T", p.T);
}

DiscretizationGrid default_grid() {
  DiscretizationGrid g;
  g.P = 5000;
  return g;
}

// Riccati options for a coupled run on a grid with L fine steps.
RiccatiOptions coupled_ode(const ExperimentConfig& cfg, std::size_t L) {
  RiccatiOptions ro;
  ro.steps = cfg.dense_factor * L;
  ro.multiple_of = L;
  ro.halving_check = cfg.riccati_halving;
  return ro;
}

void initial_moments(const InitialLaw& init, const std::vector<Label>& labels, Eigen::VectorXd& means,
                     Eigen::VectorXd& vars) {
  means.resize(Eigen::Index(labels.size()));
  vars.resize(Eigen::Index(labels.size()));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double sd = init.sd(labels[i].value());
    means(Eigen::Index(i)) = init.mean(labels[i].value());
    vars(Eigen::Index(i)) = sd * sd;
  }
}

RateSummary make_fit(const std::string& name, const std::string& x_label, const std::vector<double>& xs,
                     const std::vector<double>& ys, std::vector<std::string>& notes) {
  RateSummary s;
  s.name = name;
  s.x_label = x_label;
  std::vector<double> fx, fy;
  for (std::size_t i = 0; i < xs.size(); ++i)
    if (xs[i] > 0.0 && ys[i] > 0.0 && std::isfinite(ys[i])) {
      fx.push_back(xs[i]);
      fy.push_back(ys[i]);
    }
  if (fx.size() < 3) {
    notes.push_back(name + ": fewer than 3 positive points, no rate fitted");
    return s;
  }
  s.fit = fit_rate(fx, fy);
  s.fitted = true;
  return s;
}

void set_band(RateSummary& s, double lo, double hi, double r2_min = -std::numeric_limits<double>::infinity()) {
  s.has_band = true;
  s.band_lo = lo;
  s.band_hi = hi;
  s.r2_min = r2_min;
  s.pass = s.fitted && s.fit.slope >= lo && s.fit.slope <= hi && s.fit.r_squared >= r2_min;
}

bool strictly_decreasing(const std::vector<double>& v) {
  for (std::size_t i = 1; i < v.size(); ++i)
    if (!(v[i] < v[i - 1])) return false;
  return true;
}

// (1/m) sum_i E int_0^T (dX^2 + dY^2) dt by the trapezoid rule on the
// reporting grid, with its Monte Carlo standard error.
PathwiseError integrated_sq_distance(const PathSet& a, const PathSet& b) {
  if (a.times != b.times || a.paths != b.paths || a.labels.size() != b.labels.size())
    throw CouplingError("integrated distance needs matching trajectory sets");
  const std::size_t m = a.labels.size(), K = a.times.size(), P = a.paths;
  std::vector<double> per_path(P, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t k = 0; k < K; ++k) {
      const double w = 0.5 * ((k > 0 ? a.times[k] - a.times[k - 1] : 0.0) + (k + 1 < K ? a.times[k + 1] - a.times[k] : 0.0));
      const double *xa = a.x_at(i, k), *xb = b.x_at(i, k), *ya = a.y_at(i, k), *yb = b.y_at(i, k);
      for (std::size_t p = 0; p < P; ++p) {
        const double dx = xa[p] - xb[p], dy = ya[p] - yb[p];
        per_path[p] += w * (dx * dx + dy * dy);
      }
    }
  for (auto& v : per_path) v /= double(m);
  const auto s = moments(per_path.data(), P);
  return {s.mean, std::sqrt(s.var / double(P))};
}

LimitSolution solve_limit(const ExperimentConfig& cfg, const FbsdeCoefficients& c, const Graphon& g,
                          const DiscretizationGrid& grid) {
  if (cfg.solver == "continuation") {
    ContinuationOptions co = cfg.continuation;
    co.inner = cfg.picard;
    return solve_by_continuation(c, g, cfg.initial_law(), grid, co);
  }
  return solve_picard(c, g, cfg.initial_law(), grid, cfg.picard);
}

void write_text(const std::string& path, const std::string& body) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << body;
  if (!f) throw std::runtime_error("write failed for " + path);
}

}  // namespace

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  check_keys(j, "config", {"schema_version", "preset", "params", "graphon", "initial", "grid", "seed", "n_list", "n",
                           "eps_list", "perturbation", "solver", "riccati", "w2", "cut_level", "dump_paths", "bands",
                           "threads", "out"});
  ExperimentConfig c;
  c.grid = default_grid();
  read(j, "schema_version", c.schema_version);
  read(j, "preset", c.preset);
  if (j.contains("params")) c.params = j.at("params");
  read(j, "graphon", c.graphon);
  if (j.contains("initial")) {
    const auto& i = j.at("initial");
    check_keys(i, "initial", {"mean_a", "mean_b", "sd"});
    read(i, "mean_a", c.init_mean_a);
    read(i, "mean_b", c.init_mean_b);
    read(i, "sd", c.init_sd);
  }
  if (j.contains("grid")) {
    const auto& g = j.at("grid");
    check_keys(g, "grid", {"m", "N", "P", "substeps", "degree", "scheme", "T"});
    read(g, "m", c.grid.m);
    read(g, "N", c.grid.N);
    read(g, "P", c.grid.P);
    read(g, "substeps", c.grid.substeps);
    read(g, "degree", c.grid.degree);
    read(g, "T", c.grid.T);
    std::string scheme = "trapezoid";
    read(g, "scheme", scheme);
    if (scheme == "trapezoid") c.grid.scheme = BackwardScheme::trapezoid;
    else if (scheme == "explicit-euler") c.grid.scheme = BackwardScheme::explicit_euler;
    else throw ValidationError("config: unknown backward scheme '" + scheme + "'");
  }
  if (j.contains("seed")) {
    const auto& sj = j.at("seed");
    if (!sj.is_number_integer() || (!sj.is_number_unsigned() && sj.get<std::int64_t>() < 0)) throw ValidationError("config: seed must be a non-negative integer");
    c.seed = j.at("seed").get<std::uint64_t>();
  }
  read(j, "n_list", c.n_list);
  read(j, "n", c.n);
  read(j, "eps_list", c.eps_list);
  if (j.contains("perturbation")) {
    const auto& p = j.at("perturbation");
    check_keys(p, "perturbation", {"family", "direction", "blocks"});
    read(p, "family", c.perturbation);
    read(p, "direction", c.direction);
    read(p, "blocks", c.jitter_blocks);
  }
  if (j.contains("solver")) {
    const auto& s = j.at("solver");
    check_keys(s, "solver", {"path", "tol", "tol_abs", "max_iter", "delta", "delta_min"});
    read(s, "path", c.solver);
    read(s, "tol", c.picard.tol);
    read(s, "tol_abs", c.picard.tol_abs);
    read(s, "max_iter", c.picard.max_iter);
    read(s, "delta", c.continuation.delta);
    read(s, "delta_min", c.continuation.delta_min);
  }
  if (j.contains("riccati")) {
    const auto& r = j.at("riccati");
    check_keys(r, "riccati", {"dense_factor", "budget", "halving_check"});
    read(r, "dense_factor", c.dense_factor);
    read(r, "budget", c.riccati_budget);
    read(r, "halving_check", c.riccati_halving);
  }
  if (j.contains("w2")) {
    const auto& w = j.at("w2");
    check_keys(w, "w2", {"projections", "seed", "reference_types", "reference_paths", "worlds"});
    read(w, "projections", c.w2_projections);
    read(w, "seed", c.w2_seed);
    read(w, "reference_types", c.w2_reference_types);
    read(w, "reference_paths", c.w2_reference_paths);
    read(w, "worlds", c.w2_worlds);
  }
  read(j, "cut_level", c.cut_level);
  read(j, "dump_paths", c.dump_paths);
  if (j.contains("bands")) {
    const auto& b = j.at("bands");
    check_keys(b, "bands", {"calibration_P", "poc_slope_center", "poc_slope_halfwidth", "poc_r2_min", "w2_slope_max",
                            "stability_slope_center", "stability_slope_halfwidth", "offdiag_growth_max"});
    read(b, "calibration_P", c.band_calibration_P);
    read(b, "poc_slope_center", c.poc_slope_center);
    read(b, "poc_slope_halfwidth", c.poc_slope_halfwidth);
    read(b, "poc_r2_min", c.poc_r2_min);
    read(b, "w2_slope_max", c.w2_slope_max);
    read(b, "stability_slope_center", c.stability_slope_center);
    read(b, "stability_slope_halfwidth", c.stability_slope_halfwidth);
    read(b, "offdiag_growth_max", c.offdiag_growth_max);
  }
  read(j, "threads", c.threads);
  read(j, "out", c.out);
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ValidationError("cannot open config '" + path + "'");
  json j;
  try {
    j = json::parse(f);
  } catch (const json::parse_error& e) {
    throw ValidationError("config '" + path + "': " + e.what());
  }
  return from_json(j);
}

void ExperimentConfig::validate() const {
  if (schema_version != 1) throw ValidationError("config: unsupported schema_version " + std::to_string(schema_version));
  if (!seed) throw ValidationError("config: seed is required (no entropy default)");
  grid.validate();
  (void)game();
  (void)base_graphon();
  if (n_list.empty()) throw ValidationError("config: n_list must not be empty");
  if (eps_list.empty()) throw ValidationError("config: eps_list must not be empty");
  for (std::size_t i = 0; i < n_list.size(); ++i) {
    if (n_list[i] < 1) throw ValidationError("config: n_list entries must be positive");
    if (i > 0 && !(n_list[i] > n_list[i - 1])) throw ValidationError("config: n_list must be strictly increasing");
  }
  for (std::size_t i = 0; i < eps_list.size(); ++i) {
    if (!(eps_list[i] >= 0.0) || !std::isfinite(eps_list[i])) throw ValidationError("config: eps_list entries must be >= 0");
    if (i > 0 && !(eps_list[i] > eps_list[i - 1])) throw ValidationError("config: eps_list must be strictly increasing");
  }
  if (n < 1) throw ValidationError("config: n must be positive");
  if (perturbation != "additive" && perturbation != "block-jitter")
    throw ValidationError("config: unknown perturbation family '" + perturbation + "'");
  if (perturbation == "additive") (void)make_graphon(direction);
  if (jitter_blocks < 1) throw ValidationError("config: perturbation.blocks must be positive");
  if (solver != "picard" && solver != "continuation") throw ValidationError("config: unknown solver path '" + solver + "'");
  if (!(picard.tol > 0.0) || picard.max_iter < 1) throw ValidationError("config: solver tolerance/iterations invalid");
  if (!(continuation.delta > 0.0 && continuation.delta <= 1.0) || !(continuation.delta_min > 0.0))
    throw ValidationError("config: continuation steps must lie in (0, 1]");
  if (dense_factor < 1) throw ValidationError("config: riccati.dense_factor must be positive");
  if (w2_projections < 1 || w2_reference_types < 1 || w2_reference_paths < 1 || w2_worlds < 1)
    throw ValidationError("config: w2 settings must be positive");
  if (cut_level < 1) throw ValidationError("config: cut_level must be positive");
  if (!(init_sd >= 0.0)) throw ValidationError("config: initial.sd must be non-negative");
  if (!(band_calibration_P > 0.0)) throw ValidationError("config: bands.calibration_P must be positive");
  if (threads < 1) throw ValidationError("config: threads must be at least 1");
}

std::uint64_t ExperimentConfig::seed_value() const {
  if (!seed) throw ValidationError("config: seed is required (no entropy default)");
  return *seed;
}

json ExperimentConfig::canonical() const {
  json j;
  j["schema_version"] = schema_version;
  j["preset"] = preset;
  j["params"] = params;
  j["graphon"] = graphon;
  j["initial"] = {{"mean_a", init_mean_a}, {"mean_b", init_mean_b}, {"sd", init_sd}};
  j["grid"] = {{"m", grid.m},
               {"N", grid.N},
               {"P", grid.P},
               {"substeps", grid.substeps},
               {"degree", grid.degree},
               {"T", grid.T},
               {"scheme", grid.scheme == BackwardScheme::trapezoid ? "trapezoid" : "explicit-euler"}};
  j["seed"] = seed ? json(*seed) : json(nullptr);
  j["n_list"] = n_list;
  j["n"] = n;
  j["eps_list"] = eps_list;
  j["perturbation"] = {{"family", perturbation}, {"direction", direction}, {"blocks", jitter_blocks}};
  j["solver"] = {{"path", solver},
                 {"tol", picard.tol},
                 {"tol_abs", picard.tol_abs},
                 {"max_iter", picard.max_iter},
                 {"delta", continuation.delta},
                 {"delta_min", continuation.delta_min}};
  j["riccati"] = {{"dense_factor", dense_factor}, {"budget", riccati_budget}, {"halving_check", riccati_halving}};
  j["w2"] = {{"projections", w2_projections},
             {"seed", w2_seed},
             {"reference_types", w2_reference_types},
             {"reference_paths", w2_reference_paths},
             {"worlds", w2_worlds}};
  j["cut_level"] = cut_level;
  j["dump_paths"] = dump_paths;
  j["bands"] = {{"calibration_P", band_calibration_P},
                {"poc_slope_center", poc_slope_center},
                {"poc_slope_halfwidth", poc_slope_halfwidth},
                {"poc_r2_min", poc_r2_min},
                {"w2_slope_max", w2_slope_max},
                {"stability_slope_center", stability_slope_center},
                {"stability_slope_halfwidth", stability_slope_halfwidth},
                {"offdiag_growth_max", offdiag_growth_max}};
  return j;
}

std::string ExperimentConfig::hash() const {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(canonical().dump())));
  return buf;
}

GameSpec ExperimentConfig::game() const {
  if (preset.rfind("lq-", 0) == 0) {
    LqGameParams p = lq_preset_params(preset);
    apply_params(p, params);
    return lq_game(p, preset);
  }
  if (!params.empty()) throw ValidationError("config: params overrides apply to lq-* presets only");
  return game_preset(preset);
}

InitialLaw ExperimentConfig::initial_law() const { return InitialLaw::linear(init_mean_a, init_mean_b, init_sd); }

Graphon ExperimentConfig::base_graphon() const { return make_graphon(graphon); }

Graphon ExperimentConfig::perturbed_graphon(double eps) const {
  const Graphon base = base_graphon();
  if (perturbation == "additive") return perturbed(base, make_graphon(direction), eps);
  // symmetric block noise in [-1, 1], seeded from the experiment seed
  const std::size_t b = jitter_blocks;
  std::mt19937_64 rng(seed_value() ^ 0x6a177e5ULL);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Eigen::MatrixXd jit(b, b);
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t k = 0; k <= i; ++k) jit(i, k) = jit(k, i) = u(rng);
  return Graphon::analytic(base.name() + "+jitter", [base, jit, b, eps](double l, double k) {
    const auto cell = [b](double v) { return std::min(b - 1, std::size_t(v * double(b))); };
    return std::clamp(base(l, k) + eps * jit(Eigen::Index(cell(l)), Eigen::Index(cell(k))), 0.0, 1.0);
  });
}

DiscretizationGrid ExperimentConfig::grid_with(std::size_t m) const {
  DiscretizationGrid g = grid;
  g.m = m;
  g.seed = seed_value();
  g.threads = threads;
  return g;
}

bool ResultRecord::failed() const {
  return std::any_of(points.begin(), points.end(), [](const SweepPoint& p) { return p.status != "ok"; });
}

double ResultRecord::column(std::size_t point, const std::string& name) const {
  auto it = std::find(extra_columns.begin(), extra_columns.end(), name);
  if (it == extra_columns.end()) throw DomainError("no result column '" + name + "'");
  return points.at(point).extra.at(std::size_t(it - extra_columns.begin()));
}

double band_halfwidth(const ExperimentConfig& cfg, double calibrated) {
  return calibrated * std::sqrt(cfg.band_calibration_P / double(cfg.grid.P));
}

ResultRecord run_stability_sweep(const ExperimentConfig& cfg) {
  cfg.validate();
  const auto start = std::chrono::steady_clock::now();
  ResultRecord r;
  r.experiment = "stability";
  r.param_name = "eps";
  r.config = cfg.canonical();
  r.config_hash = cfg.hash();
  r.seed = cfg.seed_value();
  r.extra_columns = {"l2_sq", "l1", "cut", "cut_approximate", "oracle_error", "iterations"};
  const GameSpec spec = cfg.game();
  const FbsdeCoefficients c = reduce_to_fbsde(spec);
  const Graphon G = cfg.base_graphon();
  const DiscretizationGrid grid = cfg.grid_with(cfg.grid.m);
  const InitialLaw init = cfg.initial_law();
  const double stiff = std::abs(spec.b2(0.0)) * grid.fine_dt();
  if (stiff > 0.5)
    r.notes.push_back("stiffness |b2| dt = " + num(stiff) + " exceeds 0.5; exponential stepping keeps the scheme stable");

  // Deterministic cross-check from the Riccati system when the game is affine.
  std::optional<LqSpec> lq;
  try {
    lq = lq_spec_from(spec);
  } catch (const CapabilityError&) {
    r.notes.push_back("coefficients are not affine: no Riccati cross-check");
  }
  Eigen::VectorXd means, vars;
  initial_moments(init, grid.labels(), means, vars);
  const auto times = grid.times();
  auto riccati_for = [&](const Graphon& g) {
    RiccatiOptions ro;
    ro.multiple_of = grid.fine_steps();
    ro.halving_check = cfg.riccati_halving;
    return solve_riccati_limit(*lq, sampled_matrix(g, grid.m), means, vars, ro);
  };
  std::optional<LimitRiccati> base_ric;
  if (lq) base_ric = riccati_for(G);

  const LimitSolution base = solve_limit(cfg, c, G, grid);
  if (!base.meta.converged) throw ConvergenceError("limit solve under the base graphon did not converge");
  r.solver["base"] = {{"path", base.meta.path}, {"iterations", base.meta.iterations}, {"history", base.meta.history}};
  std::vector<json> per_eps;
  for (double eps : cfg.eps_list) {
    SweepPoint pt;
    pt.param = eps;
    const Graphon Ge = cfg.perturbed_graphon(eps);
    const double l2 = l2_distance(G, Ge).value, l1 = l1_distance(G, Ge).value;
    const auto cut = cut_norm(difference(sample_step(G, cfg.cut_level), sample_step(Ge, cfg.cut_level)));
    double oracle = std::numeric_limits<double>::quiet_NaN();
    try {
      const LimitSolution pert = solve_limit(cfg, c, Ge, grid);
      if (!pert.meta.converged) throw ConvergenceError("limit solve did not converge");
      const auto d = integrated_sq_distance(base.flow, pert.flow);
      pt.error = d.value;
      pt.std_error = d.std_error;
      if (lq) {
        const auto ric = riccati_for(Ge);
        oracle = 0.0;
        for (std::size_t i = 0; i < grid.m; ++i)
          for (std::size_t k = 0; k < times.size(); ++k) {
            const double w = 0.5 * ((k > 0 ? times[k] - times[k - 1] : 0.0) +
                                    (k + 1 < times.size() ? times[k + 1] - times[k] : 0.0));
            const double dx = ric.mean_at(i, times[k]) - base_ric->mean_at(i, times[k]);
            const double dy = ric.y_mean_at(i, times[k]) - base_ric->y_mean_at(i, times[k]);
            oracle += w * (dx * dx + dy * dy);
          }
        oracle /= double(grid.m);
      }
      pt.extra = {l2 * l2, l1, cut.value, cut.approximate ? 1.0 : 0.0, oracle, double(pert.meta.iterations)};
      per_eps.push_back({{"eps", eps}, {"path", pert.meta.path}, {"iterations", pert.meta.iterations}});
    } catch (const NumericError& e) {
      pt.status = std::string("failed: ") + e.what();
    } catch (const ConvergenceError& e) {
      pt.status = std::string("failed: ") + e.what();
    }
    if (pt.status != "ok") {
      pt.error = pt.std_error = std::numeric_limits<double>::quiet_NaN();
      pt.extra = {l2 * l2, l1, cut.value, cut.approximate ? 1.0 : 0.0, oracle, 0.0};
    }
    r.points.push_back(std::move(pt));
  }
  r.solver["perturbed"] = per_eps;

  std::vector<double> xs, ys;
  for (std::size_t i = 0; i < r.points.size(); ++i) {
    xs.push_back(r.column(i, "l2_sq"));
    ys.push_back(r.points[i].error);
  }
  auto fit = make_fit("stability", "l2_sq", xs, ys, r.notes);
  const double hw = band_halfwidth(cfg, cfg.stability_slope_halfwidth);
  set_band(fit, cfg.stability_slope_center - hw, cfg.stability_slope_center + hw);
  r.fits.push_back(fit);
  if (lq) {
    std::vector<double> os;
    for (std::size_t i = 0; i < r.points.size(); ++i) os.push_back(r.column(i, "oracle_error"));
    r.fits.push_back(make_fit("stability-oracle", "l2_sq", xs, os, r.notes));
  }
  for (std::size_t i = 0; i < r.points.size(); ++i)
    if (r.points[i].param == 0.0) r.checks["zero_eps_exact"] = r.points[i].error == 0.0;
  r.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

ResultRecord run_poc_sweep(const ExperimentConfig& cfg) {
  cfg.validate();
  const auto start = std::chrono::steady_clock::now();
  ResultRecord r;
  r.experiment = "poc";
  r.param_name = "n";
  r.config = cfg.canonical();
  r.config_hash = cfg.hash();
  r.seed = cfg.seed_value();
  r.extra_columns = {"w2_sq_sup", "w2_se", "w2_argmax_t", "riccati_steps"};
  const LqSpec spec = lq_spec_from(cfg.game());
  const Graphon G = cfg.base_graphon();
  const InitialLaw init = cfg.initial_law();
  const std::size_t W = std::min(cfg.w2_worlds, cfg.grid.P);
  W2Options wo;
  wo.mode = W2Mode::sliced;
  wo.projections = cfg.w2_projections;
  wo.seed = cfg.w2_seed;

  // Reference law: many types, few paths each, on an independent seed.
  DiscretizationGrid rg = cfg.grid_with(cfg.w2_reference_types);
  rg.P = cfg.w2_reference_paths;
  rg.seed = cfg.seed_value() + 1;
  const BrownianTable rnoise(rg.seed, rg.P, rg.fine_steps(), rg.fine_dt());
  const Eigen::MatrixXd rgm = sampled_matrix(G, rg.m);
  Eigen::VectorXd means, vars;
  initial_moments(init, rg.labels(), means, vars);
  const auto rric = solve_riccati_limit(spec, rgm, means, vars, coupled_ode(cfg, rg.fine_steps()));
  const auto ref = simulate_limit_lq(spec, rgm, rg.labels(), init, rg, rnoise, rric);
  const std::size_t K = ref.flow.times.size();
  r.solver["w2_reference"] = {{"types", rg.m}, {"paths", rg.P}, {"seed", rg.seed}, {"worlds", W}};

  // n-player clouds kept per world for the measure distance: [n][k][world][i]
  std::vector<std::vector<double>> clouds;
  std::vector<json> meta;
  for (std::size_t n : cfg.n_list) {
    SweepPoint pt;
    pt.param = double(n);
    const DiscretizationGrid grid = cfg.grid_with(n);
    const std::size_t L = grid.fine_steps();
    const BrownianTable noise(grid.seed, grid.P, L, grid.fine_dt());
    const Eigen::MatrixXd gn = sampled_matrix(G, n);
    std::vector<double> cloud;
    try {
      const auto ro = coupled_ode(cfg, L);
      const auto lin = solve_riccati_linear_nplayer(spec, gn, ro);
      const auto np = simulate_linear_lq(spec, gn, init, grid, noise, lin);
      initial_moments(init, grid.labels(), means, vars);
      const auto lric = solve_riccati_limit(spec, gn, means, vars, ro);
      const auto lim = simulate_limit_lq(spec, gn, grid.labels(), init, grid, noise, lric);
      const auto pe = pathwise_error(lim.flow, np.paths);
      pt.error = pe.value;
      pt.std_error = pe.std_error;
      cloud.resize(K * W * n);
      for (std::size_t k = 0; k < K; ++k)
        for (std::size_t w = 0; w < W; ++w)
          for (std::size_t i = 0; i < n; ++i) cloud[(k * W + w) * n + i] = np.paths.x_at(i, k)[w];
      pt.extra = {0.0, 0.0, 0.0, double(ro.steps)};
      meta.push_back({{"n", n},
                      {"nplayer_riccati_steps", lin.meta.steps},
                      {"limit_riccati_steps", lric.meta.steps},
                      {"limit_mean_iterations", lric.meta.mean_iterations}});
    } catch (const NumericError& e) {
      pt.status = std::string("failed: ") + e.what();
    } catch (const ConvergenceError& e) {
      pt.status = std::string("failed: ") + e.what();
    }
    if (pt.status != "ok") {
      pt.error = pt.std_error = std::numeric_limits<double>::quiet_NaN();
      pt.extra.assign(4, std::numeric_limits<double>::quiet_NaN());
    }
    clouds.push_back(std::move(cloud));
    r.points.push_back(std::move(pt));
  }
  r.solver["points"] = meta;

  // sup over reporting times of the world-averaged sliced W2^2
  std::vector<double> sup(cfg.n_list.size(), -1.0);
  EmpiricalMeasure rm, em;
  rm.dim = em.dim = 2;
  for (std::size_t k = 0; k < K; ++k) {
    rm.points.clear();
    for (std::size_t i = 0; i < rg.m; ++i)
      for (std::size_t p = 0; p < rg.P; ++p) {
        rm.points.push_back(ref.flow.labels[i].value());
        rm.points.push_back(ref.flow.x_at(i, k)[p]);
      }
    const SlicedReference sref(rm, wo);
    for (std::size_t a = 0; a < cfg.n_list.size(); ++a) {
      if (clouds[a].empty()) continue;
      const std::size_t n = cfg.n_list[a];
      std::vector<double> d(W);
      for (std::size_t w = 0; w < W; ++w) {
        em.points.resize(2 * n);
        for (std::size_t i = 0; i < n; ++i) {
          em.points[2 * i] = double(i + 1) / double(n);
          em.points[2 * i + 1] = clouds[a][(k * W + w) * n + i];
        }
        d[w] = sref.distance_sq(em);
      }
      const auto s = moments(d.data(), W);
      if (s.mean > sup[a]) {
        sup[a] = s.mean;
        r.points[a].extra[0] = s.mean;
        r.points[a].extra[1] = std::sqrt(s.var / double(W));
        r.points[a].extra[2] = ref.flow.times[k];
      }
    }
  }

  std::vector<double> ns, es, ws;
  for (std::size_t i = 0; i < r.points.size(); ++i) {
    ns.push_back(r.points[i].param);
    es.push_back(r.points[i].error);
    ws.push_back(r.points[i].extra[0]);
  }
  auto pf = make_fit("pathwise", "n", ns, es, r.notes);
  const double hw = band_halfwidth(cfg, cfg.poc_slope_halfwidth);
  set_band(pf, cfg.poc_slope_center - hw, cfg.poc_slope_center + hw, cfg.poc_r2_min);
  r.fits.push_back(pf);
  auto wf = make_fit("w2", "n", ns, ws, r.notes);
  set_band(wf, -std::numeric_limits<double>::infinity(), cfg.w2_slope_max);
  r.fits.push_back(wf);
  r.checks["pathwise_last_below_first"] = es.size() >= 2 && es.back() < es.front();
  r.checks["w2_decreasing"] = strictly_decreasing(ws);
  r.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

ResultRecord run_game_convergence(const ExperimentConfig& cfg) {
  cfg.validate();
  const auto start = std::chrono::steady_clock::now();
  ResultRecord r;
  r.experiment = "game";
  r.param_name = "n";
  r.config = cfg.canonical();
  r.config_hash = cfg.hash();
  r.seed = cfg.seed_value();
  r.extra_columns = {"control_gap", "control_gap_se", "max_offdiag_msq", "n_times_offdiag"};
  const GameSpec spec = cfg.game();
  const auto audit = audit_game_assumptions(spec, GameAssumption::assume4, SamplingGrid{});
  if (!audit.pass) throw ValidationError("game sweep refused: the dissipative-regime audit failed\n" + audit.to_text());
  std::optional<LqSpec> lq;
  try {
    lq = lq_spec_from(spec);
  } catch (const CapabilityError&) {
    r.notes.push_back("coefficients are not affine: regression n-player path (approximate basis), Picard limit");
  }
  const Graphon G = cfg.base_graphon();
  const InitialLaw init = cfg.initial_law();
  std::vector<json> meta;
  for (std::size_t n : cfg.n_list) {
    SweepPoint pt;
    pt.param = double(n);
    const DiscretizationGrid grid = cfg.grid_with(n);
    const std::size_t L = grid.fine_steps(), K = grid.N + 1, P = grid.P;
    const BrownianTable noise(grid.seed, P, L, grid.fine_dt());
    const Eigen::MatrixXd gn = sampled_matrix(G, n);
    try {
      GameOptions go;
      go.method = lq ? GameMethod::lq_exact : GameMethod::regression;
      go.riccati.budget = cfg.riccati_budget;
      go.riccati.ode.halving_check = cfg.riccati_halving;
      go.dense_factor = cfg.dense_factor;
      go.picard = cfg.picard;
      const auto game = simulate_game(spec, gn, init, grid, noise, go);
      PathSet lim;
      if (lq) {
        Eigen::VectorXd means, vars;
        initial_moments(init, grid.labels(), means, vars);
        const auto ric = solve_riccati_limit(*lq, gn, means, vars, coupled_ode(cfg, L));
        lim = simulate_limit_lq(*lq, gn, grid.labels(), init, grid, noise, ric).flow;
      } else {
        YField zero;
        zero.reset(n, L, PolyFit::constant(0.0));
        lim = solve_picard_from(reduce_to_fbsde(spec), gn, init, grid, noise, std::move(zero), cfg.picard).flow;
      }
      const auto conv = pathwise_error(lim, game.paths);
      pt.error = conv.value;
      pt.std_error = conv.std_error;
      // control gap (1/n) sum_i E sup_t |alpha^{i,n} - alpha^{i/n}|^2
      std::vector<double> gap(P, 0.0);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = 0; p < P; ++p) {
          double sup = 0.0;
          for (std::size_t k = 0; k < K; ++k) {
            const double a = game.control[game.paths.index(i, k, p)];
            const double b = optimal_control(spec, lim.times[k], lim.y_at(i, k)[p]).value;
            sup = std::max(sup, (a - b) * (a - b));
          }
          gap[p] += sup / double(n);
        }
      const auto gs = moments(gap.data(), P);
      double mx = game.offdiag_msq.empty() ? std::numeric_limits<double>::quiet_NaN() : 0.0;
      for (double v : game.offdiag_msq) mx = std::max(mx, v);
      pt.extra = {gs.mean, std::sqrt(gs.var / double(P)), mx, double(n) * mx};
      meta.push_back({{"n", n}, {"method", game.method}, {"approximate_basis", game.approximate_basis}});
    } catch (const NumericError& e) {
      pt.status = std::string("failed: ") + e.what();
    } catch (const ConvergenceError& e) {
      pt.status = std::string("failed: ") + e.what();
    }
    if (pt.status != "ok") {
      pt.error = pt.std_error = std::numeric_limits<double>::quiet_NaN();
      pt.extra.assign(4, std::numeric_limits<double>::quiet_NaN());
    }
    r.points.push_back(std::move(pt));
  }
  r.solver["points"] = meta;
  r.solver["audit"] = {{"assumption", audit.assumption}, {"pass", audit.pass}, {"sampling", audit.sampling}};

  std::vector<double> ns, es, cs, od;
  for (std::size_t i = 0; i < r.points.size(); ++i) {
    ns.push_back(r.points[i].param);
    es.push_back(r.points[i].error);
    cs.push_back(r.points[i].extra[0]);
    od.push_back(r.points[i].extra[3]);
  }
  r.fits.push_back(make_fit("convergence", "n", ns, es, r.notes));
  r.fits.push_back(make_fit("control-gap", "n", ns, cs, r.notes));
  auto of = make_fit("offdiag-scaled", "n", ns, od, r.notes);
  set_band(of, -std::numeric_limits<double>::infinity(), cfg.offdiag_growth_max);
  r.fits.push_back(of);
  r.checks["convergence_strictly_decreasing"] = strictly_decreasing(es);
  bool growing = od.size() >= 2;
  for (std::size_t i = 1; i < od.size(); ++i)
    if (!(od[i] > od[i - 1])) growing = false;
  r.checks["offdiag_no_monotone_growth"] = !growing && std::all_of(od.begin(), od.end(), [](double v) { return std::isfinite(v); });
  r.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

void emit_outputs(const ResultRecord& r, const std::string& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(fs::path(dir) / "plotdata", ec);
  if (ec) throw std::runtime_error("cannot create output directory " + dir + ": " + ec.message());

  std::ostringstream csv;
  csv << "experiment,config_hash,seed," << r.param_name << ",error,std_error";
  for (const auto& c : r.extra_columns) csv << ',' << c;
  csv << ",status\n";
  for (const auto& p : r.points) {
    csv << r.experiment << ',' << r.config_hash << ',' << r.seed << ',' << num(p.param) << ',' << num(p.error) << ','
        << num(p.std_error);
    for (double v : p.extra) csv << ',' << num(v);
    std::string st = p.status;
    std::replace(st.begin(), st.end(), ',', ';');
    std::replace(st.begin(), st.end(), '\n', ' ');
    csv << ',' << st << '\n';
  }
  write_text((fs::path(dir) / "results.csv").string(), csv.str());

  json fits = json::array();
  for (const auto& f : r.fits) {
    json e = {{"name", f.name}, {"x", f.x_label}, {"fitted", f.fitted}};
    if (f.fitted) {
      e["slope"] = f.fit.slope;
      e["intercept"] = f.fit.intercept;
      e["r_squared"] = f.fit.r_squared;
      e["points"] = f.fit.ns.size();
    }
    if (f.has_band) {
      e["band"] = {std::isfinite(f.band_lo) ? json(f.band_lo) : json(nullptr),
                   std::isfinite(f.band_hi) ? json(f.band_hi) : json(nullptr)};
      if (std::isfinite(f.r2_min)) e["r_squared_min"] = f.r2_min;
      e["pass"] = f.pass;
    }
    fits.push_back(e);

    std::ostringstream pd;
    pd << f.x_label << ",error,log_" << f.x_label << ",log_error\n";
    for (std::size_t i = 0; i < f.fit.ns.size(); ++i)
      pd << num(f.fit.ns[i]) << ',' << num(f.fit.errors[i]) << ',' << num(std::log(f.fit.ns[i])) << ','
         << num(std::log(f.fit.errors[i])) << '\n';
    write_text((fs::path(dir) / "plotdata" / (r.experiment + "-" + f.name + ".csv")).string(), pd.str());
  }
  json rf = {{"experiment", r.experiment}, {"config_hash", r.config_hash}, {"seed", r.seed}, {"fits", fits},
             {"checks", r.checks},         {"solver", r.solver},           {"notes", r.notes}};
  write_text((fs::path(dir) / "ratefit.json").string(), rf.dump(2) + "\n");
  json echo = {{"config", r.config}, {"hash", r.config_hash}};
  write_text((fs::path(dir) / "config-echo.json").string(), echo.dump(2) + "\n");
  json timing = {{"wall_seconds", r.wall_seconds}};
  write_text((fs::path(dir) / "timing.json").string(), timing.dump(2) + "\n");
}

void write_path_summary_csv(const PathSet& p, const std::string& path) {
  std::ostringstream f;
  f << "type,label,t,mean_x,var_x,mean_y,var_y\n";
  for (std::size_t i = 0; i < p.labels.size(); ++i)
    for (std::size_t k = 0; k < p.times.size(); ++k) {
      const auto mx = moments(p.x_at(i, k), p.paths), my = moments(p.y_at(i, k), p.paths);
      f << i + 1 << ',' << p.labels[i].num << '/' << p.labels[i].den << ',' << num(p.times[k]) << ',' << num(mx.mean)
        << ',' << num(mx.var) << ',' << num(my.mean) << ',' << num(my.var) << '\n';
    }
  write_text(path, f.str());
}

}  // namespace gmfg
