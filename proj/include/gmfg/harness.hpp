#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "gmfg/game_model.hpp"
#include "gmfg/graphon.hpp"
#include "gmfg/limit_solver.hpp"
#include "gmfg/metrics.hpp"

namespace gmfg {

// Experiment configuration, read from JSON. Execution-only fields (threads,
// out) are excluded from the canonical form and therefore from the hash.
struct ExperimentConfig {
  int schema_version = 1;
  std::string preset = "lq-dissipative";
  nlohmann::json params = nlohmann::json::object();  // LqGameParams overrides for lq-* presets
  std::string graphon = "product";
  double init_mean_a = 0.0, init_mean_b = 1.0, init_sd = 0.1;  // X_0 ~ N(a + b lambda, sd^2)
  DiscretizationGrid grid;
  std::optional<std::uint64_t> seed;
  std::vector<std::size_t> n_list{8, 16, 32, 64, 128};
  std::size_t n = 8;  // single n-player run
  std::vector<double> eps_list{0.05, 0.1, 0.2, 0.4};
  std::string perturbation = "additive";        // "additive" or "block-jitter"
  std::string direction = "constant:1";         // H for the additive family
  std::size_t jitter_blocks = 8;
  std::string solver = "picard";                // "picard" or "continuation"
  PicardOptions picard;
  ContinuationOptions continuation;
  std::size_t dense_factor = 16;                // Riccati steps per fine step in coupled runs
  std::size_t riccati_budget = 128;
  bool riccati_halving = false;                 // halving self-check inside sweeps
  std::size_t w2_projections = 64;
  std::uint64_t w2_seed = 0x51cedULL;
  std::size_t w2_reference_types = 256;
  std::size_t w2_reference_paths = 16;
  std::size_t w2_worlds = 256;
  std::size_t cut_level = 16;
  bool dump_paths = false;
  // Slope bands, calibrated at P = 5000; the half-width scales as sqrt(5000 / P).
  double band_calibration_P = 5000.0;
  double poc_slope_center = -1.0, poc_slope_halfwidth = 0.4, poc_r2_min = 0.9;
  double w2_slope_max = -0.4;
  double stability_slope_center = 1.0, stability_slope_halfwidth = 0.3;
  double offdiag_growth_max = 0.1;              // log-log slope of n * max E(Y^ij)^2
  std::size_t threads = 1;
  std::string out = "out";

  static ExperimentConfig from_json(const nlohmann::json& j);
  static ExperimentConfig load(const std::string& path);
  void validate() const;
  std::uint64_t seed_value() const;
  nlohmann::json canonical() const;
  std::string hash() const;  // 16 hex digits of FNV-1a over canonical().dump()

  GameSpec game() const;
  InitialLaw initial_law() const;
  Graphon base_graphon() const;
  Graphon perturbed_graphon(double eps) const;
  DiscretizationGrid grid_with(std::size_t m) const;  // seeded grid with the given type count
};

struct SweepPoint {
  double param = 0.0;  // n or epsilon
  double error = 0.0;
  double std_error = 0.0;
  std::vector<double> extra;  // aligned with ResultRecord::extra_columns
  std::string status = "ok";
};

struct RateSummary {
  std::string name;      // "pathwise", "w2", "stability", ...
  std::string x_label;   // "n" or "l2_sq"
  RateFit fit;
  bool fitted = false;
  bool has_band = false;
  double band_lo = 0.0, band_hi = 0.0, r2_min = 0.0;
  bool pass = false;
};

struct ResultRecord {
  std::string experiment;
  std::string param_name;  // "n" or "eps"
  std::string config_hash;
  nlohmann::json config;
  std::uint64_t seed = 0;
  std::vector<std::string> extra_columns;
  std::vector<SweepPoint> points;
  std::vector<RateSummary> fits;
  nlohmann::json checks = nlohmann::json::object();  // named boolean sanity checks
  nlohmann::json solver = nlohmann::json::object();  // deterministic solver metadata
  std::vector<std::string> notes;
  double wall_seconds = 0.0;

  bool failed() const;
  double column(std::size_t point, const std::string& name) const;
};

// Band half-width scaled for the configured P.
double band_halfwidth(const ExperimentConfig& cfg, double calibrated);

ResultRecord run_stability_sweep(const ExperimentConfig& cfg);
ResultRecord run_poc_sweep(const ExperimentConfig& cfg);
ResultRecord run_game_convergence(const ExperimentConfig& cfg);

// results.csv, ratefit.json, config-echo.json, plotdata/*.csv; timing.json
// carries the wall-clock separately so the others are reproducible bytes.
void emit_outputs(const ResultRecord& r, const std::string& dir);

// Per (label, time) moments of a trajectory set.
void write_path_summary_csv(const PathSet& p, const std::string& path);

}  // namespace gmfg
