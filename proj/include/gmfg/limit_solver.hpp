#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "gmfg/game_model.hpp"
#include "gmfg/graphon.hpp"
#include "gmfg/lq_riccati.hpp"
#include "gmfg/noise.hpp"
#include "gmfg/paths.hpp"
#include "gmfg/regression.hpp"

namespace gmfg {

enum class BackwardScheme {
  explicit_euler,  // Y_k = E[e^{ch} Y_{k+1} + h phi1(ch) F_{k+1}]
  trapezoid        // predictor-corrector with F linear across the step
};

struct DiscretizationGrid {
  std::size_t m = 8;         // types i/m, i = 1..m
  std::size_t N = 64;        // reporting steps
  std::size_t substeps = 1;  // fine steps per reporting step
  std::size_t P = 1000;      // particles per type
  std::uint64_t seed = 1;
  int degree = 3;
  double T = 1.0;
  BackwardScheme scheme = BackwardScheme::trapezoid;
  std::size_t threads = 1;
  // Every type reads the noise stream of label 1/m (exchangeability checks).
  bool shared_type_noise = false;

  void validate() const;
  double dt() const { return T / double(N); }
  std::size_t fine_steps() const { return N * substeps; }
  double fine_dt() const { return T / double(fine_steps()); }
  std::vector<double> times() const;
  double fine_time(std::size_t l) const { return l == fine_steps() ? T : double(l) * fine_dt(); }
  std::vector<Label> labels() const;
  // Label whose noise stream type i consumes.
  std::vector<Label> noise_labels() const;
};

// Per-type initial law X_0^lambda = mean(lambda) + sd(lambda) * xi.
struct InitialLaw {
  std::function<double(double)> mean = [](double) { return 0.0; };
  std::function<double(double)> sd = [](double) { return 0.0; };

  static InitialLaw point(double x);
  static InitialLaw gaussian(double mean, double sd);
  // mean a + b * lambda, constant sd: Lipschitz in the type
  static InitialLaw linear(double a, double b, double sd);
};

// Samples the initial cloud of one label from the table's initial stream.
// `stream` selects the noise (defaults to the type's own label).
void draw_initial(const InitialLaw& law, const Label& l, const BrownianTable& noise, double* out);
void draw_initial(const InitialLaw& law, const Label& l, const Label& stream, const BrownianTable& noise, double* out);

// y-field: one polynomial per (type, fine step).
struct YField {
  std::size_t types = 0, steps = 0;  // steps = fine step count, nodes 0..steps
  std::vector<PolyFit> fits;

  void reset(std::size_t m, std::size_t fine_steps, const PolyFit& f);
  PolyFit& at(std::size_t i, std::size_t l) { return fits[i * (steps + 1) + l]; }
  const PolyFit& at(std::size_t i, std::size_t l) const { return fits[i * (steps + 1) + l]; }
};

struct SolverMeta {
  std::string path;  // "picard", "continuation", "initializer", "lq-feedback"
  std::vector<double> history;  // Picard residuals
  std::size_t iterations = 0;
  bool converged = false;
  double max_ridge = 0.0;
  std::vector<std::string> notes;
};

struct LimitSolution {
  PathSet flow;  // reporting grid clouds
  YField y_field;
  std::vector<double> z_mean;  // [type][reporting time]
  std::vector<double> y_mean_se;  // standard error of the mean of Y, same layout
  SolverMeta meta;

  struct Summary {
    double mean_x, var_x, mean_y, var_y, z_mean, se_y;
  };
  Summary summary(std::size_t i, std::size_t k) const;
};

// Interaction aggregates (1/m) sum_j G_ij mean_j other(t, x'), one per term.
struct Aggregates {
  std::size_t types = 0, terms = 0;
  std::vector<double> values;  // [type][term]
  double at(std::size_t i, std::size_t term) const { return values[i * terms + term]; }
};

Aggregates aggregate(const Interaction& in, double t, const Eigen::MatrixXd& g, const std::vector<const double*>& clouds,
                     std::size_t P, std::size_t threads);

// Psi: forward sweep with the y-field held fixed. Interaction means are taken
// from the clouds at the start of each fine step.
struct ForwardResult {
  PathSet flow;
  std::vector<Aggregates> drift_aggs;   // per fine step
  std::vector<Aggregates> driver_aggs;  // per fine node, for the backward driver
  Aggregates terminal_aggs;
};

ForwardResult forward_sweep(const FbsdeCoefficients& c, const Eigen::MatrixXd& g, const YField& y,
                            const InitialLaw& init, const DiscretizationGrid& grid, const BrownianTable& noise);

// Phi: regression Monte Carlo backward sweep along a forward result.
// With an intercept in every regression the mean of the fitted values equals
// the mean of the targets, so the mean of Y also equals the sample mean of a
// pathwise recursion; its spread gives the Monte Carlo error of that mean.
struct BackwardResult {
  YField y_field;
  std::vector<double> z_mean;
  std::vector<double> y_mean_se;  // [type][reporting time]
  double max_ridge = 0.0;
};

BackwardResult backward_sweep(const FbsdeCoefficients& c, const Eigen::MatrixXd& g, const ForwardResult& fwd,
                              const YField& y_used, const DiscretizationGrid& grid, const BrownianTable& noise);

struct PicardOptions {
  double tol = 1e-8;        // stop when residual < tol * first residual
  double tol_abs = 0.0;     // or below this absolute value
  std::size_t max_iter = 30;
  double norm_k = 0.0;      // weighted-norm exponent k
  std::size_t validation = 2048;
};

LimitSolution solve_picard(const FbsdeCoefficients& c, const Graphon& g, const InitialLaw& init,
                           const DiscretizationGrid& grid, const PicardOptions& opt = {});
// Same with an explicit starting field (used by the continuation path).
LimitSolution solve_picard_from(const FbsdeCoefficients& c, const Eigen::MatrixXd& g, const InitialLaw& init,
                                const DiscretizationGrid& grid, const BrownianTable& noise, YField start,
                                const PicardOptions& opt);

// Closed-form solution of the zeta = 0 linear system
//   dX = (-Y + b0) dt + sigma dW, dY = -(X + f0) dt + Z dW, Y_T = X_T + q0:
// Y = X + P with P_t = e^{t-T} q0 + int_t^T e^{t-s} (b0 + f0)(s) ds.
double initializer_offset(const TimeFn& b0, const TimeFn& f0, double q0, double t, double T);

LimitSolution solve_linear_initializer(const TimeFn& b0, const TimeFn& f0, double q0, double sigma,
                                       const InitialLaw& init, const DiscretizationGrid& grid,
                                       const BrownianTable& noise);

struct ContinuationOptions {
  double delta = 0.25;
  double delta_min = 1.0 / 64.0;
  PicardOptions inner;
};

LimitSolution solve_by_continuation(const FbsdeCoefficients& c, const Graphon& g, const InitialLaw& init,
                                    const DiscretizationGrid& grid, const ContinuationOptions& opt = {});

// Linear-quadratic limit system simulated in closed loop with the Riccati
// feedback Y = p X + q. The interaction uses the exact mean recursion of the
// discrete scheme, so n-player systems stepped the same way couple cleanly.
struct LqFeedbackResult {
  PathSet flow;
  std::vector<std::vector<double>> discrete_means;  // [type][fine node]
};

LqFeedbackResult simulate_limit_lq(const LqSpec& spec, const Eigen::MatrixXd& g, const std::vector<Label>& labels,
                                   const InitialLaw& init, const DiscretizationGrid& grid, const BrownianTable& noise,
                                   const LimitRiccati& riccati);

void write_summary_csv(const LimitSolution& s, const std::string& path);
void write_history_csv(const SolverMeta& m, const std::string& path);
// Flat little-endian doubles [label][time][path] for x then y, plus a JSON sidecar.
void write_paths_binary(const PathSet& p, const std::string& base);

}  // namespace gmfg
