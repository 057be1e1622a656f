#pragma once

#include <functional>
#include <limits>
#include <string>
#include <vector>

namespace gmfg {

using TimeFn = std::function<double(double)>;                   // t
using StateFn = std::function<double(double, double)>;          // (t, x)
using StateAdjointFn = std::function<double(double, double, double)>;  // (t, x, y)
using TerminalFn = std::function<double(double)>;               // x

// Interaction written as a sum of separable terms own(t, x, y) * other(t, x').
// The separable form lets cloud averages over x' be computed once per type.
struct SeparableTerm {
  StateAdjointFn own;
  StateFn other;
};

struct Interaction {
  std::vector<SeparableTerm> terms;

  bool empty() const { return terms.empty(); }
  double operator()(double t, double x, double xp, double y) const;
};

struct FbsdeCoefficients {
  StateAdjointFn B0;  // forward drift
  Interaction Bhat;   // forward interaction, weighted by the graphon
  StateAdjointFn F0;  // backward driver
  Interaction Fhat;
  TerminalFn Q0;      // terminal condition
  Interaction Qhat;   // terminal interaction; evaluated with t = T and y = 0
  double sigma = 1.0;
  // Optional stiff linear parts: B0 contains x_rate(t)*x and F0 contains
  // y_rate(t)*y. They only steer the time integrator; B0/F0 stay complete.
  TimeFn x_rate;
  TimeFn y_rate;

  void validate() const;
  bool interaction_free() const { return Bhat.empty() && Fhat.empty() && Qhat.empty(); }
  double B(double t, double x, double xp, double y, double weight) const {
    return B0(t, x, y) + weight * Bhat(t, x, xp, y);
  }
  double F(double t, double x, double xp, double y, double weight) const {
    return F0(t, x, y) + weight * Fhat(t, x, xp, y);
  }
  double Q(double T, double x, double xp, double weight) const { return Q0(x) + weight * Qhat(T, x, xp, 0.0); }
};

// The linear-quadratic-in-control game: drift (1/n)sum G b1(x^j) + b2 x + b3 a,
// running cost f1(x) + (1/n)sum G f2(x^j) + a^2/2, terminal q1(x) + (1/n)sum G q2(x^j).
struct GameSpec {
  std::string name = "custom";
  StateFn b1, db1;
  TimeFn b2, b3;
  StateFn f1, df1, f2, df2;
  TerminalFn q1, dq1, q2, dq2;
  double sigma = 1.0;
  double T = 1.0;
  double control_lo = -std::numeric_limits<double>::infinity();
  double control_hi = std::numeric_limits<double>::infinity();
};

// Checks T, sigma and that every derivative handle matches centered finite
// differences of its primitive (relative tolerance 1e-5). Throws on failure.
GameSpec checked(GameSpec spec);

struct LqGameParams {
  double beta1 = 0.5, beta0 = 0.0;  // b1 = beta1 x + beta0
  double b2 = -200.0, b3 = 1.0;
  double eta1 = 1.0, eta0 = 0.0;    // df1 = eta1 x + eta0
  double eta1_hat = 0.5, eta0_hat = 0.0;  // df2
  double rho1 = 1.0, rho0 = 0.0;    // dq1
  double rho1_hat = 0.5, rho0_hat = 0.0;  // dq2
  double sigma = 1.0, T = 1.0;
};

GameSpec lq_game(const LqGameParams& p, std::string name = "lq");

// "lq-dissipative", "lq-coercive", "nonlinear-tanh".
GameSpec game_preset(const std::string& id);
LqGameParams lq_preset_params(const std::string& id);

FbsdeCoefficients reduce_to_fbsde(const GameSpec& spec);

struct ControlValue {
  double value = 0.0;
  bool clipped = false;
};

ControlValue optimal_control(const GameSpec& spec, double t, double y);

// Blended coefficients of the continuation homotopy at level zeta:
// B^z = zB - (1-z)y + b0(t), F^z = zF + (1-z)x + f0(t), Q^z = zQ + (1-z)x + q0.
FbsdeCoefficients blend(const FbsdeCoefficients& c, double zeta, TimeFn b0 = {}, TimeFn f0 = {}, double q0 = 0.0);

struct SamplingGrid {
  double t0 = 0.0, t1 = 1.0;
  std::size_t nt = 5;
  double x_lo = -2.0, x_hi = 2.0;
  std::size_t nx = 17;
  double y_lo = -2.0, y_hi = 2.0;
  std::size_t ny = 9;
  double guard = -1e6;  // floor for dissipativity estimates

  std::vector<double> ts() const;
  std::vector<double> xs() const;
  std::vector<double> ys() const;
  // Nested refinement: every existing sample point is kept.
  SamplingGrid refined() const;
  std::string describe() const;
};

struct Inequality {
  std::string name;
  double lhs = 0.0;
  double rhs = 0.0;
  std::string relation;  // "<", ">", ">="
  bool satisfied = false;
};

struct AssumptionReport {
  std::string assumption;
  std::vector<std::pair<std::string, double>> constants;
  std::vector<Inequality> inequalities;
  std::string sampling;
  std::vector<std::string> notes;
  bool pass = false;

  double constant(const std::string& name) const;
  std::string to_text() const;
};

AssumptionReport audit_assumption1(const FbsdeCoefficients& c, double p, const SamplingGrid& grid);
AssumptionReport audit_assumption2(const FbsdeCoefficients& c, const SamplingGrid& grid);

enum class GameAssumption { assume4, assume5 };
AssumptionReport audit_game_assumptions(const GameSpec& spec, GameAssumption which, const SamplingGrid& grid);

}  // namespace gmfg
