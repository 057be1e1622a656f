#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "gmfg/game_model.hpp"

namespace gmfg {

// Affine specialization of the game: b1 = beta1 x + beta0, df1 = eta1 x + eta0,
// df2 = eta1_hat x + eta0_hat, dq1 = rho1 x + rho0, dq2 = rho1_hat x + rho0_hat.
struct LqSpec {
  TimeFn beta1, beta0, b2, b3, eta1, eta0, eta1_hat, eta0_hat;
  double rho1 = 0.0, rho0 = 0.0, rho1_hat = 0.0, rho0_hat = 0.0;
  double sigma = 1.0;
  double T = 1.0;

  void validate() const;
};

LqSpec lq_spec(const LqGameParams& p);

// Reads the affine coefficients off a game spec; throws CapabilityError when
// b1 or any cost derivative is not affine in x on the sample grid.
LqSpec lq_spec_from(const GameSpec& spec);

struct RiccatiOptions {
  std::size_t steps = 0;           // dense RK4 steps; 0 picks from stiffness
  std::size_t multiple_of = 1;     // dense grid must refine the simulation grid
  double stiffness_step = 0.005;   // target h * stiffness when steps = 0
  std::size_t min_steps = 256;
  std::size_t max_steps = 100000;
  double tol = 1e-10;              // mean fixed-point tolerance
  double damping = 0.5;
  std::size_t max_iter = 1000;
  double guard = 1e8;              // |p| beyond this is reported as blow-up
  bool halving_check = true;
};

struct OdeMeta {
  std::string integrator = "rk4";
  std::size_t steps = 0;
  std::size_t mean_iterations = 0;
  double max_residual = 0.0;        // largest midpoint residual of the matched ODEs
  double halving_change = 0.0;      // relative change when the step is halved
  std::vector<double> mean_trace;   // fixed-point increments per iteration
};

// Limit system: Y = p X + q^i per type, means m^i and variances v^i.
struct LimitRiccati {
  std::vector<double> t;  // dense nodes
  std::vector<double> p, dp;
  Eigen::MatrixXd q, dq, m, dm, v, dv;  // types x nodes
  OdeMeta meta;

  std::size_t types() const { return static_cast<std::size_t>(q.rows()); }
  std::size_t nodes() const { return t.size(); }
  // Cubic Hermite interpolation between dense nodes.
  double p_at(double time) const;
  double q_at(std::size_t i, double time) const;
  double mean_at(std::size_t i, double time) const;
  double var_at(std::size_t i, double time) const;
  double y_mean_at(std::size_t i, double time) const { return p_at(time) * mean_at(i, time) + q_at(i, time); }
  double y_var_at(std::size_t i, double time) const {
    const double pv = p_at(time);
    return pv * pv * var_at(i, time);
  }
};

// `g` holds the block values on the uniform type grid (m x m).
LimitRiccati solve_riccati_limit(const LqSpec& spec, const Eigen::MatrixXd& g, const Eigen::VectorXd& init_means,
                                 const Eigen::VectorXd& init_vars, const RiccatiOptions& opt = {});

// Coupled n-player system with the limit's adjoint equation per player
// (the particle system of the propagation-of-chaos statement): Y = P X + q.
struct LinearNPlayerRiccati {
  Eigen::MatrixXd U;     // eigenvectors of the sampled graphon
  Eigen::VectorXd mu;    // eigenvalues
  std::vector<double> t;
  Eigen::MatrixXd pk;    // n x nodes, eigenvalues of P
  Eigen::MatrixXd qt;    // n x nodes, q in eigen coordinates
  Eigen::VectorXd g;     // constant interaction drift (beta0/n) G 1 at unit beta0
  OdeMeta meta;

  Eigen::MatrixXd P(std::size_t node) const;
  Eigen::VectorXd q(std::size_t node) const;
};

LinearNPlayerRiccati solve_riccati_linear_nplayer(const LqSpec& spec, const Eigen::MatrixXd& gn,
                                                  const RiccatiOptions& opt = {});

// n-player game adjoint system: Y^{ij} = rho_ij . X + kappa_i[j]. Stores the
// diagonal feedback (D, d) at every dense node and compact factors at the
// requested report nodes for off-diagonal statistics.
struct GameRiccati {
  std::size_t n = 0;
  std::size_t rank = 0;
  std::vector<double> t;
  std::vector<Eigen::MatrixXd> D;   // per node, rows rho_ii
  std::vector<Eigen::VectorXd> d;   // per node, kappa_i[i]
  Eigen::MatrixXd V;                // n x rank, graphon eigenvectors
  Eigen::VectorXd S;                // rank eigenvalues
  Eigen::MatrixXd G;
  std::vector<std::size_t> report_nodes;
  std::vector<Eigen::MatrixXd> H;                  // Theta2 + rho1_hat Xi
  std::vector<std::vector<Eigen::MatrixXd>> Omega; // per report node, per player (rank x n)
  std::vector<Eigen::MatrixXd> kappa;              // per report node, column i = kappa_i
  OdeMeta meta;

  // Row j of K_i at a report slot.
  Eigen::VectorXd row(std::size_t slot, std::size_t i, std::size_t j, const LqSpec& spec) const;
};

struct GameRiccatiOptions {
  RiccatiOptions ode;
  std::size_t budget = 64;        // largest n accepted
  std::vector<double> report_times;
  double rank_tol = 1e-12;
};

GameRiccati solve_riccati_nplayer(const LqSpec& spec, const Eigen::MatrixXd& gn, const GameRiccatiOptions& opt);

// Deterministic forward moments of the closed-loop game state and the largest
// off-diagonal second moment max_{i != j} E[(Y^{ij})^2] at every report slot.
struct GameMoments {
  std::vector<Eigen::VectorXd> mean;   // per dense node
  std::vector<double> max_offdiag;     // per report slot
};

GameMoments game_moments(const GameRiccati& r, const LqSpec& spec, const Eigen::VectorXd& init_means,
                         const Eigen::VectorXd& init_vars);

std::size_t auto_steps(const LqSpec& spec, const RiccatiOptions& opt);

}  // namespace gmfg
