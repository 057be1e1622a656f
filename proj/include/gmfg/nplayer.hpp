#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "gmfg/game_model.hpp"
#include "gmfg/limit_solver.hpp"
#include "gmfg/lq_riccati.hpp"
#include "gmfg/noise.hpp"
#include "gmfg/paths.hpp"

namespace gmfg {

// n-player trajectories over P independent worlds. Player i is label i/n and
// world p consumes path p of that label's noise stream, so player i couples
// to type i/n of a limit run sharing the table.
struct NPlayerSolution {
  PathSet paths;                     // x = X^i, y = Y^{ii}
  std::vector<double> control;       // alpha^i in game mode, PathSet layout; empty otherwise
  std::vector<double> offdiag_msq;   // per reporting time: max_{i != j} E (Y^{ij})^2 (LQ game only)
  std::string method;                // "generic-regression", "lq-linear", "lq-exact", "game-regression"
  bool approximate_basis = false;    // regression on (own state, neighbour mean) only
  SolverMeta meta;
};

// The grid's m field is the player count n; P is the number of worlds.
//
// Generic coupled system: Picard iteration with regression Monte Carlo, the
// interaction being the within-world average (1/n) sum_j G_ij B^(t, X^i, X^j, Y^i).
NPlayerSolution simulate_generic(const FbsdeCoefficients& c, const Eigen::MatrixXd& gn, const InitialLaw& init,
                                 const DiscretizationGrid& grid, const BrownianTable& noise,
                                 const PicardOptions& opt = {});

// Linear n-player system with the limit's adjoint equation per player,
// closed with Y = P X + q from solve_riccati_linear_nplayer. The Riccati
// dense grid must refine the simulation grid.
NPlayerSolution simulate_linear_lq(const LqSpec& spec, const Eigen::MatrixXd& gn, const InitialLaw& init,
                                   const DiscretizationGrid& grid, const BrownianTable& noise,
                                   const LinearNPlayerRiccati& riccati);

enum class GameMethod { lq_exact, regression };

struct GameOptions {
  GameMethod method = GameMethod::lq_exact;
  // lq_exact: report times are filled in; ode.steps = 0 selects dense_factor
  // Riccati steps per fine simulation step (the Riccati grid then matches the
  // limit-side solve of a coupled comparison).
  GameRiccatiOptions riccati;
  std::size_t dense_factor = 16;
  PicardOptions picard;              // regression
  bool offdiag = true;               // compute max_{i != j} E (Y^{ij})^2
};

// n-player game equilibrium. lq_exact solves the matrix Riccati system and
// simulates with alpha^i = -b3 (D_i X + d_i); regression keeps only Y^{ii}
// (the off-diagonal adjoints are O(1/n)) and is flagged as approximate.
NPlayerSolution simulate_game(const GameSpec& spec, const Eigen::MatrixXd& gn, const InitialLaw& init,
                              const DiscretizationGrid& grid, const BrownianTable& noise, const GameOptions& opt = {});

// Same with a precomputed Riccati solution (dense grid refining the simulation grid).
NPlayerSolution simulate_game_lq(const LqSpec& spec, const Eigen::MatrixXd& gn, const InitialLaw& init,
                                 const DiscretizationGrid& grid, const BrownianTable& noise, const GameRiccati& riccati,
                                 bool offdiag = true);

// CSV columns: t, n, max_offdiag_msq, n_times_msq.
void write_offdiag_csv(const NPlayerSolution& s, const std::string& path);

}  // namespace gmfg
