#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

#include "gmfg/errors.hpp"
#include "gmfg/graphon.hpp"
#include "gmfg/harness.hpp"
#include "gmfg/lq_riccati.hpp"
#include "gmfg/nplayer.hpp"

using namespace gmfg;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr int kOk = 0, kValidation = 2, kSolver = 3;

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::size_t> threads;
};

ExperimentConfig load(const Globals& g) {
  ExperimentConfig c = g.config.empty() ? ExperimentConfig::from_json(json::object()) : ExperimentConfig::load(g.config);
  if (g.seed) c.seed = *g.seed;
  if (g.out) c.out = *g.out;
  if (g.threads) c.threads = *g.threads;
  c.validate();
  return c;
}

fs::path out_dir(const ExperimentConfig& c) {
  std::error_code ec;
  fs::create_directories(c.out, ec);
  if (ec) throw std::runtime_error("cannot create output directory " + c.out + ": " + ec.message());
  return fs::path(c.out);
}

void write_json(const fs::path& p, const json& j) {
  std::ofstream f(p, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + p.string());
  f << j.dump(2) << '\n';
}

json meta_json(const SolverMeta& m) {
  return {{"path", m.path},         {"iterations", m.iterations}, {"converged", m.converged},
          {"history", m.history},   {"max_ridge", m.max_ridge},   {"notes", m.notes}};
}

int report(const ResultRecord& r, const ExperimentConfig& c) {
  emit_outputs(r, c.out);
  for (const auto& p : r.points)
    std::cout << r.param_name << '=' << p.param << "  error=" << p.error << " (se " << p.std_error << ")  " << p.status
              << '\n';
  for (const auto& f : r.fits) {
    if (!f.fitted) continue;
    std::cout << f.name << ": slope " << f.fit.slope << ", r^2 " << f.fit.r_squared;
    if (f.has_band) std::cout << (f.pass ? "  [within band]" : "  [outside band]");
    std::cout << '\n';
  }
  for (const auto& n : r.notes) std::cout << "note: " << n << '\n';
  std::cout << "outputs in " << c.out << " (config " << r.config_hash << ", " << r.wall_seconds << " s)\n";
  return r.failed() ? kSolver : kOk;
}

int solve_limit_cmd(const Globals& g) {
  const auto c = load(g);
  const auto coeffs = reduce_to_fbsde(c.game());
  const auto grid = c.grid_with(c.grid.m);
  LimitSolution s;
  if (c.solver == "continuation") {
    ContinuationOptions co = c.continuation;
    co.inner = c.picard;
    s = solve_by_continuation(coeffs, c.base_graphon(), c.initial_law(), grid, co);
  } else {
    s = solve_picard(coeffs, c.base_graphon(), c.initial_law(), grid, c.picard);
  }
  const auto dir = out_dir(c);
  write_summary_csv(s, (dir / "summary.csv").string());
  write_history_csv(s.meta, (dir / "picard_history.csv").string());
  if (c.dump_paths) write_paths_binary(s.flow, (dir / "paths").string());
  write_json(dir / "meta.json", {{"config", c.canonical()}, {"hash", c.hash()}, {"solver", meta_json(s.meta)}});
  std::cout << s.meta.path << ": " << s.meta.iterations << " iterations, converged " << std::boolalpha
            << s.meta.converged << "; outputs in " << c.out << '\n';
  return s.meta.converged ? kOk : kSolver;
}

int simulate_n_cmd(const Globals& g, const std::string& mode) {
  const auto c = load(g);
  const auto spec = c.game();
  const auto grid = c.grid_with(c.n);
  const BrownianTable noise(grid.seed, grid.P, grid.fine_steps(), grid.fine_dt());
  const Eigen::MatrixXd gn = sampled_matrix(c.base_graphon(), c.n);
  NPlayerSolution s;
  if (mode == "game") {
    GameOptions go;
    try {
      (void)lq_spec_from(spec);
    } catch (const CapabilityError&) {
      go.method = GameMethod::regression;
    }
    go.riccati.budget = c.riccati_budget;
    go.riccati.ode.halving_check = c.riccati_halving;
    go.dense_factor = c.dense_factor;
    go.picard = c.picard;
    s = simulate_game(spec, gn, c.initial_law(), grid, noise, go);
  } else if (mode == "linear") {
    RiccatiOptions ro;
    ro.steps = c.dense_factor * grid.fine_steps();
    ro.multiple_of = grid.fine_steps();
    ro.halving_check = c.riccati_halving;
    const auto lq = lq_spec_from(spec);
    s = simulate_linear_lq(lq, gn, c.initial_law(), grid, noise, solve_riccati_linear_nplayer(lq, gn, ro));
  } else {
    s = simulate_generic(reduce_to_fbsde(spec), gn, c.initial_law(), grid, noise, c.picard);
  }
  const auto dir = out_dir(c);
  write_path_summary_csv(s.paths, (dir / "summary.csv").string());
  if (!s.meta.history.empty()) write_history_csv(s.meta, (dir / "picard_history.csv").string());
  if (!s.offdiag_msq.empty()) write_offdiag_csv(s, (dir / "offdiag_stats.csv").string());
  if (c.dump_paths) write_paths_binary(s.paths, (dir / "paths").string());
  write_json(dir / "meta.json", {{"config", c.canonical()},
                                 {"hash", c.hash()},
                                 {"n", c.n},
                                 {"method", s.method},
                                 {"approximate_basis", s.approximate_basis},
                                 {"solver", meta_json(s.meta)}});
  std::cout << s.method << " with n = " << c.n << "; outputs in " << c.out << '\n';
  return s.meta.path.empty() || s.meta.converged ? kOk : kSolver;
}

int audit_cmd(const Globals& g) {
  const auto c = load(g);
  const auto spec = c.game();
  const auto coeffs = reduce_to_fbsde(spec);
  const SamplingGrid sg;
  const std::vector<AssumptionReport> reports = {
      audit_game_assumptions(spec, GameAssumption::assume4, sg),
      audit_game_assumptions(spec, GameAssumption::assume5, sg),
      audit_assumption1(coeffs, 2.0, sg),
      audit_assumption2(coeffs, sg),
  };
  std::string text;
  json j = json::array();
  for (const auto& r : reports) {
    text += r.to_text() + "\n";
    j.push_back({{"assumption", r.assumption}, {"pass", r.pass}});
  }
  const auto dir = out_dir(c);
  std::ofstream(dir / "audit.txt", std::ios::binary) << text;
  write_json(dir / "audit.json", {{"preset", c.preset}, {"hash", c.hash()}, {"reports", j}});
  std::cout << text;
  return kOk;
}

int cutnorm_cmd(const Globals& g, std::string a, const std::string& b, std::size_t level) {
  const auto c = load(g);
  if (a.empty()) a = c.graphon;
  const Graphon ga = make_graphon(a), gb = make_graphon(b);
  auto as_step = [level](const Graphon& x) { return x.is_step() ? x : sample_step(x, level); };
  const auto d = difference(as_step(ga), as_step(gb));
  const auto cut = cut_norm(d);
  const double l1 = l1_norm(d), l2 = l2_norm(d);
  const auto dir = out_dir(c);
  write_json(dir / "cutnorm.json", {{"a", a},
                                    {"b", b},
                                    {"level", level},
                                    {"cut", cut.value},
                                    {"approximate", cut.approximate},
                                    {"l1", l1},
                                    {"l2", l2}});
  std::cout << "cut " << cut.value << (cut.approximate ? " (approximate)" : "") << "  l1 " << l1 << "  l2 " << l2
            << '\n';
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Graphon mean-field FBSDE solver and experiment runner"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config, "JSON experiment configuration")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "Random seed (overrides the config)");
  app.add_option("--out", g.out, "Output directory (overrides the config)");
  app.add_option("--threads", g.threads, "Worker threads (results do not depend on it)")->check(CLI::PositiveNumber);

  std::string mode = "game", cut_a, cut_b = "zero";
  std::size_t level = 16;
  auto* solve = app.add_subcommand("solve-limit", "Solve the limit FBSDE system (Picard or continuation)");
  auto* simn = app.add_subcommand("simulate-n", "Simulate an n-player system");
  simn->add_option("--mode", mode, "game, linear or generic")->check(CLI::IsMember({"game", "linear", "generic"}));
  auto* stab = app.add_subcommand("sweep-stability", "Graphon perturbation stability sweep");
  auto* poc = app.add_subcommand("sweep-poc", "Propagation-of-chaos sweep over n");
  auto* game = app.add_subcommand("sweep-game", "n-player game convergence sweep");
  auto* audit = app.add_subcommand("audit", "Audit the structural assumptions of the configured game");
  auto* cut = app.add_subcommand("cutnorm", "Cut, L1 and L2 distances between two graphons");
  cut->add_option("--a", cut_a, "First graphon (defaults to the config graphon)");
  cut->add_option("--b", cut_b, "Second graphon")->capture_default_str();
  cut->add_option("--level", level, "Step sampling level for analytic graphons")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kValidation;
  }

  try {
    if (solve->parsed()) return solve_limit_cmd(g);
    if (simn->parsed()) return simulate_n_cmd(g, mode);
    if (stab->parsed()) return report(run_stability_sweep(load(g)), load(g));
    if (poc->parsed()) return report(run_poc_sweep(load(g)), load(g));
    if (game->parsed()) return report(run_game_convergence(load(g)), load(g));
    if (audit->parsed()) return audit_cmd(g);
    if (cut->parsed()) return cutnorm_cmd(g, cut_a, cut_b, level);
  } catch (const ValidationError& e) {
    std::cerr << "validation error: " << e.what() << '\n';
    return kValidation;
  } catch (const DomainError& e) {
    std::cerr << "domain error: " << e.what() << '\n';
    return kValidation;
  } catch (const CapabilityError& e) {
    std::cerr << "unsupported: " << e.what() << '\n';
    return kValidation;
  } catch (const CouplingError& e) {
    std::cerr << "coupling error: " << e.what() << '\n';
    return kValidation;
  } catch (const NumericError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kSolver;
  } catch (const ConvergenceError& e) {
    std::cerr << "no convergence: " << e.what() << '\n';
    return kSolver;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return kOk;
}
