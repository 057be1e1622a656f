#include <cmath>
#include <cstdio>
#include <fstream>

#include "doctest.h"
#include "gmfg/errors.hpp"
#include "gmfg/limit_solver.hpp"

using namespace gmfg;

namespace {

FbsdeCoefficients zero_system(double sigma = 1.0) {
  FbsdeCoefficients c;
  c.B0 = [](double, double, double) { return 0.0; };
  c.F0 = [](double, double, double) { return 0.0; };
  c.Q0 = [](double) { return 0.0; };
  c.sigma = sigma;
  return c;
}

DiscretizationGrid small_grid(std::size_t m, std::size_t N, std::size_t P) {
  DiscretizationGrid g;
  g.m = m;
  g.N = N;
  g.P = P;
  return g;
}

YField constant_field(const DiscretizationGrid& g, double c) {
  YField y;
  y.reset(g.m, g.fine_steps(), PolyFit::constant(c));
  return y;
}

bool same_bits(const PathSet& a, const PathSet& b) { return a.x == b.x && a.y == b.y; }

}  // namespace

TEST_CASE("pure noise: X is Brownian, Y vanishes, first residual is zero") {
  auto grid = small_grid(2, 16, 4000);
  auto sol = solve_picard(zero_system(), Graphon::constant(1.0), InitialLaw::point(0.0), grid);
  CHECK(sol.meta.converged);
  CHECK(sol.meta.iterations == 1);
  CHECK(sol.meta.history.front() == 0.0);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t k = 0; k <= 16; k += 4) {
      const auto s = sol.summary(i, k);
      const double t = grid.times()[k];
      CHECK(std::abs(s.mean_x) < 4.0 * std::sqrt(t / 4000.0) + 1e-15);
      CHECK(s.var_x == doctest::Approx(t).epsilon(0.08));
      CHECK(s.mean_y == 0.0);
      CHECK(s.var_y == 0.0);
    }
}

TEST_CASE("deterministic decay matches the explicit product formula") {
  FbsdeCoefficients c = zero_system(1e-200);
  c.B0 = [](double, double x, double) { return -x; };
  auto grid = small_grid(1, 64, 4);
  const BrownianTable noise(1, 4, 64, grid.fine_dt());
  auto f = forward_sweep(c, Eigen::MatrixXd::Ones(1, 1), constant_field(grid, 0.0), InitialLaw::point(1.0), grid, noise);
  CHECK(f.flow.x_at(0, 64)[0] == doctest::Approx(std::pow(1.0 - 1.0 / 64.0, 64)).epsilon(1e-14));
  CHECK(f.flow.x_at(0, 64)[0] == doctest::Approx(0.364987).epsilon(1e-5));
  // with the linear part declared the step is exact
  c.x_rate = [](double) { return -1.0; };
  f = forward_sweep(c, Eigen::MatrixXd::Ones(1, 1), constant_field(grid, 0.0), InitialLaw::point(1.0), grid, noise);
  CHECK(f.flow.x_at(0, 64)[0] == doctest::Approx(std::exp(-1.0)).epsilon(1e-13));
}

TEST_CASE("constant graphon gives equal aggregates across types") {
  Interaction in;
  in.terms.push_back({[](double, double, double) { return 1.0; }, [](double, double x) { return x * x; }});
  std::vector<std::vector<double>> clouds{{1.0, 2.0}, {0.0, -1.0}, {3.0, 0.5}};
  std::vector<const double*> ptr{clouds[0].data(), clouds[1].data(), clouds[2].data()};
  auto a = aggregate(in, 0.0, Eigen::MatrixXd::Constant(3, 3, 0.7), ptr, 2, 2);
  const double expect = 0.7 * (2.5 + 0.5 + 4.625) / 3.0;
  for (std::size_t i = 0; i < 3; ++i) CHECK(std::abs(a.at(i, 0) - expect) < 1e-12);
}

TEST_CASE("constant terminal value propagates unchanged") {
  FbsdeCoefficients c = zero_system();
  c.Q0 = [](double) { return 0.75; };
  auto sol = solve_picard(c, Graphon::constant(1.0), InitialLaw::gaussian(0.0, 1.0), small_grid(2, 8, 500));
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t k = 0; k <= 8; ++k) {
      const auto s = sol.summary(i, k);
      CHECK(s.mean_y == doctest::Approx(0.75).epsilon(1e-12));
      CHECK(s.var_y < 1e-20);
    }
}

TEST_CASE("explicit backward step reproduces (1 + dt)^N") {
  FbsdeCoefficients c = zero_system(1e-200);
  c.F0 = [](double, double, double y) { return y; };
  c.Q0 = [](double) { return 1.0; };
  auto grid = small_grid(1, 64, 8);
  grid.scheme = BackwardScheme::explicit_euler;
  auto sol = solve_picard(c, Graphon::constant(0.0), InitialLaw::point(0.0), grid);
  CHECK(sol.summary(0, 0).mean_y == doctest::Approx(std::pow(1.0 + 1.0 / 64.0, 64)).epsilon(1e-12));
  CHECK(sol.summary(0, 0).mean_y == doctest::Approx(2.6973).epsilon(1e-4));
  grid.scheme = BackwardScheme::trapezoid;
  sol = solve_picard(c, Graphon::constant(0.0), InitialLaw::point(0.0), grid);
  CHECK(sol.summary(0, 0).mean_y == doctest::Approx(std::exp(1.0)).epsilon(1e-4));
}

TEST_CASE("martingale terminal: Y = X with Z = sigma") {
  FbsdeCoefficients c = zero_system(0.8);
  c.Q0 = [](double x) { return x; };
  auto grid = small_grid(1, 16, 4000);
  auto sol = solve_picard(c, Graphon::constant(0.0), InitialLaw::gaussian(0.0, 1.0), grid);
  for (std::size_t l = 0; l <= grid.fine_steps(); ++l) {
    const PolyFit& f = sol.y_field.at(0, l);
    // Monte Carlo noise in the regressions accumulates like a random walk: O(sigma / sqrt(P))
    CHECK(std::abs(f(0.0)) < 0.06);
    CHECK(std::abs(f(1.0) - 1.0) < 0.06);
  }
  CHECK(sol.z_mean[0] == doctest::Approx(0.8).epsilon(0.06));
}

TEST_CASE("decoupled linear system converges at once and matches the Riccati means") {
  LqGameParams p;
  p.beta1 = 0.0;
  p.beta0 = 0.0;
  p.b2 = -1.0;
  p.b3 = 0.0;
  p.eta1 = 1.0;
  p.eta0 = 0.3;
  p.eta1_hat = 0.0;
  p.rho1 = 1.0;
  p.rho0 = 0.2;
  p.rho1_hat = 0.0;
  auto game = lq_game(p);
  auto grid = small_grid(2, 32, 4000);
  auto init = InitialLaw::linear(0.5, 1.0, 0.3);
  auto sol = solve_picard(reduce_to_fbsde(game), Graphon::constant(1.0), init, grid);
  REQUIRE(sol.meta.converged);
  CHECK(sol.meta.iterations <= 3);
  Eigen::VectorXd m0(2), v0(2);
  for (std::size_t i = 0; i < 2; ++i) {
    m0(i) = init.mean(grid.labels()[i].value());
    v0(i) = 0.09;
  }
  auto ric = solve_riccati_limit(lq_spec(p), Eigen::MatrixXd::Zero(2, 2), m0, v0);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t k = 0; k <= 32; k += 8) {
      const double t = grid.times()[k];
      const auto s = sol.summary(i, k);
      const double se_x = std::sqrt(s.var_x / 4000.0), se_y = std::sqrt(s.var_y / 4000.0);
      CHECK(std::abs(s.mean_x - ric.mean_at(i, t)) < 4.0 * se_x + 1e-3);
      CHECK(std::abs(s.mean_y - ric.y_mean_at(i, t)) < 4.0 * se_y + 2e-3);
    }
}

TEST_CASE("coupled dissipative system: Picard contracts towards the Riccati oracle") {
  auto game = game_preset("lq-dissipative");
  auto grid = small_grid(4, 32, 2000);
  grid.threads = 2;
  auto init = InitialLaw::linear(0.0, 1.0, 0.1);
  PicardOptions po;
  po.tol = 1e-6;
  auto sol = solve_picard(reduce_to_fbsde(game), make_graphon("product"), init, grid, po);
  REQUIRE(sol.meta.converged);
  const auto& h = sol.meta.history;
  for (std::size_t k = 2; k < h.size(); ++k) CHECK(h[k] < h[k - 1]);
  Eigen::VectorXd m0(4), v0 = Eigen::VectorXd::Constant(4, 0.01);
  for (std::size_t i = 0; i < 4; ++i) m0(i) = grid.labels()[i].value();
  auto ric = solve_riccati_limit(lq_spec_from(game), sampled_matrix(make_graphon("product"), 4), m0, v0);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t k : {4, 16, 32}) {
      const double t = grid.times()[k];
      const auto s = sol.summary(i, k);
      CHECK(std::abs(s.mean_x - ric.mean_at(i, t)) < 4.0 * std::sqrt(s.var_x / 2000.0) + 2e-3);
    }
}

TEST_CASE("linear initializer closed form") {
  auto one = [](double) { return 1.0; };
  CHECK(initializer_offset(one, {}, 0.0, 0.0, 1.0) == doctest::Approx(1.0 - std::exp(-1.0)).epsilon(1e-13));
  CHECK(initializer_offset({}, {}, 2.0, 0.25, 1.0) == doctest::Approx(2.0 * std::exp(-0.75)).epsilon(1e-14));
  auto grid = small_grid(1, 8, 16);
  const BrownianTable noise(3, 16, 8, grid.fine_dt());
  auto s = solve_linear_initializer({}, {}, 0.0, 1.0, InitialLaw::point(0.5), grid, noise);
  for (std::size_t k = 0; k <= 8; ++k)
    for (std::size_t p = 0; p < 16; ++p) CHECK(s.flow.y_at(0, k)[p] == s.flow.x_at(0, k)[p]);
}

TEST_CASE("single-step continuation equals Picard on the zero system") {
  auto grid = small_grid(2, 8, 300);
  ContinuationOptions co;
  co.delta = 1.0;
  auto a = solve_by_continuation(zero_system(), Graphon::constant(1.0), InitialLaw::gaussian(0.0, 1.0), grid, co);
  auto b = solve_picard(zero_system(), Graphon::constant(1.0), InitialLaw::gaussian(0.0, 1.0), grid);
  CHECK(a.meta.path == "continuation");
  CHECK(same_bits(a.flow, b.flow));
}

TEST_CASE("continuation reaches the full system and agrees with Picard") {
  auto game = game_preset("lq-dissipative");
  auto c = reduce_to_fbsde(game);
  auto grid = small_grid(2, 16, 1000);
  auto init = InitialLaw::linear(0.0, 1.0, 0.1);
  auto a = solve_by_continuation(c, make_graphon("product"), init, grid);
  auto b = solve_picard(c, make_graphon("product"), init, grid);
  REQUIRE(a.meta.converged);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t k = 0; k <= 16; k += 4) {
      const auto sa = a.summary(i, k), sb = b.summary(i, k);
      CHECK(std::abs(sa.mean_x - sb.mean_x) < 1e-6);
      CHECK(std::abs(sa.mean_y - sb.mean_y) < 1e-6);
    }
}

TEST_CASE("results do not depend on the thread count") {
  auto c = reduce_to_fbsde(game_preset("nonlinear-tanh"));
  auto grid = small_grid(5, 8, 400);
  auto init = InitialLaw::linear(0.0, 1.0, 0.2);
  grid.threads = 1;
  auto a = solve_picard(c, make_graphon("min"), init, grid);
  grid.threads = 4;
  auto b = solve_picard(c, make_graphon("min"), init, grid);
  CHECK(same_bits(a.flow, b.flow));
  CHECK(a.meta.history == b.meta.history);
}

TEST_CASE("constant graphon with shared type noise: types are exchangeable") {
  auto c = reduce_to_fbsde(game_preset("nonlinear-tanh"));
  auto grid = small_grid(4, 8, 500);
  grid.shared_type_noise = true;
  auto sol = solve_picard(c, Graphon::constant(0.6), InitialLaw::gaussian(0.3, 0.5), grid);
  for (std::size_t i = 1; i < 4; ++i)
    for (std::size_t k = 0; k <= 8; ++k) {
      const auto a = sol.summary(0, k), b = sol.summary(i, k);
      CHECK(std::abs(a.mean_x - b.mean_x) <= 1e-12);
      CHECK(std::abs(a.var_x - b.var_x) <= 1e-12);
      CHECK(std::abs(a.mean_y - b.mean_y) <= 1e-12);
      CHECK(std::abs(a.var_y - b.var_y) <= 1e-12);
    }
}

TEST_CASE("zero interaction: a label's solution ignores the rest of the type grid") {
  auto c = reduce_to_fbsde(game_preset("lq-dissipative"));
  auto init = InitialLaw::linear(0.0, 1.0, 0.2);
  auto a = solve_picard(c, make_graphon("zero"), init, small_grid(2, 8, 300));
  auto b = solve_picard(c, make_graphon("zero"), init, small_grid(4, 8, 300));
  // label 1/2 is type 0 of the first grid and type 1 of the second
  for (std::size_t k = 0; k <= 8; ++k)
    for (std::size_t p = 0; p < 300; ++p) {
      CHECK(a.flow.x_at(0, k)[p] == b.flow.x_at(1, k)[p]);
      CHECK(a.flow.y_at(0, k)[p] == b.flow.y_at(1, k)[p]);
    }
}

TEST_CASE("closed-loop LQ simulation tracks the discrete mean recursion") {
  auto p = lq_preset_params("lq-dissipative");
  auto spec = lq_spec(p);
  spec.sigma = 1e-200;  // effectively noiseless
  auto grid = small_grid(3, 16, 4);
  RiccatiOptions ro;
  ro.multiple_of = grid.fine_steps();
  Eigen::VectorXd m0(3), v0 = Eigen::VectorXd::Zero(3);
  for (std::size_t i = 0; i < 3; ++i) m0(i) = grid.labels()[i].value();
  const Eigen::MatrixXd g = sampled_matrix(make_graphon("product"), 3);
  auto ric = solve_riccati_limit(spec, g, m0, v0, ro);
  const BrownianTable noise(1, 4, 16, grid.fine_dt());
  auto r = simulate_limit_lq(spec, g, grid.labels(), InitialLaw::linear(0.0, 1.0, 0.0), grid, noise, ric);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t k = 0; k <= 16; ++k) {
      CHECK(std::abs(r.flow.x_at(i, k)[2] - r.discrete_means[i][k]) < 1e-12);
      CHECK(std::abs(r.discrete_means[i][k] - ric.mean_at(i, grid.times()[k])) < 0.05);
    }
}

TEST_CASE("validation and divergence errors") {
  auto grid = small_grid(2, 8, 100);
  grid.P = 1;
  CHECK_THROWS_AS(solve_picard(zero_system(), Graphon::constant(1.0), InitialLaw::point(0.0), grid), ValidationError);
  FbsdeCoefficients c = zero_system();
  c.B0 = [](double, double x, double) { return x * x * 1e6; };
  CHECK_THROWS_AS(solve_picard(c, Graphon::constant(1.0), InitialLaw::point(1.0), small_grid(1, 8, 50)), NumericError);
}

TEST_CASE("binary path export") {
  auto grid = small_grid(2, 4, 3);
  auto sol = solve_picard(zero_system(), Graphon::constant(1.0), InitialLaw::point(0.0), grid);
  const std::string base = "test_limit_paths";
  write_paths_binary(sol.flow, base);
  std::ifstream f(base + ".bin", std::ios::binary | std::ios::ate);
  CHECK(std::size_t(f.tellg()) == 2 * 2 * 5 * 3 * sizeof(double));
  std::ifstream j(base + ".json");
  CHECK(j.good());
  std::remove((base + ".bin").c_str());
  std::remove((base + ".json").c_str());
}
