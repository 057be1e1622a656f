#include <cmath>

#include "doctest.h"
#include "gmfg/errors.hpp"
#include "gmfg/graphon.hpp"
#include "gmfg/lq_riccati.hpp"

using namespace gmfg;

namespace {

Eigen::MatrixXd product_blocks(std::size_t m) { return sampled_matrix(make_graphon("product"), m); }

// Two-point boundary problem for the deterministic means (m, E[Y]) solved by
// multiple shooting; independent of the Riccati decoupling.
struct ShootingResult {
  std::vector<double> t;
  Eigen::MatrixXd m, y;
};

ShootingResult shooting_oracle(const LqGameParams& p, const Eigen::MatrixXd& g, const Eigen::VectorXd& m0,
                               std::size_t segments, std::size_t sub) {
  const Eigen::Index M = g.rows(), d = 2 * M;
  const double T = p.T, hs = T / double(segments), h = hs / double(sub);
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(d, d);
  A.topLeftCorner(M, M) = p.b2 * Eigen::MatrixXd::Identity(M, M) + p.beta1 * g / double(M);
  A.topRightCorner(M, M) = -p.b3 * p.b3 * Eigen::MatrixXd::Identity(M, M);
  A.bottomLeftCorner(M, M) = -p.eta1 * Eigen::MatrixXd::Identity(M, M);
  A.bottomRightCorner(M, M) = -p.b2 * Eigen::MatrixXd::Identity(M, M);
  Eigen::VectorXd a(d);
  a.head(M) = p.beta0 * g.rowwise().sum() / double(M);
  a.tail(M).setConstant(-p.eta0);
  // propagate [Phi | phi] over one segment (autonomous system)
  Eigen::MatrixXd Z = Eigen::MatrixXd::Zero(d, d + 1);
  Z.leftCols(d).setIdentity();
  auto f = [&](const Eigen::MatrixXd& z) {
    Eigen::MatrixXd out = A * z;
    out.col(d) += a;
    return out;
  };
  for (std::size_t s = 0; s < sub; ++s) {
    const Eigen::MatrixXd k1 = f(Z), k2 = f(Z + 0.5 * h * k1), k3 = f(Z + 0.5 * h * k2), k4 = f(Z + h * k3);
    Z += h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4);
  }
  const Eigen::MatrixXd Phi = Z.leftCols(d);
  const Eigen::VectorXd phi = Z.col(d);
  const Eigen::Index K = Eigen::Index(segments), nu = d * K;
  Eigen::MatrixXd L = Eigen::MatrixXd::Zero(nu, nu);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(nu);
  Eigen::Index row = 0;
  for (Eigen::Index i = 0; i < M; ++i, ++row) {
    L(row, i) = 1.0;
    rhs[row] = m0[i];
  }
  for (Eigen::Index k = 0; k + 1 < K; ++k) {
    L.block(row, k * d, d, d) = Phi;
    L.block(row, (k + 1) * d, d, d) -= Eigen::MatrixXd::Identity(d, d);
    rhs.segment(row, d) = -phi;
    row += d;
  }
  // terminal: y_T - rho1 m_T = rho0 with z_T = Phi z_{K-1} + phi
  Eigen::MatrixXd sel = Eigen::MatrixXd::Zero(M, d);
  sel.rightCols(M).setIdentity();
  sel.leftCols(M) = -p.rho1 * Eigen::MatrixXd::Identity(M, M);
  L.block(row, (K - 1) * d, M, d) = sel * Phi;
  rhs.segment(row, M) = Eigen::VectorXd::Constant(M, p.rho0) - sel * phi;
  const Eigen::VectorXd z = L.partialPivLu().solve(rhs);
  ShootingResult out;
  out.m.resize(M, K + 1);
  out.y.resize(M, K + 1);
  for (Eigen::Index k = 0; k < K; ++k) {
    out.t.push_back(double(k) * hs);
    out.m.col(k) = z.segment(k * d, M);
    out.y.col(k) = z.segment(k * d + M, M);
  }
  const Eigen::VectorXd zT = Phi * z.segment((K - 1) * d, d) + phi;
  out.t.push_back(T);
  out.m.col(K) = zT.head(M);
  out.y.col(K) = zT.tail(M);
  return out;
}

}  // namespace

TEST_CASE("zero source and terminal give p = 0") {
  LqGameParams p;
  p.eta1 = 0.0;
  p.rho1 = 0.0;
  RiccatiOptions o;
  o.steps = 512;
  o.halving_check = false;
  auto r = solve_riccati_limit(lq_spec(p), product_blocks(3), Eigen::VectorXd::Ones(3), Eigen::VectorXd::Zero(3), o);
  for (double v : r.p) CHECK(v == 0.0);
}

TEST_CASE("terminal conditions are exact") {
  auto p = lq_preset_params("lq-dissipative");
  p.rho0 = 0.3;
  RiccatiOptions o;
  o.steps = 2048;
  o.halving_check = false;
  auto r = solve_riccati_limit(lq_spec(p), product_blocks(4), Eigen::VectorXd::LinSpaced(4, -1, 1),
                               Eigen::VectorXd::Zero(4), o);
  CHECK(r.p.back() == p.rho1);
  for (Eigen::Index i = 0; i < 4; ++i) CHECK(r.q(i, r.q.cols() - 1) == 0.3);
  CHECK(r.m.col(0).isApprox(Eigen::VectorXd::LinSpaced(4, -1, 1)));
}

TEST_CASE("constant graphon with identical initial means keeps means identical") {
  auto p = lq_preset_params("lq-dissipative");
  RiccatiOptions o;
  o.steps = 1024;
  o.halving_check = false;
  Eigen::MatrixXd g = Eigen::MatrixXd::Constant(5, 5, 0.7);
  auto r = solve_riccati_limit(lq_spec(p), g, Eigen::VectorXd::Constant(5, 0.4), Eigen::VectorXd::Zero(5), o);
  for (Eigen::Index j = 0; j < r.m.cols(); ++j) {
    CHECK(r.m.col(j).maxCoeff() == r.m.col(j).minCoeff());
    CHECK(r.q.col(j).maxCoeff() == r.q.col(j).minCoeff());
  }
}

TEST_CASE("limit Riccati self-validation and shooting oracle") {
  auto p = lq_preset_params("lq-dissipative");
  const std::size_t M = 4;
  const Eigen::MatrixXd g = product_blocks(M);
  const Eigen::VectorXd m0 = Eigen::VectorXd::LinSpaced(M, 0.5, 2.0);
  RiccatiOptions o;
  o.multiple_of = 1024;
  auto r = solve_riccati_limit(lq_spec(p), g, m0, Eigen::VectorXd::Constant(M, 0.25), o);
  CHECK(r.meta.max_residual < 1e-8);
  CHECK(r.meta.halving_change < 1e-8);
  CHECK(r.meta.steps % 1024 == 0);
  auto s = shooting_oracle(p, g, m0, 64, 256);
  double err = 0.0;
  for (std::size_t k = 0; k < s.t.size(); ++k)
    for (std::size_t i = 0; i < M; ++i) {
      err = std::max(err, std::abs(r.mean_at(i, s.t[k]) - s.m(i, k)));
      err = std::max(err, std::abs(r.y_mean_at(i, s.t[k]) - s.y(i, k)));
    }
  CHECK(err < 1e-6);
  // stationary variance of the OU part
  CHECK(r.var_at(0, 0.5) == doctest::Approx(1.0 / (2.0 * (200.0 + r.p_at(0.5)))).epsilon(1e-4));
}

TEST_CASE("blow-up is reported") {
  LqGameParams p;
  p.b2 = 0.0;
  p.b3 = 1.0;
  RiccatiOptions o;
  o.steps = 4096;
  o.halving_check = false;
  // negative curvature cannot be expressed through LqGameParams; use an explicit spec
  LqSpec s = lq_spec(p);
  s.b3 = [](double) { return 1.0; };
  s.eta1 = [](double) { return 0.0; };
  s.rho1 = 0.0;
  s.b2 = [](double) { return 0.0; };
  s.eta0 = [](double) { return 0.0; };
  // p' = p^2 - eta1 with eta1 < 0 is excluded by validation
  LqSpec bad = s;
  bad.eta1 = [](double) { return -1.0; };
  CHECK_THROWS_AS(solve_riccati_limit(bad, Eigen::MatrixXd::Ones(1, 1), Eigen::VectorXd::Zero(1),
                                      Eigen::VectorXd::Zero(1), o),
                  ValidationError);
  // dp/dt = -2 b2 p with b2 > 0 grows backward: p(0) = e^{2 b2 T}
  LqSpec grow = s;
  grow.rho1 = 1.0;
  grow.b2 = [](double) { return 20.0; };
  grow.b3 = [](double) { return 0.0; };
  RiccatiOptions g = o;
  g.guard = 1e6;
  CHECK_THROWS_AS(solve_riccati_limit(grow, Eigen::MatrixXd::Ones(1, 1), Eigen::VectorXd::Zero(1),
                                      Eigen::VectorXd::Zero(1), g),
                  NumericError);
}

TEST_CASE("affine extraction") {
  auto p = lq_preset_params("lq-coercive");
  auto s = lq_spec_from(lq_game(p));
  CHECK(s.beta1(0.3) == doctest::Approx(p.beta1));
  CHECK(s.beta0(0.3) == doctest::Approx(p.beta0));
  CHECK(s.eta1(0.3) == doctest::Approx(p.eta1));
  CHECK(s.eta1_hat(0.0) == doctest::Approx(p.eta1_hat));
  CHECK(s.rho1 == doctest::Approx(p.rho1));
  CHECK(s.rho1_hat == doctest::Approx(p.rho1_hat));
  CHECK_THROWS_AS(lq_spec_from(game_preset("nonlinear-tanh")), CapabilityError);
}

TEST_CASE("linear n-player system with one player matches the limit") {
  auto p = lq_preset_params("lq-dissipative");
  p.beta1 = 0.0;
  RiccatiOptions o;
  o.halving_check = false;
  const Eigen::MatrixXd g = Eigen::MatrixXd::Constant(1, 1, 0.6);
  auto lim = solve_riccati_limit(lq_spec(p), g, Eigen::VectorXd::Zero(1), Eigen::VectorXd::Zero(1), o);
  auto np = solve_riccati_linear_nplayer(lq_spec(p), g, o);
  for (std::size_t j = 0; j < lim.nodes(); j += 97) {
    CHECK(np.P(j)(0, 0) == doctest::Approx(lim.p[j]).epsilon(1e-12));
    CHECK(np.q(j)[0] == doctest::Approx(lim.q(0, j)).epsilon(1e-10));
  }
  CHECK(np.meta.max_residual < 1e-8);
}

TEST_CASE("game Riccati: vanishing off-diagonal sources") {
  LqGameParams p;
  p.beta1 = 0.0;
  p.eta1_hat = 0.0;
  p.rho1_hat = 0.0;
  GameRiccatiOptions o;
  o.ode.steps = 512;
  o.ode.halving_check = false;
  o.report_times = {0.0, 0.5, 1.0};
  const std::size_t n = 6;
  auto r = solve_riccati_nplayer(lq_spec(p), product_blocks(n), o);
  for (std::size_t s = 0; s < 3; ++s)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if (i != j) {
          CHECK(r.row(s, i, j, lq_spec(p)).cwiseAbs().maxCoeff() == 0.0);
          CHECK(r.kappa[s](j, i) == 0.0);
        }
  auto mom = game_moments(r, lq_spec(p), Eigen::VectorXd::Ones(n), Eigen::VectorXd::Ones(n));
  for (double v : mom.max_offdiag) CHECK(v == 0.0);
}

TEST_CASE("game Riccati with one player matches the limit") {
  LqGameParams p = lq_preset_params("lq-dissipative");
  p.beta1 = 0.0;
  p.eta1_hat = 0.0;
  p.rho1_hat = 0.0;
  p.rho0 = 0.2;
  p.eta0 = 0.1;
  GameRiccatiOptions o;
  o.ode.steps = 1024;
  o.ode.halving_check = false;
  const Eigen::MatrixXd g = Eigen::MatrixXd::Constant(1, 1, 0.8);
  auto r = solve_riccati_nplayer(lq_spec(p), g, o);
  auto lim = solve_riccati_limit(lq_spec(p), g, Eigen::VectorXd::Zero(1), Eigen::VectorXd::Zero(1), o.ode);
  for (std::size_t j = 0; j < lim.nodes(); ++j) {
    CHECK(r.D[j](0, 0) == doctest::Approx(lim.p[j]).epsilon(1e-12));
    CHECK(r.d[j][0] == doctest::Approx(lim.q(0, j)).epsilon(1e-10));
  }
}

TEST_CASE("game Riccati: diagonal feedback approaches p and off-diagonal moments shrink like 1/n") {
  auto p = lq_preset_params("lq-dissipative");
  const auto spec = lq_spec(p);
  std::vector<double> scaled;
  double prev_gap = INFINITY;
  for (std::size_t n : {8, 16, 32}) {
    GameRiccatiOptions o;
    o.ode.steps = 1024;
    o.ode.halving_check = false;
    o.report_times = {0.0, 0.5, 1.0};
    const Eigen::MatrixXd g = product_blocks(n);
    auto r = solve_riccati_nplayer(spec, g, o);
    RiccatiOptions lo = o.ode;
    auto lim = solve_riccati_limit(spec, g, Eigen::VectorXd::Ones(n), Eigen::VectorXd::Constant(n, 0.1), lo);
    double gap = 0.0;
    for (std::size_t j = 0; j < r.t.size(); ++j)
      for (std::size_t i = 0; i < n; ++i) gap = std::max(gap, std::abs(r.D[j](i, i) - lim.p[j]));
    CHECK(gap < prev_gap);
    prev_gap = gap;
    auto mom = game_moments(r, spec, Eigen::VectorXd::Ones(n), Eigen::VectorXd::Constant(n, 0.1));
    double mx = 0.0;
    for (double v : mom.max_offdiag) mx = std::max(mx, v);
    scaled.push_back(double(n) * mx);
  }
  CHECK(scaled.back() < 2.0 * scaled.front());
  CHECK(scaled.back() > 0.0);
}

TEST_CASE("game Riccati: label swap symmetry and budget") {
  auto p = lq_preset_params("lq-dissipative");
  GameRiccatiOptions o;
  o.ode.steps = 256;
  o.ode.halving_check = false;
  o.report_times = {0.25};
  Eigen::MatrixXd g(2, 2);
  g << 0.4, 0.9, 0.9, 0.4;
  auto r = solve_riccati_nplayer(lq_spec(p), g, o);
  auto a = r.row(0, 0, 1, lq_spec(p)), b = r.row(0, 1, 0, lq_spec(p));
  CHECK(a[0] == doctest::Approx(b[1]).epsilon(1e-12));
  CHECK(a[1] == doctest::Approx(b[0]).epsilon(1e-12));
  CHECK(r.kappa[0](1, 0) == doctest::Approx(r.kappa[0](0, 1)).epsilon(1e-12));
  o.budget = 1;
  CHECK_THROWS_AS(solve_riccati_nplayer(lq_spec(p), g, o), CapabilityError);
}
