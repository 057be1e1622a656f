#include "gmfg/nplayer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "gmfg/errors.hpp"
#include "gmfg/metrics.hpp"
#include "gmfg/stepping.hpp"

namespace gmfg {

namespace {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

void check_inputs(const Eigen::MatrixXd& gn, const DiscretizationGrid& grid, const BrownianTable& noise) {
  grid.validate();
  if (std::size_t(gn.rows()) != grid.m || std::size_t(gn.cols()) != grid.m)
    throw ValidationError("n-player graphon matrix must be n x n with n = grid.m");
  if (noise.paths() < grid.P || noise.steps() < grid.fine_steps() ||
      std::abs(noise.dt() - grid.fine_dt()) > 1e-12 * grid.fine_dt())
    throw ValidationError("noise table does not cover the n-player grid");
}

void check_finite_row(const double* v, std::size_t P, std::size_t i, std::size_t l) {
  for (std::size_t p = 0; p < P; ++p)
    if (!std::isfinite(v[p]))
      throw NumericError("n-player state diverged at player " + std::to_string(i + 1) + ", fine step " +
                         std::to_string(l));
}

// The neighbour mean adds nothing to the basis when the player has no
// interaction at all or no off-diagonal graphon weight.
std::vector<bool> two_variable_basis(const FbsdeCoefficients& c, const Eigen::MatrixXd& gn) {
  const auto n = gn.rows();
  std::vector<bool> b(std::size_t(n), false);
  if (c.interaction_free()) return b;
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j)
      if (j != i && gn(i, j) != 0.0) b[std::size_t(i)] = true;
  return b;
}

struct GenericWorlds {
  const FbsdeCoefficients& c;
  const DiscretizationGrid& grid;
  const BrownianTable& noise;
  Mat gw;  // G / n
  std::vector<Label> labels;  // noise streams
  std::vector<bool> basis2;
  std::size_t n, P;

  GenericWorlds(const FbsdeCoefficients& c_, const Eigen::MatrixXd& gn, const DiscretizationGrid& g,
                const BrownianTable& nz)
      : c(c_), grid(g), noise(nz), gw(gn / double(gn.rows())), labels(g.noise_labels()), basis2(two_variable_basis(c_, gn)),
        n(g.m), P(g.P) {}

  Mat neighbour_mean(const Mat& X) const { return gw * X; }

  std::vector<Mat> aggregates(const Interaction& in, double t, const Mat& X) const {
    std::vector<Mat> out;
    for (const auto& term : in.terms) {
      Mat o(X.rows(), X.cols());
      for (Eigen::Index i = 0; i < X.rows(); ++i)
        for (Eigen::Index p = 0; p < X.cols(); ++p) o(i, p) = term.other(t, X(i, p));
      out.push_back(gw * o);
    }
    return out;
  }

  static double own_sum(const Interaction& in, const std::vector<Mat>& agg, std::size_t i, std::size_t p, double t,
                        double x, double y) {
    double s = 0.0;
    for (std::size_t k = 0; k < in.terms.size(); ++k) s += in.terms[k].own(t, x, y) * agg[k](i, p);
    return s;
  }

  double fit_eval(const PolyFit& f, std::size_t i, double x, double z) const { return basis2[i] ? f(x, z) : f(x); }

  void step(const YField& y, std::size_t l, const Mat& X, Mat& out) const {
    const double t = grid.fine_time(l), h = grid.fine_dt();
    const double a = c.x_rate ? c.x_rate(t) : 0.0;
    const ForwardWeights w(a, h, c.sigma);
    const Mat Z = neighbour_mean(X);
    const auto agg = aggregates(c.Bhat, t, X);
    out.resize(X.rows(), X.cols());
    parallel_for(n, grid.threads, [&](std::size_t i) {
      std::vector<double> xi(P);
      noise.normals(labels[i], l, 0, P, xi.data());
      const PolyFit& f = y.at(i, l);
      for (std::size_t p = 0; p < P; ++p) {
        const double x = X(i, p);
        const double yv = fit_eval(f, i, x, Z(i, p));
        const double b = c.B0(t, x, yv) + own_sum(c.Bhat, agg, i, p, t, x, yv);
        out(i, p) = w.decay * x + w.drift * (b - a * x) + w.noise * xi[p];
      }
      check_finite_row(&out(i, 0), P, i, l);
    });
  }

  Mat initial(const InitialLaw& init) const {
    Mat X(n, P);
    const auto own = grid.labels();
    for (std::size_t i = 0; i < n; ++i) draw_initial(init, own[i], labels[i], noise, &X(i, 0));
    return X;
  }
};

void store(PathSet& ps, const Mat& X, std::size_t k) {
  for (Eigen::Index i = 0; i < X.rows(); ++i) std::copy(&X(i, 0), &X(i, 0) + X.cols(), ps.x_at(std::size_t(i), k));
}

Mat load(const PathSet& ps, std::size_t k, std::size_t n, std::size_t P) {
  Mat X(n, P);
  for (std::size_t i = 0; i < n; ++i) std::copy(ps.x_at(i, k), ps.x_at(i, k) + P, &X(i, 0));
  return X;
}

PathSet forward(const GenericWorlds& w, const YField& y, const InitialLaw& init) {
  PathSet ps;
  ps.resize(w.grid.labels(), w.grid.times(), w.P);
  for (std::size_t i = 0; i < w.n; ++i) ps.noise_digest[i] = w.noise.digest(w.labels[i]);
  Mat X = w.initial(init), next;
  const std::size_t L = w.grid.fine_steps(), s = w.grid.substeps;
  for (std::size_t l = 0;; ++l) {
    if (l % s == 0) store(ps, X, l / s);
    if (l == L) break;
    w.step(y, l, X, next);
    std::swap(X, next);
  }
  return ps;
}

struct GenericBackward {
  YField field;
  double max_ridge = 0.0;
};

GenericBackward backward(const GenericWorlds& w, const PathSet& fwd, const YField& y_used) {
  const auto& c = w.c;
  const auto& grid = w.grid;
  const std::size_t n = w.n, P = w.P, N = grid.N, s = grid.substeps, L = grid.fine_steps();
  const double h = grid.fine_dt();
  RegressionOptions ro;
  ro.degree = grid.degree;
  GenericBackward r;
  r.field.reset(n, L, PolyFit::constant(0.0));
  std::vector<double> ridge(n, 0.0);
  Mat yv(n, P);
  {
    const Mat XT = load(fwd, N, n, P);
    const Mat Z = w.neighbour_mean(XT);
    const auto agg = w.aggregates(c.Qhat, grid.T, XT);
    parallel_for(n, grid.threads, [&](std::size_t i) {
      std::vector<double> tgt(P);
      for (std::size_t p = 0; p < P; ++p)
        tgt[p] = c.Q0(XT(i, p)) + GenericWorlds::own_sum(c.Qhat, agg, i, p, grid.T, XT(i, p), 0.0);
      PolyFit f = fit_poly(&XT(i, 0), w.basis2[i] ? &Z(i, 0) : nullptr, tgt.data(), P, ro);
      ridge[i] = std::max(ridge[i], f.ridge);
      for (std::size_t p = 0; p < P; ++p) yv(i, p) = w.fit_eval(f, i, XT(i, p), Z(i, p));
      r.field.at(i, L) = std::move(f);
    });
  }
  std::vector<Mat> cloud(s + 1), nbr(s + 1);
  for (std::size_t k = N; k-- > 0;) {
    cloud[0] = load(fwd, k, n, P);
    for (std::size_t q = 0; q < s; ++q) w.step(y_used, k * s + q, cloud[q], cloud[q + 1]);
    for (std::size_t q = 0; q <= s; ++q) nbr[q] = w.neighbour_mean(cloud[q]);
    for (std::size_t q = s; q-- > 0;) {
      const std::size_t l = k * s + q;
      const double t0 = grid.fine_time(l), t1 = grid.fine_time(l + 1);
      const double crate = c.y_rate ? c.y_rate(t0) : 0.0;
      const BackwardWeights bw(crate, h, c.x_rate ? c.x_rate(t0) : 0.0);
      const Mat& X0 = cloud[q];
      const Mat& X1 = cloud[q + 1];
      const auto agg1 = w.aggregates(c.Fhat, t1, X1);
      const auto agg0 = w.aggregates(c.Fhat, t0, X0);
      Mat ynew(n, P);
      parallel_for(n, grid.threads, [&](std::size_t i) {
        std::vector<double> f1(P), tgt(P);
        const double* z0 = w.basis2[i] ? &nbr[q](i, 0) : nullptr;
        for (std::size_t p = 0; p < P; ++p) {
          const double x1 = X1(i, p), y1 = yv(i, p);
          f1[p] = c.F0(t1, x1, y1) + GenericWorlds::own_sum(c.Fhat, agg1, i, p, t1, x1, y1) - crate * y1;
          tgt[p] = bw.decay * y1 + h * bw.euler * f1[p];
        }
        PolyFit f = fit_poly(&X0(i, 0), z0, tgt.data(), P, ro);
        ridge[i] = std::max(ridge[i], f.ridge);
        if (grid.scheme == BackwardScheme::trapezoid) {
          for (std::size_t p = 0; p < P; ++p) {
            const double x0 = X0(i, p);
            const double yp = w.fit_eval(f, i, x0, nbr[q](i, p));
            const double f0 = c.F0(t0, x0, yp) + GenericWorlds::own_sum(c.Fhat, agg0, i, p, t0, x0, yp) - crate * yp;
            tgt[p] = bw.decay * yv(i, p) + h * (bw.w0 * f0 + bw.w1 * f1[p]);
          }
          f = fit_poly(&X0(i, 0), z0, tgt.data(), P, ro);
          ridge[i] = std::max(ridge[i], f.ridge);
        }
        for (std::size_t p = 0; p < P; ++p) ynew(i, p) = w.fit_eval(f, i, X0(i, p), nbr[q](i, p));
        r.field.at(i, l) = std::move(f);
      });
      yv = std::move(ynew);
    }
  }
  r.max_ridge = *std::max_element(ridge.begin(), ridge.end());
  return r;
}

void fill_adjoint(const GenericWorlds& w, PathSet& ps, const YField& y) {
  for (std::size_t k = 0; k < ps.times.size(); ++k) {
    const Mat X = load(ps, k, w.n, w.P);
    const Mat Z = w.neighbour_mean(X);
    for (std::size_t i = 0; i < w.n; ++i) {
      const PolyFit& f = y.at(i, k * w.grid.substeps);
      double* out = ps.y_at(i, k);
      for (std::size_t p = 0; p < w.P; ++p) out[p] = w.fit_eval(f, i, X(i, p), Z(i, p));
    }
  }
}

double residual(const GenericWorlds& w, const YField& a, const YField& b, const PathSet& val, std::size_t nval,
                double k) {
  FieldSamples fs;
  fs.types = w.n;
  fs.times = val.times;
  fs.samples = nval;
  fs.values.resize(fs.types * fs.times.size() * nval);
  for (std::size_t t = 0; t < fs.times.size(); ++t) {
    const Mat X = load(val, t, w.n, w.P);
    const Mat Z = w.neighbour_mean(X);
    for (std::size_t i = 0; i < w.n; ++i) {
      const PolyFit& fa = a.at(i, t * w.grid.substeps);
      const PolyFit& fb = b.at(i, t * w.grid.substeps);
      for (std::size_t p = 0; p < nval; ++p)
        fs.values[(i * fs.times.size() + t) * nval + p] =
            w.fit_eval(fa, i, X(i, p), Z(i, p)) - w.fit_eval(fb, i, X(i, p), Z(i, p));
    }
  }
  return weighted_norm(fs, k, 2.0);
}

void check_dense(std::size_t nodes, std::size_t fine) {
  if (nodes < 2 || (nodes - 1) % fine != 0) throw ValidationError("Riccati dense grid must refine the simulation grid");
}

// Closed-loop linear simulation: dX = (b2 X + M_l X + v_l) dt + sigma dW,
// with the adjoint Y^{ii} = (A_k X)_i + a_k[i] reported at the reporting times.
template <class Feedback, class Adjoint>
void simulate_affine(const LqSpec& spec, const Eigen::MatrixXd& gn, const InitialLaw& init,
                     const DiscretizationGrid& grid, const BrownianTable& noise, std::size_t ratio,
                     const Feedback& feedback, const Adjoint& adjoint, NPlayerSolution& sol) {
  const std::size_t n = grid.m, P = grid.P, L = grid.fine_steps(), s = grid.substeps;
  const double h = grid.fine_dt();
  const auto labels = grid.labels();
  sol.paths.resize(labels, grid.times(), P);
  for (std::size_t i = 0; i < n; ++i) sol.paths.noise_digest[i] = noise.digest(labels[i]);
  Mat X(n, P), next(n, P), xi(n, P);
  for (std::size_t i = 0; i < n; ++i) draw_initial(init, labels[i], noise, &X(i, 0));
  const Eigen::VectorXd ones = Eigen::VectorXd::Ones(Eigen::Index(n));
  Eigen::MatrixXd M;
  Eigen::VectorXd v;
  for (std::size_t l = 0;; ++l) {
    if (l % s == 0) {
      const std::size_t k = l / s;
      store(sol.paths, X, k);
      Eigen::MatrixXd A;
      Eigen::VectorXd a;
      adjoint(l * ratio, A, a);
      const Mat Y = (A * X).colwise() + a;
      for (std::size_t i = 0; i < n; ++i) std::copy(&Y(i, 0), &Y(i, 0) + P, sol.paths.y_at(i, k));
    }
    if (l == L) break;
    const double t = grid.fine_time(l);
    const ForwardWeights w(spec.b2(t), h, spec.sigma);
    const double b3 = spec.b3(t);
    Eigen::MatrixXd A;
    Eigen::VectorXd a;
    feedback(l * ratio, A, a);
    M = (spec.beta1(t) / double(n)) * gn - b3 * b3 * A;
    v = (spec.beta0(t) / double(n)) * (gn * ones) - b3 * b3 * a;
    for (std::size_t i = 0; i < n; ++i) noise.normals(labels[i], l, 0, P, &xi(i, 0));
    next.noalias() = M * X;
    next.colwise() += v;
    X = w.decay * X + w.drift * next + w.noise * xi;
    for (std::size_t i = 0; i < n; ++i) check_finite_row(&X(i, 0), P, i, l);
  }
}

}  // namespace

NPlayerSolution simulate_generic(const FbsdeCoefficients& c, const Eigen::MatrixXd& gn, const InitialLaw& init,
                                 const DiscretizationGrid& grid, const BrownianTable& noise, const PicardOptions& opt) {
  check_inputs(gn, grid, noise);
  c.validate();
  if (opt.max_iter < 1) throw ValidationError("Picard options: max_iter >= 1 required");
  const GenericWorlds w(c, gn, grid, noise);
  NPlayerSolution sol;
  sol.method = "generic-regression";
  sol.approximate_basis = std::any_of(w.basis2.begin(), w.basis2.end(), [](bool b) { return b; });
  sol.meta.path = "picard";
  if (sol.approximate_basis)
    sol.meta.notes.push_back("regression basis: polynomials in (own state, graphon-weighted neighbour mean)");
  YField y;
  y.reset(w.n, grid.fine_steps(), PolyFit::constant(0.0));
  PathSet val;
  const std::size_t nval = std::min(grid.P, opt.validation);
  for (std::size_t it = 0; it < opt.max_iter; ++it) {
    PathSet fwd = forward(w, y, init);
    if (it == 0) val = fwd;
    GenericBackward b = backward(w, fwd, y);
    const double res = residual(w, b.field, y, val, nval, opt.norm_k);
    sol.meta.history.push_back(res);
    sol.meta.iterations = it + 1;
    sol.meta.max_ridge = std::max(sol.meta.max_ridge, b.max_ridge);
    y = std::move(b.field);
    if (!std::isfinite(res)) throw NumericError("n-player Picard residual is not finite");
    if (res == 0.0 || res < opt.tol_abs || res < opt.tol * sol.meta.history.front()) {
      sol.meta.converged = true;
      break;
    }
  }
  sol.paths = forward(w, y, init);
  fill_adjoint(w, sol.paths, y);
  return sol;
}

NPlayerSolution simulate_linear_lq(const LqSpec& spec, const Eigen::MatrixXd& gn, const InitialLaw& init,
                                   const DiscretizationGrid& grid, const BrownianTable& noise,
                                   const LinearNPlayerRiccati& r) {
  check_inputs(gn, grid, noise);
  if (std::size_t(r.U.rows()) != grid.m) throw ValidationError("Riccati solution has the wrong player count");
  check_dense(r.t.size(), grid.fine_steps());
  const std::size_t ratio = (r.t.size() - 1) / grid.fine_steps();
  NPlayerSolution sol;
  sol.method = "lq-linear";
  sol.meta.path = "lq-feedback";
  sol.meta.converged = true;
  auto pq = [&](std::size_t node, Eigen::MatrixXd& A, Eigen::VectorXd& a) {
    A = r.P(node);
    a = r.q(node);
  };
  simulate_affine(spec, gn, init, grid, noise, ratio, pq, pq, sol);
  return sol;
}

NPlayerSolution simulate_game_lq(const LqSpec& spec, const Eigen::MatrixXd& gn, const InitialLaw& init,
                                 const DiscretizationGrid& grid, const BrownianTable& noise, const GameRiccati& r,
                                 bool offdiag) {
  check_inputs(gn, grid, noise);
  if (r.n != grid.m) throw ValidationError("game Riccati solution has the wrong player count");
  check_dense(r.t.size(), grid.fine_steps());
  const std::size_t ratio = (r.t.size() - 1) / grid.fine_steps();
  NPlayerSolution sol;
  sol.method = "lq-exact";
  sol.meta.path = "lq-feedback";
  sol.meta.converged = true;
  auto dd = [&](std::size_t node, Eigen::MatrixXd& A, Eigen::VectorXd& a) {
    A = r.D[node];
    a = r.d[node];
  };
  simulate_affine(spec, gn, init, grid, noise, ratio, dd, dd, sol);
  const std::size_t K = grid.N + 1;
  sol.control.resize(sol.paths.y.size());
  for (std::size_t i = 0; i < grid.m; ++i)
    for (std::size_t k = 0; k < K; ++k) {
      const double b3 = spec.b3(sol.paths.times[k]);
      const double* y = sol.paths.y_at(i, k);
      double* a = sol.control.data() + sol.paths.index(i, k, 0);
      for (std::size_t p = 0; p < grid.P; ++p) a[p] = -b3 * y[p];
    }
  if (offdiag) {
    if (r.report_nodes.size() != K) throw ValidationError("off-diagonal statistics need one report node per reporting time");
    Eigen::VectorXd m0(Eigen::Index(grid.m)), v0(Eigen::Index(grid.m));
    const auto labels = grid.labels();
    for (std::size_t i = 0; i < grid.m; ++i) {
      m0(Eigen::Index(i)) = init.mean(labels[i].value());
      const double sd = init.sd(labels[i].value());
      v0(Eigen::Index(i)) = sd * sd;
    }
    sol.offdiag_msq = game_moments(r, spec, m0, v0).max_offdiag;
    sol.meta.notes.push_back("off-diagonal second moments from the closed-loop moment equations");
  }
  return sol;
}

NPlayerSolution simulate_game(const GameSpec& spec, const Eigen::MatrixXd& gn, const InitialLaw& init,
                              const DiscretizationGrid& grid, const BrownianTable& noise, const GameOptions& opt) {
  check_inputs(gn, grid, noise);
  if (opt.method == GameMethod::lq_exact) {
    const LqSpec ls = lq_spec_from(spec);
    GameRiccatiOptions ro = opt.riccati;
    ro.ode.multiple_of = grid.fine_steps();
    if (ro.ode.steps == 0) ro.ode.steps = opt.dense_factor * grid.fine_steps();
    ro.report_times = grid.times();
    const GameRiccati r = solve_riccati_nplayer(ls, gn, ro);
    return simulate_game_lq(ls, gn, init, grid, noise, r, opt.offdiag);
  }
  NPlayerSolution sol = simulate_generic(reduce_to_fbsde(spec), gn, init, grid, noise, opt.picard);
  sol.method = "game-regression";
  sol.approximate_basis = true;
  sol.meta.notes.push_back("adjoint truncated to Y^{ii}; off-diagonal Y^{ij} (order 1/n) neglected");
  sol.control.resize(sol.paths.y.size());
  for (std::size_t i = 0; i < grid.m; ++i)
    for (std::size_t k = 0; k <= grid.N; ++k) {
      const double t = sol.paths.times[k];
      const double* y = sol.paths.y_at(i, k);
      double* a = sol.control.data() + sol.paths.index(i, k, 0);
      for (std::size_t p = 0; p < grid.P; ++p) a[p] = optimal_control(spec, t, y[p]).value;
    }
  return sol;
}

void write_offdiag_csv(const NPlayerSolution& s, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path);
  f.precision(17);
  const std::size_t n = s.paths.labels.size();
  f << "t,n,max_offdiag_msq,n_times_msq\n";
  for (std::size_t k = 0; k < s.offdiag_msq.size(); ++k)
    f << s.paths.times[k] << ',' << n << ',' << s.offdiag_msq[k] << ',' << double(n) * s.offdiag_msq[k] << '\n';
}

}  // namespace gmfg
