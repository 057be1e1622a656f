#include "gmfg/limit_solver.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "gmfg/errors.hpp"
#include "gmfg/metrics.hpp"
#include "gmfg/stepping.hpp"

namespace gmfg {

void DiscretizationGrid::validate() const {
  if (m < 1) throw ValidationError("grid: m must be at least 1");
  if (N < 1) throw ValidationError("grid: N must be at least 1");
  if (substeps < 1) throw ValidationError("grid: substeps must be at least 1");
  if (P < 2) throw ValidationError("grid: P must be at least 2");
  if (degree < 0 || degree > 8) throw ValidationError("grid: regression degree must lie in [0, 8]");
  if (!(T > 0.0) || !std::isfinite(T)) throw ValidationError("grid: T must be positive");
}

std::vector<double> DiscretizationGrid::times() const {
  std::vector<double> t(N + 1);
  for (std::size_t k = 0; k <= N; ++k) t[k] = k == N ? T : double(k) * dt();
  return t;
}

std::vector<Label> DiscretizationGrid::labels() const {
  std::vector<Label> l;
  for (std::size_t i = 1; i <= m; ++i) l.push_back(Label::of(i, m));
  return l;
}

InitialLaw InitialLaw::point(double x) { return gaussian(x, 0.0); }

InitialLaw InitialLaw::gaussian(double mean, double sd) {
  InitialLaw l;
  l.mean = [mean](double) { return mean; };
  l.sd = [sd](double) { return sd; };
  return l;
}

InitialLaw InitialLaw::linear(double a, double b, double sd) {
  InitialLaw l;
  l.mean = [a, b](double lam) { return a + b * lam; };
  l.sd = [sd](double) { return sd; };
  return l;
}

std::vector<Label> DiscretizationGrid::noise_labels() const {
  auto l = labels();
  if (shared_type_noise) std::fill(l.begin(), l.end(), l.front());
  return l;
}

void draw_initial(const InitialLaw& law, const Label& l, const BrownianTable& noise, double* out) {
  draw_initial(law, l, l, noise, out);
}

void draw_initial(const InitialLaw& law, const Label& l, const Label& stream, const BrownianTable& noise, double* out) {
  const double mu = law.mean(l.value()), sd = law.sd(l.value());
  if (sd == 0.0) {
    std::fill(out, out + noise.paths(), mu);
    return;
  }
  noise.initial_normals(stream, 0, noise.paths(), out);
  for (std::size_t p = 0; p < noise.paths(); ++p) out[p] = mu + sd * out[p];
}

void YField::reset(std::size_t m, std::size_t fine_steps, const PolyFit& f) {
  types = m;
  steps = fine_steps;
  fits.assign(m * (fine_steps + 1), f);
}

LimitSolution::Summary LimitSolution::summary(std::size_t i, std::size_t k) const {
  const auto mx = moments(flow.x_at(i, k), flow.paths);
  const auto my = moments(flow.y_at(i, k), flow.paths);
  const std::size_t at = i * flow.times.size() + k;
  const double z = z_mean.empty() ? 0.0 : z_mean[at];
  const double se = y_mean_se.empty() ? std::sqrt(my.var / double(flow.paths)) : y_mean_se[at];
  return {mx.mean, mx.var, my.mean, my.var, z, se};
}

Aggregates aggregate(const Interaction& in, double t, const Eigen::MatrixXd& g, const std::vector<const double*>& clouds,
                     std::size_t P, std::size_t threads) {
  const std::size_t m = clouds.size(), nt = in.terms.size();
  Aggregates a;
  a.types = m;
  a.terms = nt;
  a.values.assign(m * nt, 0.0);
  if (nt == 0) return a;
  std::vector<double> means(m * nt, 0.0);
  parallel_for(m, threads, [&](std::size_t j) {
    for (std::size_t s = 0; s < nt; ++s) {
      const auto& other = in.terms[s].other;
      double acc = 0.0;
      for (std::size_t p = 0; p < P; ++p) acc += other(t, clouds[j][p]);
      means[j * nt + s] = acc / double(P);
    }
  });
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t s = 0; s < nt; ++s) {
      double acc = 0.0;
      for (std::size_t j = 0; j < m; ++j) acc += g(i, j) * means[j * nt + s];
      a.values[i * nt + s] = acc / double(m);
    }
  return a;
}

namespace {

void check_noise(const DiscretizationGrid& grid, const BrownianTable& noise) {
  if (noise.paths() < grid.P || noise.steps() < grid.fine_steps() ||
      std::abs(noise.dt() - grid.fine_dt()) > 1e-12 * grid.fine_dt())
    throw ValidationError("noise table does not cover the grid (paths, steps or dt mismatch)");
}

void check_graphon(const Eigen::MatrixXd& g, std::size_t m) {
  if (std::size_t(g.rows()) != m || std::size_t(g.cols()) != m)
    throw ValidationError("graphon block matrix must be m x m on the type grid");
}

double interaction_term(const Interaction& in, const Aggregates& a, std::size_t i, double t, double x, double y) {
  double s = 0.0;
  for (std::size_t k = 0; k < in.terms.size(); ++k) s += in.terms[k].own(t, x, y) * a.at(i, k);
  return s;
}

// One fine forward step of one type's cloud; shared by the sweep and the
// per-interval recomputation in the backward pass so both are bit-identical.
void advance(const FbsdeCoefficients& c, const DiscretizationGrid& grid, const YField& y, const Aggregates& agg,
             const BrownianTable& noise, const Label& label, std::size_t i, std::size_t l, const double* xin,
             double* xout, double* xi) {
  const double t = grid.fine_time(l), h = grid.fine_dt();
  const double a = c.x_rate ? c.x_rate(t) : 0.0;
  const ForwardWeights w(a, h, c.sigma);
  noise.normals(label, l, 0, grid.P, xi);
  const PolyFit& f = y.at(i, l);
  for (std::size_t p = 0; p < grid.P; ++p) {
    const double x = xin[p];
    const double yv = f(x);
    const double b = c.B0(t, x, yv) + interaction_term(c.Bhat, agg, i, t, x, yv);
    const double next = w.decay * x + w.drift * (b - a * x) + w.noise * xi[p];
    if (!std::isfinite(next))
      throw NumericError("forward sweep diverged at type " + std::to_string(i + 1) + ", fine step " +
                         std::to_string(l));
    xout[p] = next;
  }
}

}  // namespace

ForwardResult forward_sweep(const FbsdeCoefficients& c, const Eigen::MatrixXd& g, const YField& y,
                            const InitialLaw& init, const DiscretizationGrid& grid, const BrownianTable& noise) {
  grid.validate();
  c.validate();
  check_noise(grid, noise);
  check_graphon(g, grid.m);
  const std::size_t m = grid.m, P = grid.P, L = grid.fine_steps(), s = grid.substeps;
  const auto labels = grid.labels(), keys = grid.noise_labels();
  ForwardResult r;
  r.flow.resize(labels, grid.times(), P);
  for (std::size_t i = 0; i < m; ++i) r.flow.noise_digest[i] = noise.digest(keys[i]);
  std::vector<std::vector<double>> cur(m, std::vector<double>(P)), nxt = cur, xi = cur;
  for (std::size_t i = 0; i < m; ++i) draw_initial(init, labels[i], keys[i], noise, cur[i].data());
  std::vector<const double*> ptrs(m);
  r.drift_aggs.resize(L);
  r.driver_aggs.resize(L + 1);
  for (std::size_t l = 0; l <= L; ++l) {
    const double t = grid.fine_time(l);
    for (std::size_t i = 0; i < m; ++i) ptrs[i] = cur[i].data();
    if (l % s == 0)
      for (std::size_t i = 0; i < m; ++i) std::copy(cur[i].begin(), cur[i].end(), r.flow.x_at(i, l / s));
    r.driver_aggs[l] = aggregate(c.Fhat, t, g, ptrs, P, grid.threads);
    if (l == L) break;
    r.drift_aggs[l] = aggregate(c.Bhat, t, g, ptrs, P, grid.threads);
    parallel_for(m, grid.threads, [&](std::size_t i) {
      advance(c, grid, y, r.drift_aggs[l], noise, keys[i], i, l, cur[i].data(), nxt[i].data(), xi[i].data());
    });
    std::swap(cur, nxt);
  }
  r.terminal_aggs = aggregate(c.Qhat, grid.T, g, ptrs, P, grid.threads);
  return r;
}

BackwardResult backward_sweep(const FbsdeCoefficients& c, const Eigen::MatrixXd& g, const ForwardResult& fwd,
                              const YField& y_used, const DiscretizationGrid& grid, const BrownianTable& noise) {
  (void)g;
  const std::size_t m = grid.m, P = grid.P, N = grid.N, s = grid.substeps, L = grid.fine_steps();
  const double h = grid.fine_dt(), T = grid.T;
  const auto labels = grid.noise_labels();
  RegressionOptions ro;
  ro.degree = grid.degree;
  BackwardResult r;
  r.y_field.reset(m, L, PolyFit::constant(0.0));
  r.z_mean.assign(m * (N + 1), 0.0);
  r.y_mean_se.assign(m * (N + 1), 0.0);

  // y values on the particles at the current fine node, and the pathwise recursion
  std::vector<std::vector<double>> yv(m, std::vector<double>(P)), yp = yv;
  auto record_se = [&](std::size_t i, std::size_t k) {
    r.y_mean_se[i * (N + 1) + k] = std::sqrt(moments(yp[i].data(), P).var / double(P));
  };
  std::vector<double> ridge(m, 0.0);
  parallel_for(m, grid.threads, [&](std::size_t i) {
    const double* xT = fwd.flow.x_at(i, N);
    std::vector<double> tgt(P);
    for (std::size_t p = 0; p < P; ++p) {
      const double x = xT[p];
      tgt[p] = c.Q0(x) + interaction_term(c.Qhat, fwd.terminal_aggs, i, T, x, 0.0);
    }
    PolyFit f = fit_poly(xT, nullptr, tgt.data(), P, ro);
    ridge[i] = std::max(ridge[i], f.ridge);
    for (std::size_t p = 0; p < P; ++p) yv[i][p] = f(xT[p]);
    yp[i] = tgt;
    record_se(i, N);
    r.y_field.at(i, L) = std::move(f);
  });

  // fine clouds of one reporting interval: [type][local node][path]
  std::vector<std::vector<std::vector<double>>> cloud(m, std::vector<std::vector<double>>(s + 1, std::vector<double>(P)));
  std::vector<std::vector<double>> xi(m, std::vector<double>(P)), tgt = xi, f1 = xi, y0 = xi;
  for (std::size_t k = N; k-- > 0;) {
    parallel_for(m, grid.threads, [&](std::size_t i) {
      std::copy(fwd.flow.x_at(i, k), fwd.flow.x_at(i, k) + P, cloud[i][0].begin());
      for (std::size_t r0 = 0; r0 < s; ++r0) {
        const std::size_t l = k * s + r0;
        advance(c, grid, y_used, fwd.drift_aggs[l], noise, labels[i], i, l, cloud[i][r0].data(),
                cloud[i][r0 + 1].data(), xi[i].data());
      }
    });
    for (std::size_t r0 = s; r0-- > 0;) {
      const std::size_t l = k * s + r0;
      const double t0 = grid.fine_time(l), t1 = grid.fine_time(l + 1);
      const double crate = c.y_rate ? c.y_rate(t0) : 0.0;
      const BackwardWeights bw(crate, h, c.x_rate ? c.x_rate(t0) : 0.0);
      parallel_for(m, grid.threads, [&](std::size_t i) {
        const double* x0 = cloud[i][r0].data();
        const double* x1 = cloud[i][r0 + 1].data();
        const double* y1 = yv[i].data();
        for (std::size_t p = 0; p < P; ++p) {
          const double fv = c.F0(t1, x1[p], y1[p]) + interaction_term(c.Fhat, fwd.driver_aggs[l + 1], i, t1, x1[p], y1[p]);
          f1[i][p] = fv - crate * y1[p];
          tgt[i][p] = bw.decay * y1[p] + h * bw.euler * f1[i][p];
        }
        PolyFit f = fit_poly(x0, nullptr, tgt[i].data(), P, ro);
        ridge[i] = std::max(ridge[i], f.ridge);
        if (grid.scheme == BackwardScheme::trapezoid) {
          for (std::size_t p = 0; p < P; ++p) {
            const double ypred = f(x0[p]);
            const double fv =
                c.F0(t0, x0[p], ypred) + interaction_term(c.Fhat, fwd.driver_aggs[l], i, t0, x0[p], ypred);
            const double inc = h * (bw.w0 * (fv - crate * ypred) + bw.w1 * f1[i][p]);
            tgt[i][p] = bw.decay * y1[p] + inc;
            yp[i][p] = bw.decay * yp[i][p] + inc;
          }
          f = fit_poly(x0, nullptr, tgt[i].data(), P, ro);
          ridge[i] = std::max(ridge[i], f.ridge);
        } else {
          for (std::size_t p = 0; p < P; ++p) yp[i][p] = bw.decay * yp[i][p] + h * bw.euler * f1[i][p];
        }
        if (r0 == 0) {
          noise.normals(labels[i], l, 0, P, xi[i].data());
          double acc = 0.0;
          for (std::size_t p = 0; p < P; ++p) acc += y1[p] * xi[i][p];
          r.z_mean[i * (N + 1) + k] = acc / double(P) / std::sqrt(h);
          record_se(i, k);
        }
        for (std::size_t p = 0; p < P; ++p) y0[i][p] = f(x0[p]);
        std::swap(yv[i], y0[i]);
        r.y_field.at(i, l) = std::move(f);
      });
    }
  }
  for (std::size_t i = 0; i < m; ++i) {
    r.z_mean[i * (N + 1) + N] = N > 0 ? r.z_mean[i * (N + 1) + N - 1] : 0.0;
    r.max_ridge = std::max(r.max_ridge, ridge[i]);
  }
  return r;
}

namespace {

void fill_y(PathSet& flow, const YField& y, std::size_t substeps) {
  for (std::size_t i = 0; i < flow.labels.size(); ++i)
    for (std::size_t k = 0; k < flow.times.size(); ++k) {
      const PolyFit& f = y.at(i, k * substeps);
      const double* x = flow.x_at(i, k);
      double* yo = flow.y_at(i, k);
      for (std::size_t p = 0; p < flow.paths; ++p) yo[p] = f(x[p]);
    }
}

double field_residual(const YField& a, const YField& b, const PathSet& val_flow, std::size_t nval,
                      std::size_t substeps, double k) {
  FieldSamples fs;
  fs.types = val_flow.labels.size();
  fs.times = val_flow.times;
  fs.samples = nval;
  fs.values.resize(fs.types * fs.times.size() * nval);
  for (std::size_t i = 0; i < fs.types; ++i)
    for (std::size_t t = 0; t < fs.times.size(); ++t) {
      const double* x = val_flow.x_at(i, t);
      const PolyFit& fa = a.at(i, t * substeps);
      const PolyFit& fb = b.at(i, t * substeps);
      for (std::size_t p = 0; p < nval; ++p) fs.values[(i * fs.times.size() + t) * nval + p] = fa(x[p]) - fb(x[p]);
    }
  return weighted_norm(fs, k, 2.0);
}

}  // namespace

LimitSolution solve_picard_from(const FbsdeCoefficients& c, const Eigen::MatrixXd& g, const InitialLaw& init,
                                const DiscretizationGrid& grid, const BrownianTable& noise, YField start,
                                const PicardOptions& opt) {
  if (!(opt.tol >= 0.0) || opt.max_iter < 1) throw ValidationError("Picard options: tol >= 0 and max_iter >= 1 required");
  LimitSolution sol;
  sol.meta.path = "picard";
  YField y = std::move(start);
  PathSet val;
  std::size_t nval = std::min(grid.P, opt.validation);
  BackwardResult last;
  for (std::size_t it = 0; it < opt.max_iter; ++it) {
    ForwardResult fwd = forward_sweep(c, g, y, init, grid, noise);
    if (it == 0) val = fwd.flow;
    last = backward_sweep(c, g, fwd, y, grid, noise);
    const double res = field_residual(last.y_field, y, val, nval, grid.substeps, opt.norm_k);
    sol.meta.history.push_back(res);
    sol.meta.iterations = it + 1;
    sol.meta.max_ridge = std::max(sol.meta.max_ridge, last.max_ridge);
    y = std::move(last.y_field);
    if (!std::isfinite(res)) throw NumericError("Picard residual is not finite at iteration " + std::to_string(it + 1));
    if (res == 0.0 || res < opt.tol_abs || res < opt.tol * sol.meta.history.front()) {
      sol.meta.converged = true;
      break;
    }
  }
  ForwardResult fin = forward_sweep(c, g, y, init, grid, noise);
  sol.flow = std::move(fin.flow);
  fill_y(sol.flow, y, grid.substeps);
  sol.z_mean = std::move(last.z_mean);
  sol.y_mean_se = std::move(last.y_mean_se);
  sol.y_field = std::move(y);
  if (sol.meta.max_ridge > RegressionOptions{}.ridge)
    sol.meta.notes.push_back("regression ridge escalated to " + std::to_string(sol.meta.max_ridge));
  return sol;
}

LimitSolution solve_picard(const FbsdeCoefficients& c, const Graphon& g, const InitialLaw& init,
                           const DiscretizationGrid& grid, const PicardOptions& opt) {
  grid.validate();
  const BrownianTable noise(grid.seed, grid.P, grid.fine_steps(), grid.fine_dt());
  YField zero;
  zero.reset(grid.m, grid.fine_steps(), PolyFit::constant(0.0));
  return solve_picard_from(c, sampled_matrix(g, grid.m), init, grid, noise, std::move(zero), opt);
}

double initializer_offset(const TimeFn& b0, const TimeFn& f0, double q0, double t, double T) {
  // 5-point Gauss-Legendre on panels no wider than 1/256
  static const double xg[5] = {-0.9061798459386640, -0.5384693101056831, 0.0, 0.5384693101056831,
                               0.9061798459386640};
  static const double wg[5] = {0.2369268850561891, 0.4786286704993665, 0.5688888888888889, 0.4786286704993665,
                               0.2369268850561891};
  double acc = std::exp(t - T) * q0;
  if (T <= t || (!b0 && !f0)) return acc;
  const std::size_t panels = std::max<std::size_t>(1, std::size_t(std::ceil((T - t) * 256.0)));
  const double w = (T - t) / double(panels);
  for (std::size_t k = 0; k < panels; ++k) {
    const double a = t + double(k) * w;
    for (int q = 0; q < 5; ++q) {
      const double s = a + 0.5 * w * (xg[q] + 1.0);
      const double v = (b0 ? b0(s) : 0.0) + (f0 ? f0(s) : 0.0);
      acc += 0.5 * w * wg[q] * std::exp(t - s) * v;
    }
  }
  return acc;
}

LimitSolution solve_linear_initializer(const TimeFn& b0, const TimeFn& f0, double q0, double sigma,
                                       const InitialLaw& init, const DiscretizationGrid& grid,
                                       const BrownianTable& noise) {
  grid.validate();
  check_noise(grid, noise);
  const std::size_t m = grid.m, P = grid.P, L = grid.fine_steps(), s = grid.substeps;
  const double h = grid.fine_dt();
  std::vector<double> off(L + 1);
  for (std::size_t l = 0; l <= L; ++l) off[l] = initializer_offset(b0, f0, q0, grid.fine_time(l), grid.T);
  LimitSolution sol;
  sol.meta.path = "initializer";
  sol.meta.converged = true;
  const auto labels = grid.labels(), keys = grid.noise_labels();
  sol.flow.resize(labels, grid.times(), P);
  sol.y_field.types = m;
  sol.y_field.steps = L;
  sol.y_field.fits.clear();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t l = 0; l <= L; ++l) sol.y_field.fits.push_back(PolyFit::affine(off[l], 1.0));
  sol.z_mean.assign(m * (grid.N + 1), sigma);
  const ForwardWeights w(-1.0, h, sigma);
  std::vector<double> x(P), xi(P);
  for (std::size_t i = 0; i < m; ++i) {
    sol.flow.noise_digest[i] = noise.digest(keys[i]);
    draw_initial(init, labels[i], keys[i], noise, x.data());
    for (std::size_t l = 0;; ++l) {
      if (l % s == 0) {
        double* xo = sol.flow.x_at(i, l / s);
        double* yo = sol.flow.y_at(i, l / s);
        for (std::size_t p = 0; p < P; ++p) {
          xo[p] = x[p];
          yo[p] = x[p] + off[l];
        }
      }
      if (l == L) break;
      const double t = grid.fine_time(l);
      const double rem = -off[l] + (b0 ? b0(t) : 0.0);
      noise.normals(keys[i], l, 0, P, xi.data());
      for (std::size_t p = 0; p < P; ++p) x[p] = w.decay * x[p] + w.drift * rem + w.noise * xi[p];
    }
  }
  return sol;
}

LimitSolution solve_by_continuation(const FbsdeCoefficients& c, const Graphon& g, const InitialLaw& init,
                                    const DiscretizationGrid& grid, const ContinuationOptions& opt) {
  grid.validate();
  c.validate();
  if (!(opt.delta > 0.0 && opt.delta <= 1.0)) throw ValidationError("continuation step must lie in (0, 1]");
  const BrownianTable noise(grid.seed, grid.P, grid.fine_steps(), grid.fine_dt());
  const Eigen::MatrixXd gm = sampled_matrix(g, grid.m);
  LimitSolution cur = solve_linear_initializer({}, {}, 0.0, c.sigma, init, grid, noise);
  std::vector<std::string> trace{"zeta=0 initializer"};
  double zeta = 0.0, delta = opt.delta;
  std::vector<double> history;
  while (zeta < 1.0) {
    const double next = std::min(1.0, zeta + delta);
    bool ok = false;
    LimitSolution cand;
    try {
      cand = solve_picard_from(blend(c, next), gm, init, grid, noise, cur.y_field, opt.inner);
      ok = cand.meta.converged;
    } catch (const NumericError&) {
      ok = false;
    }
    std::ostringstream os;
    os << "zeta=" << next << " delta=" << delta << " iterations=" << cand.meta.iterations
       << (ok ? " converged" : " failed");
    trace.push_back(os.str());
    if (!ok) {
      delta *= 0.5;
      if (delta < opt.delta_min - 1e-15) {
        std::string msg = "continuation failed below the minimum step; trace:";
        for (const auto& t : trace) msg += " [" + t + "]";
        throw ConvergenceError(msg);
      }
      continue;
    }
    zeta = next;
    history.insert(history.end(), cand.meta.history.begin(), cand.meta.history.end());
    cur = std::move(cand);
  }
  cur.meta.path = "continuation";
  cur.meta.notes.insert(cur.meta.notes.end(), trace.begin(), trace.end());
  cur.meta.history = std::move(history);
  return cur;
}

LqFeedbackResult simulate_limit_lq(const LqSpec& spec, const Eigen::MatrixXd& g, const std::vector<Label>& labels,
                                   const InitialLaw& init, const DiscretizationGrid& grid, const BrownianTable& noise,
                                   const LimitRiccati& ric) {
  const std::size_t m = labels.size(), P = grid.P, L = grid.fine_steps(), s = grid.substeps;
  check_noise(grid, noise);
  if (std::size_t(g.rows()) != m || ric.types() != m) throw ValidationError("LQ limit simulation: type count mismatch");
  const std::size_t dense = ric.nodes() - 1;
  if (dense % L != 0) throw ValidationError("Riccati dense grid must refine the simulation grid");
  const std::size_t ratio = dense / L;
  const double h = grid.fine_dt();
  LqFeedbackResult r;
  r.flow.resize(labels, grid.times(), P);
  r.discrete_means.assign(m, std::vector<double>(L + 1));
  for (std::size_t i = 0; i < m; ++i) {
    r.flow.noise_digest[i] = noise.digest(labels[i]);
    r.discrete_means[i][0] = init.mean(labels[i].value());
  }
  // deterministic means of the discrete scheme
  std::vector<double> cc(m);
  auto interaction = [&](std::size_t l) {
    const double t = grid.fine_time(l), b1 = spec.beta1(t), b0 = spec.beta0(t);
    for (std::size_t i = 0; i < m; ++i) {
      double acc = 0.0;
      for (std::size_t j = 0; j < m; ++j) acc += g(i, j) * (b1 * r.discrete_means[j][l] + b0);
      cc[i] = acc / double(m);
    }
  };
  std::vector<std::vector<double>> inter(L, std::vector<double>(m));
  for (std::size_t l = 0; l < L; ++l) {
    interaction(l);
    inter[l] = cc;
    const double t = grid.fine_time(l), b3 = spec.b3(t);
    const ForwardWeights w(spec.b2(t), h, spec.sigma);
    const double p = ric.p[l * ratio];
    for (std::size_t i = 0; i < m; ++i) {
      const double mu = r.discrete_means[i][l];
      const double rem = cc[i] - b3 * b3 * (p * mu + ric.q(i, l * ratio));
      r.discrete_means[i][l + 1] = w.decay * mu + w.drift * rem;
    }
  }
  parallel_for(m, grid.threads, [&](std::size_t i) {
    std::vector<double> x(P), xi(P);
    draw_initial(init, labels[i], noise, x.data());
    for (std::size_t l = 0;; ++l) {
      if (l % s == 0) {
        const double p = ric.p[l * ratio], q = ric.q(i, l * ratio);
        double* xo = r.flow.x_at(i, l / s);
        double* yo = r.flow.y_at(i, l / s);
        for (std::size_t k = 0; k < P; ++k) {
          xo[k] = x[k];
          yo[k] = p * x[k] + q;
        }
      }
      if (l == L) break;
      const double t = grid.fine_time(l), b3 = spec.b3(t);
      const ForwardWeights w(spec.b2(t), h, spec.sigma);
      const double p = ric.p[l * ratio], q = ric.q(i, l * ratio);
      noise.normals(labels[i], l, 0, P, xi.data());
      for (std::size_t k = 0; k < P; ++k) {
        const double rem = inter[l][i] - b3 * b3 * (p * x[k] + q);
        x[k] = w.decay * x[k] + w.drift * rem + w.noise * xi[k];
      }
    }
  });
  return r;
}

void write_summary_csv(const LimitSolution& s, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path);
  f.precision(17);
  f << "type,label,t,mean_x,var_x,mean_y,var_y,z_mean\n";
  for (std::size_t i = 0; i < s.flow.labels.size(); ++i)
    for (std::size_t k = 0; k < s.flow.times.size(); ++k) {
      const auto m = s.summary(i, k);
      f << i + 1 << ',' << s.flow.labels[i].num << '/' << s.flow.labels[i].den << ',' << s.flow.times[k] << ','
        << m.mean_x << ',' << m.var_x << ',' << m.mean_y << ',' << m.var_y << ',' << m.z_mean << '\n';
    }
}

void write_history_csv(const SolverMeta& m, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path);
  f.precision(17);
  f << "iteration,residual\n";
  for (std::size_t i = 0; i < m.history.size(); ++i) f << i + 1 << ',' << m.history[i] << '\n';
}

void write_paths_binary(const PathSet& p, const std::string& base) {
  {
    std::ofstream f(base + ".bin", std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + base + ".bin");
    static_assert(sizeof(double) == 8);
    // host order is little-endian on every supported platform; checked at runtime
    const std::uint16_t probe = 1;
    if (*reinterpret_cast<const std::uint8_t*>(&probe) != 1)
      throw std::runtime_error("binary export requires a little-endian host");
    f.write(reinterpret_cast<const char*>(p.x.data()), std::streamsize(p.x.size() * sizeof(double)));
    f.write(reinterpret_cast<const char*>(p.y.data()), std::streamsize(p.y.size() * sizeof(double)));
  }
  nlohmann::ordered_json j;
  j["dtype"] = "float64-le";
  j["layout"] = "[array][label][time][path], arrays x then y";
  j["shape"] = {2, p.labels.size(), p.times.size(), p.paths};
  nlohmann::ordered_json labels = nlohmann::ordered_json::array();
  for (const auto& l : p.labels) labels.push_back(std::to_string(l.num) + "/" + std::to_string(l.den));
  j["labels"] = labels;
  j["times"] = p.times;
  j["noise_digest"] = p.noise_digest;
  std::ofstream f(base + ".json");
  if (!f) throw std::runtime_error("cannot write " + base + ".json");
  f << j.dump(2) << '\n';
}

}  // namespace gmfg
