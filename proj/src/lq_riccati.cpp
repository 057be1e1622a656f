#include "gmfg/lq_riccati.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "gmfg/errors.hpp"

namespace gmfg {

namespace {

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(6);
  os << v;
  return os.str();
}

TimeFn constant_fn(double c) {
  return [c](double) { return c; };
}

// Coefficients tabulated on the half grid: index 2j is node j, 2j+1 the midpoint.
struct Table {
  std::vector<double> b2, b3sq, eta1, eta0, eta1h, eta0h, beta1, beta0;

  Table(const LqSpec& s, std::size_t steps) {
    const std::size_t n = 2 * steps + 1;
    const double hh = s.T / double(2 * steps);
    for (auto* v : {&b2, &b3sq, &eta1, &eta0, &eta1h, &eta0h, &beta1, &beta0}) v->resize(n);
    for (std::size_t k = 0; k < n; ++k) {
      const double t = k == n - 1 ? s.T : double(k) * hh;
      b2[k] = s.b2(t);
      const double b3 = s.b3(t);
      b3sq[k] = b3 * b3;
      eta1[k] = s.eta1(t);
      eta0[k] = s.eta0(t);
      eta1h[k] = s.eta1_hat ? s.eta1_hat(t) : 0.0;
      eta0h[k] = s.eta0_hat ? s.eta0_hat(t) : 0.0;
      beta1[k] = s.beta1(t);
      beta0[k] = s.beta0(t);
    }
  }
};

double hermite(double a, double b, double da, double db, double h, double s) {
  // s in [0, 1] within the cell
  const double s2 = s * s, s3 = s2 * s;
  return (2 * s3 - 3 * s2 + 1) * a + (s3 - 2 * s2 + s) * h * da + (-2 * s3 + 3 * s2) * b + (s3 - s2) * h * db;
}

double hermite_mid(double a, double b, double da, double db, double h) {
  return 0.5 * (a + b) + 0.125 * h * (da - db);
}

// Lagrange weights for value and derivative at x from integer offsets.
struct Stencil {
  std::size_t start = 0;
  double w[6], dw[6];
};

Stencil midpoint_stencil(std::size_t j, std::size_t steps, double h) {
  Stencil s;
  const std::size_t lo = j >= 2 ? j - 2 : 0;
  s.start = std::min(lo, steps - 5);
  const double x = double(j) + 0.5 - double(s.start);
  for (int i = 0; i < 6; ++i) {
    double w = 1.0;
    for (int k = 0; k < 6; ++k)
      if (k != i) w *= (x - k) / double(i - k);
    s.w[i] = w;
    double d = 0.0;
    for (int l = 0; l < 6; ++l) {
      if (l == i) continue;
      double prod = 1.0 / double(i - l);
      for (int k = 0; k < 6; ++k)
        if (k != i && k != l) prod *= (x - k) / double(i - k);
      d += prod;
    }
    s.dw[i] = d / h;
  }
  return s;
}

void check_guard(double p, double t, double guard) {
  if (!std::isfinite(p) || std::abs(p) > guard)
    throw NumericError("Riccati blow-up: |p| exceeds guard " + fmt(guard) + " at t = " + fmt(t));
}

void require_square(const Eigen::MatrixXd& g, const char* what) {
  if (g.rows() != g.cols() || g.rows() == 0) throw ValidationError(std::string(what) + " must be a non-empty square matrix");
  if (!g.isApprox(g.transpose(), 1e-12) && (g - g.transpose()).cwiseAbs().maxCoeff() > 1e-12)
    throw ValidationError(std::string(what) + " must be symmetric");
}

double rel_change(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  const double scale = std::max(b.cwiseAbs().maxCoeff(), 1e-300);
  return (a - b).cwiseAbs().maxCoeff() / scale;
}

std::size_t round_steps(std::size_t steps, std::size_t mult) {
  mult = std::max<std::size_t>(mult, 1);
  return std::max<std::size_t>((steps + mult - 1) / mult, 1) * mult;
}

}  // namespace

void LqSpec::validate() const {
  if (!beta1 || !beta0 || !b2 || !b3 || !eta1 || !eta0) throw ValidationError("LqSpec: missing coefficient function");
  if (!(T > 0.0) || !std::isfinite(T)) throw ValidationError("LqSpec: T must be positive");
  if (!(sigma > 0.0) || !std::isfinite(sigma)) throw ValidationError("LqSpec: sigma must be positive");
  if (rho1 < 0.0) throw ValidationError("LqSpec: rho1 must be nonnegative");
  for (int k = 0; k <= 16; ++k) {
    const double t = T * k / 16.0;
    if (eta1(t) < 0.0) throw ValidationError("LqSpec: eta1 must be nonnegative (t = " + fmt(t) + ")");
  }
}

LqSpec lq_spec(const LqGameParams& p) {
  LqSpec s;
  s.beta1 = constant_fn(p.beta1);
  s.beta0 = constant_fn(p.beta0);
  s.b2 = constant_fn(p.b2);
  s.b3 = constant_fn(p.b3);
  s.eta1 = constant_fn(p.eta1);
  s.eta0 = constant_fn(p.eta0);
  s.eta1_hat = constant_fn(p.eta1_hat);
  s.eta0_hat = constant_fn(p.eta0_hat);
  s.rho1 = p.rho1;
  s.rho0 = p.rho0;
  s.rho1_hat = p.rho1_hat;
  s.rho0_hat = p.rho0_hat;
  s.sigma = p.sigma;
  s.T = p.T;
  return s;
}

LqSpec lq_spec_from(const GameSpec& g) {
  // slope and offset read at x = 0, 1; affinity checked at further points
  const std::vector<double> xs{-2.0, -0.7, 0.5, 1.9};
  auto affine_check = [&](const std::function<double(double)>& f, const std::string& what) {
    const double c0 = f(0.0), c1 = f(1.0) - c0;
    for (double x : xs) {
      const double expect = c1 * x + c0;
      if (std::abs(f(x) - expect) > 1e-9 * (1.0 + std::abs(expect)))
        throw CapabilityError(what + " is not affine in x; the Riccati oracle needs a linear-quadratic game");
    }
    return std::pair<double, double>{c1, c0};
  };
  for (int k = 0; k <= 8; ++k) {
    const double t = g.T * k / 8.0;
    affine_check([&](double x) { return g.b1(t, x); }, "b1");
    affine_check([&](double x) { return g.df1(t, x); }, "df1");
    affine_check([&](double x) { return g.df2(t, x); }, "df2");
  }
  LqSpec s;
  const GameSpec gc = g;
  s.beta1 = [gc](double t) { return gc.b1(t, 1.0) - gc.b1(t, 0.0); };
  s.beta0 = [gc](double t) { return gc.b1(t, 0.0); };
  s.b2 = gc.b2;
  s.b3 = gc.b3;
  s.eta1 = [gc](double t) { return gc.df1(t, 1.0) - gc.df1(t, 0.0); };
  s.eta0 = [gc](double t) { return gc.df1(t, 0.0); };
  s.eta1_hat = [gc](double t) { return gc.df2(t, 1.0) - gc.df2(t, 0.0); };
  s.eta0_hat = [gc](double t) { return gc.df2(t, 0.0); };
  auto r = affine_check(g.dq1, "dq1");
  s.rho1 = r.first;
  s.rho0 = r.second;
  auto rh = affine_check(g.dq2, "dq2");
  s.rho1_hat = rh.first;
  s.rho0_hat = rh.second;
  s.sigma = g.sigma;
  s.T = g.T;
  return s;
}

std::size_t auto_steps(const LqSpec& spec, const RiccatiOptions& opt) {
  if (opt.steps > 0) return round_steps(opt.steps, opt.multiple_of);
  double stiff = 0.0, eta = 0.0, b3sq = 0.0;
  for (int k = 0; k <= 16; ++k) {
    const double t = spec.T * k / 16.0;
    const double b3 = spec.b3(t);
    eta = std::max(eta, spec.eta1(t));
    b3sq = std::max(b3sq, b3 * b3);
    stiff = std::max(stiff, 2.0 * std::abs(spec.b2(t)) + std::abs(spec.beta1(t)));
  }
  const double pmax = spec.rho1 + eta * spec.T;
  stiff += 2.0 * b3sq * pmax;
  const double want = std::ceil(spec.T * stiff / opt.stiffness_step);
  std::size_t steps = static_cast<std::size_t>(std::clamp(want, double(opt.min_steps), double(opt.max_steps)));
  const std::size_t mult = std::max<std::size_t>(opt.multiple_of, 1);
  std::size_t r = round_steps(steps, mult);
  if (r > opt.max_steps && r > mult) r -= mult;
  return std::max<std::size_t>(r, 5);
}

// ---------------------------------------------------------------- limit

namespace {

double interp(const std::vector<double>& t, double time, const double* v, const double* dv, std::size_t stride) {
  const std::size_t steps = t.size() - 1;
  const double T = t.back();
  if (time <= 0.0) return v[0];
  if (time >= T) return v[steps * stride];
  const double h = T / double(steps);
  std::size_t j = std::min<std::size_t>(static_cast<std::size_t>(time / h), steps - 1);
  const double s = (time - t[j]) / h;
  return hermite(v[j * stride], v[(j + 1) * stride], dv[j * stride], dv[(j + 1) * stride], h, s);
}

LimitRiccati solve_limit_once(const LqSpec& spec, const Eigen::MatrixXd& g, const Eigen::VectorXd& m0,
                              const Eigen::VectorXd& v0, std::size_t steps, const RiccatiOptions& opt) {
  const std::size_t M = static_cast<std::size_t>(g.rows());
  const double h = spec.T / double(steps);
  const Table c(spec, steps);
  const Eigen::MatrixXd gm = g / double(M);
  LimitRiccati r;
  r.t.resize(steps + 1);
  for (std::size_t j = 0; j <= steps; ++j) r.t[j] = j == steps ? spec.T : double(j) * h;
  r.meta.steps = steps;

  // p: backward RK4
  auto fp = [&](std::size_t k, double p) { return -2.0 * c.b2[k] * p + c.b3sq[k] * p * p - c.eta1[k]; };
  r.p.assign(steps + 1, 0.0);
  r.dp.assign(steps + 1, 0.0);
  r.p[steps] = spec.rho1;
  // RK4 stage states of p, reused by the q sweep so (p, q) advance as one system
  std::vector<double> ps2(steps + 1), ps3(steps + 1), ps4(steps + 1);
  for (std::size_t j = steps; j > 0; --j) {
    const double p = r.p[j];
    const std::size_t k = 2 * j;
    const double k1 = fp(k, p);
    ps2[j] = p - 0.5 * h * k1;
    const double k2 = fp(k - 1, ps2[j]);
    ps3[j] = p - 0.5 * h * k2;
    const double k3 = fp(k - 1, ps3[j]);
    ps4[j] = p - h * k3;
    const double k4 = fp(k - 2, ps4[j]);
    r.p[j - 1] = p - h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4);
    check_guard(r.p[j - 1], r.t[j - 1], opt.guard);
  }
  for (std::size_t j = 0; j <= steps; ++j) r.dp[j] = fp(2 * j, r.p[j]);
  auto p_mid = [&](std::size_t j) { return hermite_mid(r.p[j], r.p[j + 1], r.dp[j], r.dp[j + 1], h); };

  r.q = Eigen::MatrixXd::Zero(M, steps + 1);
  r.dq = r.q;
  r.m = m0.replicate(1, steps + 1);
  r.dm = Eigen::MatrixXd::Zero(M, steps + 1);

  auto cfun = [&](std::size_t k, const Eigen::VectorXd& m) -> Eigen::VectorXd {
    return gm * (c.beta1[k] * m + Eigen::VectorXd::Constant(M, c.beta0[k]));
  };
  auto fq = [&](std::size_t k, double p, const Eigen::VectorXd& q, const Eigen::VectorXd& cc) -> Eigen::VectorXd {
    return (-c.b2[k] + c.b3sq[k] * p) * q - p * cc - Eigen::VectorXd::Constant(M, c.eta0[k]);
  };
  auto fm = [&](std::size_t k, double p, const Eigen::VectorXd& m, const Eigen::VectorXd& q) -> Eigen::VectorXd {
    return (c.b2[k] - c.b3sq[k] * p) * m - c.b3sq[k] * q + cfun(k, m);
  };

  // allocation-free kernels for the fixed-point sweeps
  std::vector<double> gmr(M * M), rowsum(M, 0.0);
  for (std::size_t a = 0; a < M; ++a)
    for (std::size_t b = 0; b < M; ++b) {
      gmr[a * M + b] = gm(a, b);
      rowsum[a] += gm(a, b);
    }
  auto craw = [&](std::size_t k, const double* m, double* out) {
    for (std::size_t a = 0; a < M; ++a) {
      double acc = 0.0;
      for (std::size_t b = 0; b < M; ++b) acc += gmr[a * M + b] * m[b];
      out[a] = c.beta1[k] * acc + c.beta0[k] * rowsum[a];
    }
  };
  auto fq_raw = [&](std::size_t k, double p, const double* q, const double* cc, double* out) {
    const double a0 = -c.b2[k] + c.b3sq[k] * p;
    for (std::size_t a = 0; a < M; ++a) out[a] = a0 * q[a] - p * cc[a] - c.eta0[k];
  };
  std::vector<double> ctmp(M);
  auto fm_raw = [&](std::size_t k, double p, const double* m, const double* q, double* out) {
    craw(k, m, ctmp.data());
    const double a0 = c.b2[k] - c.b3sq[k] * p;
    for (std::size_t a = 0; a < M; ++a) out[a] = a0 * m[a] - c.b3sq[k] * q[a] + ctmp[a];
  };
  std::vector<double> k1(M), k2(M), k3(M), k4(M), y(M), mid(M), c_hi(M), c_mid(M), c_lo(M);

  auto backward_q = [&]() {
    r.q.col(steps).setConstant(spec.rho0);
    for (std::size_t j = steps; j > 0; --j) {
      const std::size_t k = 2 * j;
      const double* mlo = r.m.data() + (j - 1) * M;
      const double* mhi = r.m.data() + j * M;
      const double* dlo = r.dm.data() + (j - 1) * M;
      const double* dhi = r.dm.data() + j * M;
      for (std::size_t a = 0; a < M; ++a) mid[a] = 0.5 * (mlo[a] + mhi[a]) + 0.125 * h * (dlo[a] - dhi[a]);
      craw(k, mhi, c_hi.data());
      craw(k - 1, mid.data(), c_mid.data());
      craw(k - 2, mlo, c_lo.data());
      const double* q = r.q.data() + j * M;
      fq_raw(k, r.p[j], q, c_hi.data(), k1.data());
      for (std::size_t a = 0; a < M; ++a) y[a] = q[a] - 0.5 * h * k1[a];
      fq_raw(k - 1, ps2[j], y.data(), c_mid.data(), k2.data());
      for (std::size_t a = 0; a < M; ++a) y[a] = q[a] - 0.5 * h * k2[a];
      fq_raw(k - 1, ps3[j], y.data(), c_mid.data(), k3.data());
      for (std::size_t a = 0; a < M; ++a) y[a] = q[a] - h * k3[a];
      fq_raw(k - 2, ps4[j], y.data(), c_lo.data(), k4.data());
      double* qn = r.q.data() + (j - 1) * M;
      for (std::size_t a = 0; a < M; ++a) qn[a] = q[a] - h / 6.0 * (k1[a] + 2 * k2[a] + 2 * k3[a] + k4[a]);
    }
    for (std::size_t j = 0; j <= steps; ++j) {
      craw(2 * j, r.m.data() + j * M, c_hi.data());
      fq_raw(2 * j, r.p[j], r.q.data() + j * M, c_hi.data(), r.dq.data() + j * M);
    }
  };

  auto forward_m = [&](Eigen::MatrixXd& m, Eigen::MatrixXd& dm) {
    m.col(0) = m0;
    std::vector<double> qm(M);
    for (std::size_t j = 0; j < steps; ++j) {
      const std::size_t k = 2 * j;
      const double* qlo = r.q.data() + j * M;
      const double* qhi = r.q.data() + (j + 1) * M;
      const double* dlo = r.dq.data() + j * M;
      const double* dhi = r.dq.data() + (j + 1) * M;
      for (std::size_t a = 0; a < M; ++a) qm[a] = 0.5 * (qlo[a] + qhi[a]) + 0.125 * h * (dlo[a] - dhi[a]);
      const double pm = p_mid(j);
      const double* x = m.data() + j * M;
      fm_raw(k, r.p[j], x, qlo, k1.data());
      for (std::size_t a = 0; a < M; ++a) y[a] = x[a] + 0.5 * h * k1[a];
      fm_raw(k + 1, pm, y.data(), qm.data(), k2.data());
      for (std::size_t a = 0; a < M; ++a) y[a] = x[a] + 0.5 * h * k2[a];
      fm_raw(k + 1, pm, y.data(), qm.data(), k3.data());
      for (std::size_t a = 0; a < M; ++a) y[a] = x[a] + h * k3[a];
      fm_raw(k + 2, r.p[j + 1], y.data(), qhi, k4.data());
      double* xn = m.data() + (j + 1) * M;
      for (std::size_t a = 0; a < M; ++a) xn[a] = x[a] + h / 6.0 * (k1[a] + 2 * k2[a] + 2 * k3[a] + k4[a]);
    }
    for (std::size_t j = 0; j <= steps; ++j)
      fm_raw(2 * j, r.p[j], m.data() + j * M, r.q.data() + j * M, dm.data() + j * M);
  };

  // mean fixed point: q depends on future means, means on q
  Eigen::MatrixXd mn(M, steps + 1), dmn(M, steps + 1);
  bool converged = false;
  for (std::size_t it = 0; it < opt.max_iter; ++it) {
    backward_q();
    forward_m(mn, dmn);
    const double inc = (mn - r.m).cwiseAbs().maxCoeff();
    r.meta.mean_trace.push_back(inc);
    r.meta.mean_iterations = it + 1;
    if (!std::isfinite(inc)) break;
    if (inc < opt.tol) {
      r.m = mn;
      r.dm = dmn;
      converged = true;
      break;
    }
    r.m = (1.0 - opt.damping) * r.m + opt.damping * mn;
    r.dm = (1.0 - opt.damping) * r.dm + opt.damping * dmn;
  }
  if (!converged) {
    std::ostringstream os;
    os << "Riccati mean loop did not converge after " << r.meta.mean_iterations << " iterations; trace:";
    for (double v : r.meta.mean_trace) os << ' ' << v;
    throw ConvergenceError(os.str());
  }
  backward_q();  // q consistent with the accepted means

  // variance
  auto fv = [&](std::size_t k, double p, const Eigen::VectorXd& v) -> Eigen::VectorXd {
    return 2.0 * (c.b2[k] - c.b3sq[k] * p) * v + Eigen::VectorXd::Constant(M, spec.sigma * spec.sigma);
  };
  r.v = Eigen::MatrixXd::Zero(M, steps + 1);
  r.dv = r.v;
  r.v.col(0) = v0;
  for (std::size_t j = 0; j < steps; ++j) {
    const std::size_t k = 2 * j;
    const double pm = p_mid(j);
    const Eigen::VectorXd x = r.v.col(j);
    const Eigen::VectorXd k1 = fv(k, r.p[j], x);
    const Eigen::VectorXd k2 = fv(k + 1, pm, x + 0.5 * h * k1);
    const Eigen::VectorXd k3 = fv(k + 1, pm, x + 0.5 * h * k2);
    const Eigen::VectorXd k4 = fv(k + 2, r.p[j + 1], x + h * k3);
    r.v.col(j + 1) = x + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4);
  }
  for (std::size_t j = 0; j <= steps; ++j) r.dv.col(j) = fv(2 * j, r.p[j], r.v.col(j));

  // substitute the solution back into the ODEs at every midpoint
  double res = 0.0;
  Eigen::VectorXd qv(M), mv(M), vv(M), qd(M), md(M), vd(M);
  for (std::size_t j = 0; j < steps; ++j) {
    const Stencil s = midpoint_stencil(j, steps, h);
    double pv = 0.0, pd = 0.0;
    qv.setZero();
    mv.setZero();
    vv.setZero();
    qd.setZero();
    md.setZero();
    vd.setZero();
    for (int i = 0; i < 6; ++i) {
      const std::size_t n = s.start + i;
      pv += s.w[i] * r.p[n];
      pd += s.dw[i] * r.p[n];
      qv += s.w[i] * r.q.col(n);
      qd += s.dw[i] * r.q.col(n);
      mv += s.w[i] * r.m.col(n);
      md += s.dw[i] * r.m.col(n);
      vv += s.w[i] * r.v.col(n);
      vd += s.dw[i] * r.v.col(n);
    }
    const std::size_t k = 2 * j + 1;
    res = std::max(res, std::abs(pd - fp(k, pv)));
    res = std::max(res, (qd - fq(k, pv, qv, cfun(k, mv))).cwiseAbs().maxCoeff());
    res = std::max(res, (md - fm(k, pv, mv, qv)).cwiseAbs().maxCoeff());
    res = std::max(res, (vd - fv(k, pv, vv)).cwiseAbs().maxCoeff());
  }
  r.meta.max_residual = res;
  return r;
}

}  // namespace

double LimitRiccati::p_at(double time) const { return interp(t, time, p.data(), dp.data(), 1); }
double LimitRiccati::q_at(std::size_t i, double time) const {
  return interp(t, time, q.data() + i, dq.data() + i, types());
}
double LimitRiccati::mean_at(std::size_t i, double time) const {
  return interp(t, time, m.data() + i, dm.data() + i, types());
}
double LimitRiccati::var_at(std::size_t i, double time) const {
  return interp(t, time, v.data() + i, dv.data() + i, types());
}

LimitRiccati solve_riccati_limit(const LqSpec& spec, const Eigen::MatrixXd& g, const Eigen::VectorXd& init_means,
                                 const Eigen::VectorXd& init_vars, const RiccatiOptions& opt) {
  spec.validate();
  require_square(g, "graphon block matrix");
  if (init_means.size() != g.rows() || init_vars.size() != g.rows())
    throw ValidationError("init means/vars must have one entry per type");
  if (!(opt.damping > 0.0 && opt.damping <= 1.0)) throw ValidationError("damping must lie in (0, 1]");
  const std::size_t steps = auto_steps(spec, opt);
  LimitRiccati r = solve_limit_once(spec, g, init_means, init_vars, steps, opt);
  if (opt.halving_check) {
    const LimitRiccati f = solve_limit_once(spec, g, init_means, init_vars, 2 * steps, opt);
    double ch = 0.0;
    Eigen::Map<const Eigen::VectorXd> pc(r.p.data(), r.p.size());
    Eigen::VectorXd pf(r.p.size());
    Eigen::MatrixXd qf(r.q.rows(), r.q.cols()), mf = qf, vf = qf;
    for (std::size_t j = 0; j <= steps; ++j) {
      pf[j] = f.p[2 * j];
      qf.col(j) = f.q.col(2 * j);
      mf.col(j) = f.m.col(2 * j);
      vf.col(j) = f.v.col(2 * j);
    }
    ch = std::max(ch, rel_change(pc, pf));
    ch = std::max(ch, rel_change(r.q, qf));
    ch = std::max(ch, rel_change(r.m, mf));
    ch = std::max(ch, rel_change(r.v, vf));
    r.meta.halving_change = ch;
  }
  return r;
}

// ---------------------------------------------------------------- linear n-player

Eigen::MatrixXd LinearNPlayerRiccati::P(std::size_t node) const {
  return U * pk.col(node).asDiagonal() * U.transpose();
}

Eigen::VectorXd LinearNPlayerRiccati::q(std::size_t node) const { return U * qt.col(node); }

LinearNPlayerRiccati solve_riccati_linear_nplayer(const LqSpec& spec, const Eigen::MatrixXd& gn,
                                                  const RiccatiOptions& opt) {
  spec.validate();
  require_square(gn, "sampled graphon");
  const std::size_t n = static_cast<std::size_t>(gn.rows());
  const double nd = double(n);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gn);
  if (es.info() != Eigen::Success) throw NumericError("eigendecomposition of the sampled graphon failed");

  auto run = [&](std::size_t steps) {
    LinearNPlayerRiccati r;
    r.U = es.eigenvectors();
    r.mu = es.eigenvalues();
    const double h = spec.T / double(steps);
    const Table c(spec, steps);
    r.t.resize(steps + 1);
    for (std::size_t j = 0; j <= steps; ++j) r.t[j] = j == steps ? spec.T : double(j) * h;
    r.meta.steps = steps;
    const Eigen::VectorXd ones_t = r.U.transpose() * Eigen::VectorXd::Ones(n);
    r.g = gn * Eigen::VectorXd::Ones(n) / nd;  // times beta0(t)
    const Eigen::ArrayXd g_t = (r.mu.array() * ones_t.array()) / nd;  // U^T G 1 / n

    auto fp = [&](std::size_t k, const Eigen::ArrayXd& p) -> Eigen::ArrayXd {
      return -(2.0 * c.b2[k] + c.beta1[k] * r.mu.array() / nd) * p + c.b3sq[k] * p.square() - c.eta1[k];
    };
    auto fq = [&](std::size_t k, const Eigen::ArrayXd& p, const Eigen::ArrayXd& q) -> Eigen::ArrayXd {
      return (-c.b2[k] + c.b3sq[k] * p) * q - p * c.beta0[k] * g_t - c.eta0[k] * ones_t.array();
    };
    r.pk.resize(n, steps + 1);
    r.qt.resize(n, steps + 1);
    Eigen::MatrixXd dp(n, steps + 1), dq(n, steps + 1);
    r.pk.col(steps).setConstant(spec.rho1);
    r.qt.col(steps) = spec.rho0 * ones_t;
    dp.col(steps) = fp(2 * steps, r.pk.col(steps).array()).matrix();
    dq.col(steps) = fq(2 * steps, r.pk.col(steps).array(), r.qt.col(steps).array()).matrix();
    for (std::size_t j = steps; j > 0; --j) {
      const std::size_t k = 2 * j;
      const Eigen::ArrayXd p = r.pk.col(j).array(), q = r.qt.col(j).array();
      // p and q advance together so the midpoint p is the RK4 stage value
      const Eigen::ArrayXd a1 = fp(k, p), b1 = fq(k, p, q);
      const Eigen::ArrayXd p2 = p - 0.5 * h * a1, q2 = q - 0.5 * h * b1;
      const Eigen::ArrayXd a2 = fp(k - 1, p2), b2 = fq(k - 1, p2, q2);
      const Eigen::ArrayXd p3 = p - 0.5 * h * a2, q3 = q - 0.5 * h * b2;
      const Eigen::ArrayXd a3 = fp(k - 1, p3), b3 = fq(k - 1, p3, q3);
      const Eigen::ArrayXd p4 = p - h * a3, q4 = q - h * b3;
      const Eigen::ArrayXd a4 = fp(k - 2, p4), b4 = fq(k - 2, p4, q4);
      r.pk.col(j - 1) = (p - h / 6.0 * (a1 + 2 * a2 + 2 * a3 + a4)).matrix();
      r.qt.col(j - 1) = (q - h / 6.0 * (b1 + 2 * b2 + 2 * b3 + b4)).matrix();
      const double pm = r.pk.col(j - 1).cwiseAbs().maxCoeff();
      check_guard(pm, r.t[j - 1], opt.guard);
      dp.col(j - 1) = fp(k - 2, r.pk.col(j - 1).array()).matrix();
      dq.col(j - 1) = fq(k - 2, r.pk.col(j - 1).array(), r.qt.col(j - 1).array()).matrix();
    }
    double res = 0.0;
    for (std::size_t j = 0; j < steps; ++j) {
      const Stencil s = midpoint_stencil(j, steps, h);
      Eigen::ArrayXd pv = Eigen::ArrayXd::Zero(n), pd = pv, qv = pv, qd = pv;
      for (int i = 0; i < 6; ++i) {
        pv += s.w[i] * r.pk.col(s.start + i).array();
        pd += s.dw[i] * r.pk.col(s.start + i).array();
        qv += s.w[i] * r.qt.col(s.start + i).array();
        qd += s.dw[i] * r.qt.col(s.start + i).array();
      }
      res = std::max(res, (pd - fp(2 * j + 1, pv)).abs().maxCoeff());
      res = std::max(res, (qd - fq(2 * j + 1, pv, qv)).abs().maxCoeff());
    }
    r.meta.max_residual = res;
    return r;
  };

  const std::size_t steps = auto_steps(spec, opt);
  LinearNPlayerRiccati r = run(steps);
  if (opt.halving_check) {
    const LinearNPlayerRiccati f = run(2 * steps);
    Eigen::MatrixXd pf(n, steps + 1), qf(n, steps + 1);
    for (std::size_t j = 0; j <= steps; ++j) {
      pf.col(j) = f.pk.col(2 * j);
      qf.col(j) = f.qt.col(2 * j);
    }
    r.meta.halving_change = std::max(rel_change(r.pk, pf), rel_change(r.qt, qf));
  }
  return r;
}

// ---------------------------------------------------------------- n-player game

namespace {

// Y^{ij} = K_i[j,:] X + Kap(j, i), with
//   K_i = E_ii Phi + (1/n) diag(G_i.) H + V Om_i.
struct GameState {
  Eigen::MatrixXd Phi, H, Om, Kap;  // Om stacks the rank x n blocks of all players

  GameState& axpy(double a, const GameState& o) {
    Phi += a * o.Phi;
    H += a * o.H;
    Om += a * o.Om;
    Kap += a * o.Kap;
    return *this;
  }
};

struct GameSystem {
  const LqSpec& spec;
  const Table& c;
  const Eigen::MatrixXd& G;
  const Eigen::MatrixXd& V;
  const Eigen::VectorXd& S;
  std::size_t n, r;
  std::vector<Eigen::MatrixXd> GV;  // G diag(V_l)

  GameSystem(const LqSpec& s, const Table& tab, const Eigen::MatrixXd& g, const Eigen::MatrixXd& v,
             const Eigen::VectorXd& sv)
      : spec(s), c(tab), G(g), V(v), S(sv), n(std::size_t(g.rows())), r(std::size_t(v.cols())) {
    for (std::size_t l = 0; l < r; ++l) GV.push_back(G * V.col(l).asDiagonal());
  }

  void feedback(const GameState& x, Eigen::MatrixXd& D, Eigen::VectorXd& d) const {
    const double nd = double(n);
    D.resize(n, n);
    d.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      D.row(i) = x.Phi.row(i) + (G(i, i) / nd) * x.H.row(i);
      if (r > 0) D.row(i) += V.row(i) * x.Om.middleRows(i * r, r);
      d[i] = x.Kap(i, i);
    }
  }

  GameState rhs(std::size_t k, const GameState& x) const {
    const double nd = double(n);
    const double b2 = c.b2[k], b3sq = c.b3sq[k], beta1 = c.beta1[k], beta0 = c.beta0[k];
    Eigen::MatrixXd D;
    Eigen::VectorXd d;
    feedback(x, D, d);
    Eigen::MatrixXd At = (beta1 / nd) * G - b3sq * D;
    At.diagonal().array() += b2;
    const Eigen::VectorXd u = (beta0 / nd) * (G * Eigen::VectorXd::Ones(n)) - b3sq * d;

    GameState f;
    f.Phi.noalias() = -b2 * x.Phi - x.Phi * At;
    f.Phi.diagonal().array() -= c.eta1[k];
    f.H.noalias() = -b2 * x.H - x.H * At;
    f.H.diagonal().array() -= c.eta1h[k];
    f.Om.resize(x.Om.rows(), n);
    if (r > 0) {
      f.Om.noalias() = -b2 * x.Om - x.Om * At;
      std::vector<Eigen::MatrixXd> X(r);
      for (std::size_t l = 0; l < r; ++l) X[l].noalias() = GV[l] * x.H;
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t l = 0; l < r; ++l) {
          Eigen::RowVectorXd vts = V(i, l) * x.Phi.row(i) + X[l].row(i) / nd;
          f.Om.row(i * r + l) -= (beta1 / nd) * S[l] * (x.Om.row(i * r + l) + vts);
        }
      }
    }
    const Eigen::VectorXd phu = x.Phi * u, hu = x.H * u;
    f.Kap.noalias() = -b2 * x.Kap - (beta1 / nd) * (G * x.Kap);
    f.Kap.diagonal() -= phu;
    f.Kap.noalias() -= (1.0 / nd) * (hu.asDiagonal() * G);
    if (r > 0) {
      Eigen::MatrixXd W(r, n);
      for (std::size_t i = 0; i < n; ++i) W.col(i) = x.Om.middleRows(i * r, r) * u;
      f.Kap.noalias() -= V * W;
    }
    f.Kap.diagonal().array() -= c.eta0[k];
    f.Kap -= (c.eta0h[k] / nd) * G;
    return f;
  }
};

}  // namespace

Eigen::VectorXd GameRiccati::row(std::size_t slot, std::size_t i, std::size_t j, const LqSpec& spec) const {
  (void)spec;
  if (i == j) throw ValidationError("GameRiccati::row covers off-diagonal rows only; use D for i == j");
  Eigen::VectorXd out = (G(i, j) / double(n)) * H[slot].row(j).transpose();
  if (rank > 0) out += (V.row(j) * Omega[slot][i]).transpose();
  return out;
}

GameRiccati solve_riccati_nplayer(const LqSpec& spec, const Eigen::MatrixXd& gn, const GameRiccatiOptions& opt) {
  spec.validate();
  require_square(gn, "sampled graphon");
  const std::size_t n = static_cast<std::size_t>(gn.rows());
  if (n > opt.budget)
    throw CapabilityError("n = " + std::to_string(n) + " exceeds the n-player Riccati budget " +
                          std::to_string(opt.budget));
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gn);
  if (es.info() != Eigen::Success) throw NumericError("eigendecomposition of the sampled graphon failed");
  const double top = es.eigenvalues().cwiseAbs().maxCoeff();
  std::vector<Eigen::Index> keep;
  for (Eigen::Index k = 0; k < es.eigenvalues().size(); ++k)
    if (top > 0.0 && std::abs(es.eigenvalues()[k]) > opt.rank_tol * top) keep.push_back(k);

  GameRiccati out;
  out.n = n;
  out.rank = keep.size();
  out.G = gn;
  out.V.resize(n, out.rank);
  out.S.resize(out.rank);
  for (std::size_t l = 0; l < keep.size(); ++l) {
    out.V.col(l) = es.eigenvectors().col(keep[l]);
    out.S[l] = es.eigenvalues()[keep[l]];
  }

  auto run = [&](std::size_t steps, GameRiccati& g, bool keep_reports) {
    const double h = spec.T / double(steps);
    const Table c(spec, steps);
    GameSystem sys(spec, c, g.G, g.V, g.S);
    const std::size_t r = g.rank;
    g.t.resize(steps + 1);
    for (std::size_t j = 0; j <= steps; ++j) g.t[j] = j == steps ? spec.T : double(j) * h;
    g.meta.steps = steps;
    g.D.assign(steps + 1, {});
    g.d.assign(steps + 1, {});

    std::vector<int> slot_of(steps + 1, -1);
    if (keep_reports) {
      g.report_nodes.clear();
      for (double rt : opt.report_times) {
        const double pos = rt / h;
        const double idx = std::round(pos);
        if (std::abs(pos - idx) > 1e-6 || idx < 0 || idx > double(steps))
          throw ValidationError("report time " + fmt(rt) + " is not a dense-grid node");
        g.report_nodes.push_back(std::size_t(idx));
      }
      const std::size_t ns = g.report_nodes.size();
      g.H.assign(ns, {});
      g.Omega.assign(ns, std::vector<Eigen::MatrixXd>(n));
      g.kappa.assign(ns, {});
      for (std::size_t s = 0; s < ns; ++s) slot_of[g.report_nodes[s]] = int(s);
    }

    GameState x;
    x.Phi = spec.rho1 * Eigen::MatrixXd::Identity(n, n);
    x.H = spec.rho1_hat * Eigen::MatrixXd::Identity(n, n);
    x.Om = Eigen::MatrixXd::Zero(n * r, n);
    x.Kap = (spec.rho0_hat / double(n)) * g.G;
    x.Kap.diagonal().array() += spec.rho0;

    auto record = [&](std::size_t j) {
      sys.feedback(x, g.D[j], g.d[j]);
      if (!g.D[j].allFinite() || g.D[j].cwiseAbs().maxCoeff() > opt.ode.guard)
        throw NumericError("n-player Riccati blow-up at t = " + fmt(g.t[j]));
      if (keep_reports && slot_of[j] >= 0) {
        const std::size_t s = std::size_t(slot_of[j]);
        g.H[s] = x.H;
        for (std::size_t i = 0; i < n; ++i) g.Omega[s][i] = x.Om.middleRows(i * r, r);
        g.kappa[s] = x.Kap;
      }
    };
    record(steps);
    for (std::size_t j = steps; j > 0; --j) {
      const std::size_t k = 2 * j;
      const GameState k1 = sys.rhs(k, x);
      GameState y = x;
      y.axpy(-0.5 * h, k1);
      const GameState k2 = sys.rhs(k - 1, y);
      y = x;
      y.axpy(-0.5 * h, k2);
      const GameState k3 = sys.rhs(k - 1, y);
      y = x;
      y.axpy(-h, k3);
      const GameState k4 = sys.rhs(k - 2, y);
      x.axpy(-h / 6.0, k1).axpy(-h / 3.0, k2).axpy(-h / 3.0, k3).axpy(-h / 6.0, k4);
      record(j - 1);
    }
  };

  const std::size_t steps = auto_steps(spec, opt.ode);
  run(steps, out, true);
  out.meta.max_residual = -1.0;  // not evaluated for the matrix system
  if (opt.ode.halving_check) {
    GameRiccati fine;
    fine.n = n;
    fine.rank = out.rank;
    fine.G = out.G;
    fine.V = out.V;
    fine.S = out.S;
    run(2 * steps, fine, false);
    double ch = 0.0;
    double scale_D = 1e-300, scale_d = 1e-300, diff_D = 0.0, diff_d = 0.0;
    for (std::size_t j = 0; j <= steps; ++j) {
      scale_D = std::max(scale_D, fine.D[2 * j].cwiseAbs().maxCoeff());
      scale_d = std::max(scale_d, fine.d[2 * j].cwiseAbs().maxCoeff());
      diff_D = std::max(diff_D, (out.D[j] - fine.D[2 * j]).cwiseAbs().maxCoeff());
      diff_d = std::max(diff_d, (out.d[j] - fine.d[2 * j]).cwiseAbs().maxCoeff());
    }
    ch = std::max(diff_D / scale_D, diff_d / scale_d);
    out.meta.halving_change = ch;
  }
  return out;
}

GameMoments game_moments(const GameRiccati& r, const LqSpec& spec, const Eigen::VectorXd& init_means,
                         const Eigen::VectorXd& init_vars) {
  const std::size_t n = r.n, steps = r.t.size() - 1;
  if (std::size_t(init_means.size()) != n || std::size_t(init_vars.size()) != n)
    throw ValidationError("game_moments: initial moments must have n entries");
  if (steps % 2 != 0) throw ValidationError("game_moments: dense step count must be even");
  const double h = spec.T / double(steps);
  const double nd = double(n);
  const Eigen::VectorXd g1 = r.G * Eigen::VectorXd::Ones(n) / nd;

  // closed-loop drift matrix and offset at dense node j
  auto drift = [&](std::size_t j, Eigen::MatrixXd& At, Eigen::VectorXd& u) {
    const double t = r.t[j];
    const double b3 = spec.b3(t);
    At = (spec.beta1(t) / nd) * r.G - b3 * b3 * r.D[j];
    At.diagonal().array() += spec.b2(t);
    u = spec.beta0(t) * g1 - b3 * b3 * r.d[j];
  };

  GameMoments out;
  out.mean.assign(steps + 1, {});
  std::vector<Eigen::MatrixXd> cov_at(r.report_nodes.size());
  std::vector<int> slot_of(steps + 1, -1);
  for (std::size_t s = 0; s < r.report_nodes.size(); ++s) slot_of[r.report_nodes[s]] = int(s);

  Eigen::VectorXd m = init_means;
  Eigen::MatrixXd C = init_vars.asDiagonal();
  const double s2 = spec.sigma * spec.sigma;
  Eigen::MatrixXd A0, A1, A2;
  Eigen::VectorXd u0, u1, u2;
  auto fm = [](const Eigen::MatrixXd& A, const Eigen::VectorXd& u, const Eigen::VectorXd& x) -> Eigen::VectorXd {
    return A * x + u;
  };
  auto fc = [s2](const Eigen::MatrixXd& A, const Eigen::MatrixXd& x) -> Eigen::MatrixXd {
    Eigen::MatrixXd y = A * x;
    Eigen::MatrixXd out = y + y.transpose();
    out.diagonal().array() += s2;
    return out;
  };
  auto store = [&](std::size_t j) {
    out.mean[j] = m;
    if (slot_of[j] >= 0) cov_at[std::size_t(slot_of[j])] = C;
  };
  store(0);
  // RK4 with step 2h so every stage lands on a stored node
  for (std::size_t j = 0; j < steps; j += 2) {
    drift(j, A0, u0);
    drift(j + 1, A1, u1);
    drift(j + 2, A2, u2);
    const double H = 2.0 * h;
    const Eigen::VectorXd a1 = fm(A0, u0, m), a2 = fm(A1, u1, m + 0.5 * H * a1), a3 = fm(A1, u1, m + 0.5 * H * a2),
                          a4 = fm(A2, u2, m + H * a3);
    const Eigen::MatrixXd c1 = fc(A0, C), c2 = fc(A1, C + 0.5 * H * c1), c3 = fc(A1, C + 0.5 * H * c2),
                          c4 = fc(A2, C + H * c3);
    const Eigen::VectorXd m_old = m;
    const Eigen::MatrixXd C_old = C;
    m += H / 6.0 * (a1 + 2 * a2 + 2 * a3 + a4);
    C += H / 6.0 * (c1 + 2 * c2 + 2 * c3 + c4);
    // odd node by cubic Hermite interpolation across the double step
    out.mean[j + 1] = 0.5 * (m_old + m) + 0.125 * H * (a1 - fm(A2, u2, m));
    if (slot_of[j + 1] >= 0) cov_at[std::size_t(slot_of[j + 1])] = 0.5 * (C_old + C) + 0.125 * H * (c1 - fc(A2, C));
    store(j + 2);
  }

  out.max_offdiag.assign(r.report_nodes.size(), 0.0);
  for (std::size_t s = 0; s < r.report_nodes.size(); ++s) {
    const std::size_t j = r.report_nodes[s];
    const Eigen::MatrixXd M2 = cov_at[s] + out.mean[j] * out.mean[j].transpose();
    const Eigen::VectorXd& mu = out.mean[j];
    double best = 0.0;
    Eigen::MatrixXd R(n, n);
    for (std::size_t i = 0; i < n; ++i) {
      R = (r.G.col(i) / nd).asDiagonal() * r.H[s];
      if (r.rank > 0) R.noalias() += r.V * r.Omega[s][i];
      const Eigen::MatrixXd RM = R * M2;
      const Eigen::VectorXd quad = (RM.cwiseProduct(R)).rowwise().sum();
      const Eigen::VectorXd lin = R * mu;
      for (std::size_t jj = 0; jj < n; ++jj) {
        if (jj == i) continue;
        const double kap = r.kappa[s](jj, i);
        best = std::max(best, quad[jj] + 2.0 * kap * lin[jj] + kap * kap);
      }
    }
    out.max_offdiag[s] = best;
  }
  return out;
}

}  // namespace gmfg
