#include "gmfg/game_model.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "gmfg/errors.hpp"

namespace gmfg {

double Interaction::operator()(double t, double x, double xp, double y) const {
  double s = 0.0;
  for (const auto& term : terms) s += term.own(t, x, y) * term.other(t, xp);
  return s;
}

void FbsdeCoefficients::validate() const {
  if (!B0 || !F0 || !Q0) throw ValidationError("FBSDE coefficients need B0, F0 and Q0");
  if (!(sigma > 0.0) || !std::isfinite(sigma)) throw ValidationError("FBSDE volatility must be positive");
  for (const auto* in : {&Bhat, &Fhat, &Qhat}) {
    for (const auto& term : in->terms) {
      if (!term.own || !term.other) throw ValidationError("interaction term with a missing factor");
    }
  }
}

namespace {

void check_derivative(const std::string& name, const std::function<double(double)>& f,
                      const std::function<double(double)>& df) {
  if (!f || !df) throw ValidationError("game spec is missing " + name + " or its derivative");
  for (double x : {-2.0, -1.0, -0.5, 0.0, 0.3, 1.0, 2.0}) {
    const double h = 1e-5 * std::max(1.0, std::abs(x));
    const double fd = (f(x + h) - f(x - h)) / (2.0 * h);
    const double d = df(x);
    if (!std::isfinite(d) || std::abs(d - fd) > 1e-5 * std::max(1.0, std::abs(d))) {
      std::ostringstream os;
      os << "derivative of " << name << " disagrees with finite differences at x=" << x << " (" << d << " vs " << fd
         << ")";
      throw ValidationError(os.str());
    }
  }
}

std::vector<double> linspace(double lo, double hi, std::size_t n) {
  std::vector<double> v(n);
  if (n == 1) {
    v[0] = lo;
    return v;
  }
  for (std::size_t i = 0; i < n; ++i) v[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
  return v;
}

double finite_or_throw(double v, const std::string& what, double t, double x, double y) {
  if (!std::isfinite(v)) {
    std::ostringstream os;
    os << "non-finite " << what << " at sample (t=" << t << ", x=" << x << ", y=" << y << ")";
    throw NumericError(os.str());
  }
  return v;
}

// Largest difference quotient |f(a)-f(b)|/|a-b| over all sample pairs.
template <class F>
double lipschitz(const std::vector<double>& pts, F&& f) {
  std::vector<double> v(pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) v[i] = f(pts[i]);
  double best = 0.0;
  for (std::size_t i = 0; i < pts.size(); ++i)
    for (std::size_t j = i + 1; j < pts.size(); ++j) best = std::max(best, std::abs(v[i] - v[j]) / std::abs(pts[i] - pts[j]));
  return best;
}

// Smallest quotient (a-b)(f(a)-f(b))/(a-b)^2 over sample pairs.
template <class F>
double monotonicity(const std::vector<double>& pts, F&& f) {
  std::vector<double> v(pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) v[i] = f(pts[i]);
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < pts.size(); ++i)
    for (std::size_t j = i + 1; j < pts.size(); ++j) best = std::min(best, (v[i] - v[j]) / (pts[i] - pts[j]));
  return best;
}

template <class F>
double max_slope(const std::vector<double>& pts, F&& f) {
  std::vector<double> v(pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) v[i] = f(pts[i]);
  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < pts.size(); ++i)
    for (std::size_t j = i + 1; j < pts.size(); ++j) best = std::max(best, (v[i] - v[j]) / (pts[i] - pts[j]));
  return best;
}

const std::vector<double> kWeights{0.0, 1.0};

Inequality make_ineq(std::string name, double lhs, std::string rel, double rhs) {
  Inequality q{std::move(name), lhs, rhs, rel, false};
  if (rel == "<") q.satisfied = lhs < rhs;
  if (rel == ">") q.satisfied = lhs > rhs;
  if (rel == ">=") q.satisfied = lhs >= rhs;
  return q;
}

void finish(AssumptionReport& r) {
  bool ok = true;
  for (const auto& q : r.inequalities) ok = ok && q.satisfied && std::isfinite(q.lhs) && std::isfinite(q.rhs);
  for (const auto& c : r.constants) ok = ok && std::isfinite(c.second);
  r.pass = ok;
}

}  // namespace

GameSpec checked(GameSpec s) {
  if (!(s.T > 0.0)) throw ValidationError("game horizon T must be positive");
  if (!(s.sigma > 0.0)) throw ValidationError("game volatility must be positive");
  if (!s.b2 || !s.b3) throw ValidationError("game spec needs b2 and b3");
  if (!(s.control_lo < s.control_hi)) throw ValidationError("control set must be a nonempty interval");
  for (double t : {0.0, 0.5 * s.T, s.T}) {
    check_derivative("b1", [&](double x) { return s.b1(t, x); }, [&](double x) { return s.db1(t, x); });
    check_derivative("f1", [&](double x) { return s.f1(t, x); }, [&](double x) { return s.df1(t, x); });
    check_derivative("f2", [&](double x) { return s.f2(t, x); }, [&](double x) { return s.df2(t, x); });
  }
  check_derivative("q1", s.q1, s.dq1);
  check_derivative("q2", s.q2, s.dq2);
  return s;
}

GameSpec lq_game(const LqGameParams& p, std::string name) {
  GameSpec s;
  s.name = std::move(name);
  s.b1 = [p](double, double x) { return p.beta1 * x + p.beta0; };
  s.db1 = [p](double, double) { return p.beta1; };
  s.b2 = [p](double) { return p.b2; };
  s.b3 = [p](double) { return p.b3; };
  s.f1 = [p](double, double x) { return 0.5 * p.eta1 * x * x + p.eta0 * x; };
  s.df1 = [p](double, double x) { return p.eta1 * x + p.eta0; };
  s.f2 = [p](double, double x) { return 0.5 * p.eta1_hat * x * x + p.eta0_hat * x; };
  s.df2 = [p](double, double x) { return p.eta1_hat * x + p.eta0_hat; };
  s.q1 = [p](double x) { return 0.5 * p.rho1 * x * x + p.rho0 * x; };
  s.dq1 = [p](double x) { return p.rho1 * x + p.rho0; };
  s.q2 = [p](double x) { return 0.5 * p.rho1_hat * x * x + p.rho0_hat * x; };
  s.dq2 = [p](double x) { return p.rho1_hat * x + p.rho0_hat; };
  s.sigma = p.sigma;
  s.T = p.T;
  return checked(std::move(s));
}

LqGameParams lq_preset_params(const std::string& id) {
  LqGameParams p;
  if (id == "lq-dissipative") {
    p.beta1 = 0.5;
    p.beta0 = 1.0;
    p.b2 = -200.0;
    p.b3 = 1.0;
    p.eta1 = 1.0;
    p.rho1 = 1.0;
    return p;
  }
  if (id == "lq-coercive") {
    p.beta1 = 0.2;
    p.beta0 = 1.0;
    p.b2 = -1.0;
    p.b3 = 10.5;
    p.eta1 = 1.0;
    p.rho1 = 220.0;
    p.eta1_hat = 0.2;
    p.rho1_hat = 0.2;
    return p;
  }
  throw ValidationError("unknown linear-quadratic game preset '" + id + "'");
}

GameSpec game_preset(const std::string& id) {
  if (id == "lq-dissipative" || id == "lq-coercive") return lq_game(lq_preset_params(id), id);
  if (id == "nonlinear-tanh") {
    LqGameParams p = lq_preset_params("lq-dissipative");
    GameSpec s = lq_game(p, id);
    s.b1 = [](double, double x) { return std::tanh(x); };
    s.db1 = [](double, double x) {
      const double c = std::cosh(x);
      return 1.0 / (c * c);
    };
    return checked(std::move(s));
  }
  throw ValidationError("unknown game preset '" + id + "'");
}

FbsdeCoefficients reduce_to_fbsde(const GameSpec& s) {
  FbsdeCoefficients c;
  auto b2 = s.b2, b3 = s.b3;
  auto df1 = s.df1;
  auto b1 = s.b1;
  c.B0 = [b2, b3](double t, double x, double y) {
    const double v = b3(t);
    return b2(t) * x - v * v * y;
  };
  c.Bhat.terms.push_back({[](double, double, double) { return 1.0; }, [b1](double t, double xp) { return b1(t, xp); }});
  c.F0 = [b2, df1](double t, double x, double y) { return b2(t) * y + df1(t, x); };
  c.Q0 = s.dq1;
  c.sigma = s.sigma;
  c.x_rate = b2;
  c.y_rate = b2;
  return c;
}

ControlValue optimal_control(const GameSpec& s, double t, double y) {
  const double a = -s.b3(t) * y;
  ControlValue v{std::clamp(a, s.control_lo, s.control_hi), false};
  v.clipped = v.value != a;
  return v;
}

FbsdeCoefficients blend(const FbsdeCoefficients& c, double z, TimeFn b0, TimeFn f0, double q0) {
  FbsdeCoefficients r;
  const double w = 1.0 - z;
  auto B0 = c.B0, F0 = c.F0;
  auto Q0 = c.Q0;
  r.B0 = [B0, z, w, b0](double t, double x, double y) { return z * B0(t, x, y) - w * y + (b0 ? b0(t) : 0.0); };
  r.F0 = [F0, z, w, f0](double t, double x, double y) { return z * F0(t, x, y) + w * x + (f0 ? f0(t) : 0.0); };
  r.Q0 = [Q0, z, w, q0](double x) { return z * Q0(x) + w * x + q0; };
  auto scale = [z](const Interaction& in) {
    Interaction out;
    for (const auto& term : in.terms) {
      auto own = term.own;
      out.terms.push_back({[own, z](double t, double x, double y) { return z * own(t, x, y); }, term.other});
    }
    return out;
  };
  if (z != 0.0) {
    r.Bhat = scale(c.Bhat);
    r.Fhat = scale(c.Fhat);
    r.Qhat = scale(c.Qhat);
  }
  r.sigma = c.sigma;
  if (c.x_rate) r.x_rate = [xr = c.x_rate, z](double t) { return z * xr(t); };
  if (c.y_rate) r.y_rate = [yr = c.y_rate, z](double t) { return z * yr(t); };
  return r;
}

std::vector<double> SamplingGrid::ts() const { return linspace(t0, t1, nt); }
std::vector<double> SamplingGrid::xs() const { return linspace(x_lo, x_hi, nx); }
std::vector<double> SamplingGrid::ys() const { return linspace(y_lo, y_hi, ny); }

SamplingGrid SamplingGrid::refined() const {
  SamplingGrid g = *this;
  g.nt = nt > 1 ? 2 * nt - 1 : nt;
  g.nx = nx > 1 ? 2 * nx - 1 : nx;
  g.ny = ny > 1 ? 2 * ny - 1 : ny;
  return g;
}

std::string SamplingGrid::describe() const {
  std::ostringstream os;
  os << "t in [" << t0 << "," << t1 << "] x" << nt << "; x,x' in [" << x_lo << "," << x_hi << "] x" << nx
     << "; y in [" << y_lo << "," << y_hi << "] x" << ny << "; graphon weight in {0,1}; dissipativity guard " << guard;
  return os.str();
}

double AssumptionReport::constant(const std::string& name) const {
  for (const auto& c : constants)
    if (c.first == name) return c.second;
  throw DomainError("report has no constant '" + name + "'");
}

std::string AssumptionReport::to_text() const {
  std::ostringstream os;
  os.precision(10);
  os << assumption << ": " << (pass ? "PASS" : "FAIL") << "\n  sampling: " << sampling << "\n";
  for (const auto& c : constants) os << "  " << c.first << " = " << c.second << "\n";
  for (const auto& q : inequalities) {
    os << "  [" << (q.satisfied ? "ok" : "violated") << "] " << q.name << ": " << q.lhs << " " << q.relation << " "
       << q.rhs << "\n";
  }
  for (const auto& n : notes) os << "  note: " << n << "\n";
  return os.str();
}

AssumptionReport audit_assumption1(const FbsdeCoefficients& c, double p, const SamplingGrid& g) {
  if (!(p >= 2.0)) throw DomainError("assumption-1 audit needs p >= 2");
  c.validate();
  const auto ts = g.ts(), xs = g.xs(), ys = g.ys();
  const double T = g.t1;
  double K1 = std::numeric_limits<double>::infinity(), K2 = K1;
  double lip_B_y = 0.0, lip_F_x = 0.0, lip_Q_x = 0.0, lip_Bhat = 0.0, lip_Fhat = 0.0, lip_Qhat = 0.0;
  for (double t : ts) {
    for (double w : kWeights) {
      for (double xp : xs) {
        for (double y : ys) {
          // dissipativity of B in x
          K1 = std::min(K1, -max_slope(xs, [&](double x) {
                              return finite_or_throw(c.B(t, x, xp, y, w), "B", t, x, y);
                            }));
        }
        for (double x : xs) {
          K2 = std::min(K2, -max_slope(ys, [&](double y) { return finite_or_throw(c.F(t, x, xp, y, w), "F", t, x, y); }));
          lip_B_y = std::max(lip_B_y, lipschitz(ys, [&](double y) { return c.B(t, x, xp, y, w); }));
        }
        for (double y : ys) lip_F_x = std::max(lip_F_x, lipschitz(xs, [&](double x) { return c.F(t, x, xp, y, w); }));
      }
    }
    for (double x : xs) {
      for (double y : ys) {
        lip_Bhat = std::max(lip_Bhat, lipschitz(xs, [&](double xp) { return c.Bhat(t, x, xp, y); }));
        lip_Fhat = std::max(lip_Fhat, lipschitz(xs, [&](double xp) { return c.Fhat(t, x, xp, y); }));
      }
    }
  }
  for (double w : kWeights)
    for (double xp : xs)
      lip_Q_x = std::max(lip_Q_x, lipschitz(xs, [&](double x) { return finite_or_throw(c.Q(T, x, xp, w), "Q", T, x, 0); }));
  for (double x : xs) lip_Qhat = std::max(lip_Qhat, lipschitz(xs, [&](double xp) { return c.Qhat(T, x, xp, 0.0); }));

  K1 = std::max(K1, g.guard);
  K2 = std::max(K2, g.guard);
  // the measure argument enters through a graphon of sup-norm at most 1, so a
  // Lipschitz constant l in x' gives a measure-Lipschitz bound with L = 2l
  const double L1 = std::max(lip_B_y, 2.0 * lip_Bhat);
  const double L2 = std::max(lip_F_x, 2.0 * lip_Fhat);
  const double L3 = std::max(lip_Q_x, 2.0 * lip_Qhat);

  AssumptionReport r;
  r.assumption = "assumption-1 (contraction, p=" + std::to_string(p) + ")";
  r.sampling = g.describe();
  r.constants = {{"K1", K1}, {"K2", K2}, {"L1", L1}, {"L2", L2}, {"L3", L3}, {"p", p}};
  r.inequalities.push_back(
      make_ineq("pK1 + pK2 > (2p-1)L1 + (2p-2)L2", p * K1 + p * K2, ">", (2 * p - 1) * L1 + (2 * p - 2) * L2));
  const double lo = (2 * p - 2) * L2 - p * K2, hi = p * K1 - (2 * p - 1) * L1;
  double best_k = std::numeric_limits<double>::quiet_NaN(), best_lhs = 0.0, best_rhs = 0.0, best_margin = -INFINITY;
  if (lo < hi) {
    const int scan = 4001;
    for (int s = 1; s < scan; ++s) {
      const double k = lo + (hi - lo) * s / double(scan);
      const double lhs = k + p * K2 - (2 * p - 2) * L2;
      const double rhs = std::pow(2.0, p) * L1 * std::pow(L3, p) +
                         (std::pow(2.0, p - 1) * L1 * L1 * std::pow(L3, p) + 2 * L1 * L2) / (-k + p * K1 - (2 * p - 1) * L1);
      if (lhs - rhs > best_margin) {
        best_margin = lhs - rhs;
        best_k = k;
        best_lhs = lhs;
        best_rhs = rhs;
      }
    }
    r.constants.push_back({"k", best_k});
    r.inequalities.push_back(make_ineq("contraction inequality at best scanned k", best_lhs, ">", best_rhs));
  } else {
    r.inequalities.push_back(make_ineq("admissible k interval is nonempty", lo, "<", hi));
  }
  r.notes.push_back("constants are sample-based estimates on the stated grid, not proofs");
  r.notes.push_back("L3 is the estimated terminal Lipschitz constant, including the interaction part");
  finish(r);
  return r;
}

AssumptionReport audit_assumption2(const FbsdeCoefficients& c, const SamplingGrid& g) {
  c.validate();
  const auto ts = g.ts(), xs = g.xs(), ys = g.ys();
  const double T = g.t1;
  // a thinner x' sample keeps the pairwise (x,y) scan affordable
  std::vector<double> xps;
  for (std::size_t i = 0; i < xs.size(); i += std::max<std::size_t>(1, xs.size() / 4)) xps.push_back(xs[i]);
  if (xps.back() != xs.back()) xps.push_back(xs.back());
  double k_joint = std::numeric_limits<double>::infinity();
  std::vector<double> bx(xs.size() * ys.size()), fx(bx.size());
  for (double t : ts) {
    for (double w : kWeights) {
      for (double xp : xps) {
        for (std::size_t i = 0; i < xs.size(); ++i)
          for (std::size_t j = 0; j < ys.size(); ++j) {
            bx[i * ys.size() + j] = finite_or_throw(c.B(t, xs[i], xp, ys[j], w), "B", t, xs[i], ys[j]);
            fx[i * ys.size() + j] = finite_or_throw(c.F(t, xs[i], xp, ys[j], w), "F", t, xs[i], ys[j]);
          }
        for (std::size_t a = 0; a < bx.size(); ++a) {
          for (std::size_t b = a + 1; b < bx.size(); ++b) {
            const double dx = xs[a / ys.size()] - xs[b / ys.size()];
            const double dy = ys[a % ys.size()] - ys[b % ys.size()];
            const double form = dx * (fx[a] - fx[b]) - dy * (bx[a] - bx[b]);
            k_joint = std::min(k_joint, form / (dx * dx + dy * dy));
          }
        }
      }
    }
  }
  double k_term = std::numeric_limits<double>::infinity();
  for (double w : kWeights)
    for (double xp : xps)
      k_term = std::min(k_term, monotonicity(xs, [&](double x) { return finite_or_throw(c.Q(T, x, xp, w), "Q", T, x, 0); }));
  double l = 0.0;
  for (double t : ts)
    for (double x : xs)
      for (double y : ys) {
        l = std::max(l, lipschitz(xs, [&](double xp) { return c.Bhat(t, x, xp, y); }));
        l = std::max(l, lipschitz(xs, [&](double xp) { return c.Fhat(t, x, xp, y); }));
      }
  for (double x : xs) l = std::max(l, lipschitz(xs, [&](double xp) { return c.Qhat(T, x, xp, 0.0); }));
  k_joint = std::max(k_joint, g.guard);
  k_term = std::max(k_term, g.guard);
  const double k = std::min(k_joint, k_term);

  AssumptionReport r;
  r.assumption = "assumption-2 (monotonicity)";
  r.sampling = g.describe();
  r.constants = {{"k_joint", k_joint}, {"k_terminal", k_term}, {"k", k}, {"l", l}};
  r.inequalities.push_back(make_ineq("k > 0", k, ">", 0.0));
  r.inequalities.push_back(make_ineq("k > 3l", k, ">", 3.0 * l));
  r.notes.push_back("k is the smaller of the joint monotonicity and terminal coercivity estimates");
  finish(r);
  return r;
}

AssumptionReport audit_game_assumptions(const GameSpec& s, GameAssumption which, const SamplingGrid& g) {
  const auto ts = g.ts(), xs = g.xs();
  double lip_b1 = 0.0, lip_df1 = 0.0, lip_df2 = 0.0, max_b2 = -INFINITY, max_b3 = 0.0, min_b3sq = INFINITY;
  double conv_f1 = INFINITY, conv_f2 = INFINITY;
  for (double t : ts) {
    lip_b1 = std::max(lip_b1, lipschitz(xs, [&](double x) { return finite_or_throw(s.b1(t, x), "b1", t, x, 0); }));
    lip_df1 = std::max(lip_df1, lipschitz(xs, [&](double x) { return finite_or_throw(s.df1(t, x), "df1", t, x, 0); }));
    lip_df2 = std::max(lip_df2, lipschitz(xs, [&](double x) { return finite_or_throw(s.df2(t, x), "df2", t, x, 0); }));
    conv_f1 = std::min(conv_f1, monotonicity(xs, [&](double x) { return s.df1(t, x); }));
    conv_f2 = std::min(conv_f2, monotonicity(xs, [&](double x) { return s.df2(t, x); }));
    max_b2 = std::max(max_b2, finite_or_throw(s.b2(t), "b2", t, 0, 0));
    const double b3 = finite_or_throw(s.b3(t), "b3", t, 0, 0);
    max_b3 = std::max(max_b3, std::abs(b3));
    min_b3sq = std::min(min_b3sq, b3 * b3);
  }
  const double lip_dq1 = lipschitz(xs, [&](double x) { return finite_or_throw(s.dq1(x), "dq1", s.T, x, 0); });
  const double conv_q1 = monotonicity(xs, [&](double x) { return s.dq1(x); });

  AssumptionReport r;
  r.sampling = g.describe();
  r.notes.push_back("constants are sample-based estimates on the stated grid, not proofs");
  if (which == GameAssumption::assume4) {
    const double L = std::max({1.0, lip_b1, lip_df1, lip_df2, lip_dq1, max_b3});
    r.assumption = "assumption-4 (dissipative game)";
    r.constants = {{"L", L}, {"max_b2", max_b2}, {"max_abs_b3", max_b3}};
    r.inequalities.push_back(make_ineq("max b2 < -100 L^4", max_b2, "<", -100.0 * std::pow(L, 4)));
    r.inequalities.push_back(make_ineq("f1 convex (min slope of df1)", conv_f1, ">=", -1e-9));
    r.inequalities.push_back(make_ineq("f2 convex (min slope of df2)", conv_f2, ">=", -1e-9));
    r.inequalities.push_back(make_ineq("q1 convex (min slope of dq1)", conv_q1, ">=", -1e-9));
    r.notes.push_back("L is floored at 1 and includes max|b3|");
  } else {
    const double L = std::max({1.0, lip_b1, lip_df1});
    double iota = INFINITY;
    for (double x : xs)
      for (double xp : xs) {
        if (x == xp) continue;
        iota = std::min(iota, (s.q1(xp) - s.q1(x) - (xp - x) * s.dq1(x)) / ((xp - x) * (xp - x)));
      }
    r.assumption = "assumption-5 (coercive game)";
    r.constants = {{"L", L}, {"iota", iota}, {"min_b3_sq", min_b3sq}};
    r.inequalities.push_back(make_ineq("min(inf b3^2, iota) >= 100 L^2", std::min(min_b3sq, iota), ">=", 100.0 * L * L));
    r.inequalities.push_back(make_ineq("iota > 0", iota, ">", 0.0));
    r.inequalities.push_back(make_ineq("f1 convex (min slope of df1)", conv_f1, ">=", -1e-9));
    r.inequalities.push_back(make_ineq("f2 convex (min slope of df2)", conv_f2, ">=", -1e-9));
    r.notes.push_back("L is floored at 1");
  }
  finish(r);
  return r;
}

}  // namespace gmfg
