#include "gmfg/regression.hpp"

#include <Eigen/Dense>
#include <cmath>

#include "gmfg/errors.hpp"

namespace gmfg {

double PolyFit::operator()(double x, double z) const {
  const double u = (x - center[0]) / scale[0];
  if (dims == 1) {
    double acc = 0.0;
    for (std::size_t k = coef.size(); k-- > 0;) acc = acc * u + coef[k];
    return acc;
  }
  const double v = (z - center[1]) / scale[1];
  double acc = 0.0;
  for (std::size_t k = 0; k < coef.size(); ++k) {
    double term = coef[k];
    for (int a = 0; a < powers[k][0]; ++a) term *= u;
    for (int b = 0; b < powers[k][1]; ++b) term *= v;
    acc += term;
  }
  return acc;
}

bool PolyFit::is_zero() const {
  for (double c : coef)
    if (c != 0.0) return false;
  return true;
}

PolyFit PolyFit::constant(double c) {
  PolyFit f;
  f.powers = {{0, 0}};
  f.coef = {c};
  return f;
}

PolyFit PolyFit::affine(double c0, double c1) {
  PolyFit f;
  f.degree = 1;
  f.powers = {{0, 0}, {1, 0}};
  f.coef = {c0, c1};
  return f;
}

namespace {

void standardize(const double* v, std::size_t n, double& c, double& s, bool& active) {
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) sum += v[i];
  c = sum / static_cast<double>(n);
  double sq = 0.0;
  for (std::size_t i = 0; i < n; ++i) sq += (v[i] - c) * (v[i] - c);
  s = std::sqrt(sq / static_cast<double>(n));
  active = s > 1e-13 * (1.0 + std::abs(c));
  if (!active) s = 1.0;
}

}  // namespace

PolyFit fit_poly(const double* x, const double* z, const double* y, std::size_t n, const RegressionOptions& opt) {
  if (n == 0) throw DomainError("regression on an empty sample");
  PolyFit f;
  f.dims = z ? 2 : 1;
  bool ax = false, az = false;
  standardize(x, n, f.center[0], f.scale[0], ax);
  if (z) standardize(z, n, f.center[1], f.scale[1], az);
  const int dx = ax ? opt.degree : 0, dz = az ? opt.degree : 0;
  for (int tot = 0; tot <= opt.degree; ++tot)
    for (int a = tot; a >= 0; --a) {
      const int b = tot - a;
      if (a <= dx && b <= dz) f.powers.push_back({a, b});
    }
  f.degree = std::max(dx, dz);
  const auto k = static_cast<Eigen::Index>(f.powers.size());

  Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(k, k);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(k);
  std::vector<double> phi(static_cast<std::size_t>(k));
  std::array<double, 8> pu{}, pv{};
  for (std::size_t i = 0; i < n; ++i) {
    const double u = (x[i] - f.center[0]) / f.scale[0];
    const double v = z ? (z[i] - f.center[1]) / f.scale[1] : 0.0;
    pu[0] = pv[0] = 1.0;
    for (int d = 1; d <= opt.degree; ++d) {
      pu[d] = pu[d - 1] * u;
      pv[d] = pv[d - 1] * v;
    }
    for (Eigen::Index a = 0; a < k; ++a) phi[a] = pu[f.powers[a][0]] * pv[f.powers[a][1]];
    for (Eigen::Index a = 0; a < k; ++a) {
      rhs[a] += phi[a] * y[i];
      for (Eigen::Index b = a; b < k; ++b) gram(a, b) += phi[a] * phi[b];
    }
  }
  gram = gram.selfadjointView<Eigen::Upper>();
  // the intercept (first column) is left unpenalized
  const double diag = k > 1 ? gram.diagonal().tail(k - 1).mean() : 0.0;
  for (double ridge = opt.ridge;; ridge *= 100.0) {
    Eigen::MatrixXd reg = gram;
    reg.diagonal().tail(k - 1).array() += ridge * diag;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(reg);
    if (ldlt.info() == Eigen::Success && ldlt.isPositive() && ldlt.rcond() > 1e-13) {
      Eigen::VectorXd c = ldlt.solve(rhs);
      if (c.allFinite()) {
        f.coef.assign(c.data(), c.data() + k);
        f.ridge = ridge;
        if (f.dims == 1) {
          // order by power for Horner evaluation
          std::vector<double> ordered(static_cast<std::size_t>(f.degree) + 1, 0.0);
          for (Eigen::Index a = 0; a < k; ++a) ordered[f.powers[a][0]] = f.coef[a];
          f.coef = ordered;
          f.powers.clear();
          for (int d = 0; d <= f.degree; ++d) f.powers.push_back({d, 0});
        }
        return f;
      }
    }
    if (ridge * 100.0 > opt.max_ridge * (1.0 + 1e-12)) break;
  }
  throw NumericError("regression Gram matrix is singular even after ridge escalation");
}

}  // namespace gmfg
