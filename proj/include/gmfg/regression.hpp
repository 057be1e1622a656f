#pragma once

#include <array>
#include <cstddef>
#include <vector>

namespace gmfg {

// Least-squares polynomial in one or two standardized features. Two-feature
// fits use all monomials of total degree <= degree.
struct PolyFit {
  int dims = 1;
  int degree = 0;
  std::array<double, 2> center{0.0, 0.0};
  std::array<double, 2> scale{1.0, 1.0};
  std::vector<std::array<int, 2>> powers;
  std::vector<double> coef;
  double ridge = 0.0;  // relative regularizer actually used

  double operator()(double x, double z = 0.0) const;
  bool is_zero() const;
  static PolyFit constant(double c);
  // c0 + c1 * x in raw (unstandardized) coordinates.
  static PolyFit affine(double c0, double c1);
};

struct RegressionOptions {
  int degree = 3;
  double ridge = 1e-8;      // relative to the mean Gram diagonal
  double max_ridge = 1e-2;  // escalation stops here
};

// Fits y ~ poly(x[, z]) over n samples. z may be null for a 1D fit. Features
// with no spread are dropped, so constant inputs give an intercept-only fit.
PolyFit fit_poly(const double* x, const double* z, const double* y, std::size_t n, const RegressionOptions& opt);

}  // namespace gmfg
