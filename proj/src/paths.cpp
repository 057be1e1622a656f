#include "gmfg/paths.hpp"

#include <numeric>

#include "gmfg/errors.hpp"

namespace gmfg {

Label Label::of(std::uint64_t num, std::uint64_t den) {
  if (den == 0) throw DomainError("label denominator must be positive");
  const std::uint64_t g = std::gcd(num, den);
  return g == 0 ? Label{0, 1} : Label{num / g, den / g};
}

void PathSet::resize(std::vector<Label> l, std::vector<double> t, std::size_t p) {
  labels = std::move(l);
  times = std::move(t);
  paths = p;
  const std::size_t total = labels.size() * times.size() * paths;
  x.assign(total, 0.0);
  y.assign(total, 0.0);
  noise_digest.assign(labels.size(), 0);
}

MomentStats moments(const double* v, std::size_t n) {
  MomentStats s;
  if (n == 0) return s;
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) sum += v[i];
  s.mean = sum / static_cast<double>(n);
  if (n < 2) return s;
  double sq = 0.0;
  for (std::size_t i = 0; i < n; ++i) sq += (v[i] - s.mean) * (v[i] - s.mean);
  s.var = sq / static_cast<double>(n - 1);
  return s;
}

}  // namespace gmfg
