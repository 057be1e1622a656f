#include "gmfg/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>

#include "gmfg/errors.hpp"

namespace gmfg {

namespace {

// Squared W2 between two sorted samples.
double w2_sq_sorted(const std::vector<double>& sa, const std::vector<double>& sb) {
  double acc = 0.0;
  if (sa.size() == sb.size()) {
    for (std::size_t i = 0; i < sa.size(); ++i) acc += (sa[i] - sb[i]) * (sa[i] - sb[i]);
    return acc / static_cast<double>(sa.size());
  }
  // integrate (F^-1 - G^-1)^2 over the merged quantile breakpoints
  const double na = static_cast<double>(sa.size()), nb = static_cast<double>(sb.size());
  std::size_t i = 0, j = 0;
  double u = 0.0;
  while (i < sa.size() && j < sb.size()) {
    const double ua = static_cast<double>(i + 1) / na, ub = static_cast<double>(j + 1) / nb;
    const double next = std::min(ua, ub);
    acc += (next - u) * (sa[i] - sb[j]) * (sa[i] - sb[j]);
    u = next;
    if (ua <= next) ++i;
    if (ub <= next) ++j;
  }
  return acc;
}

std::vector<std::array<double, 2>> slice_directions(const W2Options& opt) {
  std::mt19937_64 rng(opt.seed);
  std::uniform_real_distribution<double> angle(0.0, std::numbers::pi);
  std::vector<std::array<double, 2>> d(std::max<std::size_t>(1, opt.projections));
  for (auto& v : d) {
    const double th = angle(rng);
    v = {std::cos(th), std::sin(th)};
  }
  return d;
}

void project(const EmpiricalMeasure& m, const std::array<double, 2>& dir, std::vector<double>& out) {
  out.resize(m.size());
  for (std::size_t i = 0; i < m.size(); ++i) out[i] = dir[0] * m.points[2 * i] + dir[1] * m.points[2 * i + 1];
  std::sort(out.begin(), out.end());
}

}  // namespace

double w2_1d(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.empty() || b.empty()) throw DomainError("w2 of an empty measure");
  std::vector<double> sa(a), sb(b);
  std::sort(sa.begin(), sa.end());
  std::sort(sb.begin(), sb.end());
  return std::sqrt(w2_sq_sorted(sa, sb));
}

std::vector<std::size_t> assignment(const std::vector<double>& cost, std::size_t n) {
  // shortest augmenting path with potentials, O(n^3)
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
  std::vector<std::size_t> match(n + 1, 0), way(n + 1, 0);
  std::vector<char> used(n + 1);
  for (std::size_t i = 1; i <= n; ++i) {
    match[0] = i;
    std::size_t j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = match[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[match[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (match[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      match[j0] = match[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<std::size_t> row_to_col(n);
  for (std::size_t j = 1; j <= n; ++j) row_to_col[match[j] - 1] = j - 1;
  return row_to_col;
}

double w2_2d(const EmpiricalMeasure& a, const EmpiricalMeasure& b, const W2Options& opt) {
  if (a.dim != 2 || b.dim != 2) throw DomainError("w2_2d needs two-dimensional measures");
  if (a.size() == 0 || b.size() == 0) throw DomainError("w2 of an empty measure");
  if (opt.mode == W2Mode::exact) {
    const std::size_t n = a.size();
    if (b.size() != n) throw DomainError("exact w2_2d needs equal sample counts");
    if (n > opt.exact_limit) throw CapabilityError("exact w2_2d limited to " + std::to_string(opt.exact_limit) + " points");
    std::vector<double> cost(n * n);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        const double dx = a.points[2 * i] - b.points[2 * j], dy = a.points[2 * i + 1] - b.points[2 * j + 1];
        cost[i * n + j] = dx * dx + dy * dy;
      }
    }
    const auto match = assignment(cost, n);
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += cost[i * n + match[i]];
    return std::sqrt(acc / static_cast<double>(n));
  }
  // sliced: root of the mean squared 1D distance over seeded directions
  const auto dirs = slice_directions(opt);
  std::vector<double> pa, pb;
  double acc = 0.0;
  for (const auto& d : dirs) {
    project(a, d, pa);
    project(b, d, pb);
    acc += w2_sq_sorted(pa, pb);
  }
  return std::sqrt(acc / static_cast<double>(dirs.size()));
}

SlicedReference::SlicedReference(const EmpiricalMeasure& ref, const W2Options& opt) {
  if (ref.dim != 2 || ref.size() == 0) throw DomainError("sliced reference needs a non-empty 2D measure");
  dirs_ = slice_directions(opt);
  sorted_.resize(dirs_.size());
  s1_.resize(dirs_.size());
  s2_.resize(dirs_.size());
  for (std::size_t d = 0; d < dirs_.size(); ++d) {
    project(ref, dirs_[d], sorted_[d]);
    auto& a = s1_[d];
    auto& b = s2_[d];
    a.assign(sorted_[d].size() + 1, 0.0);
    b.assign(sorted_[d].size() + 1, 0.0);
    for (std::size_t i = 0; i < sorted_[d].size(); ++i) {
      a[i + 1] = a[i] + sorted_[d][i];
      b[i + 1] = b[i] + sorted_[d][i] * sorted_[d][i];
    }
  }
}

double SlicedReference::distance_sq(const EmpiricalMeasure& a) const {
  if (a.dim != 2 || a.size() == 0) throw DomainError("sliced distance needs a non-empty 2D measure");
  const std::size_t n = a.size(), M = sorted_.front().size();
  const double Md = double(M);
  std::vector<double> pa;
  double acc = 0.0;
  for (std::size_t d = 0; d < dirs_.size(); ++d) {
    project(a, dirs_[d], pa);
    const auto& r = sorted_[d];
    const auto& c1 = s1_[d];
    const auto& c2 = s2_[d];
    // integrals of the reference quantile function and its square over [0, u]
    auto cum = [&](std::size_t num, std::size_t den, double& i1, double& i2) {
      // u = num / den; index and fraction computed in integers to stay exact
      const std::size_t whole = num * M / den;
      const double frac = double(num * M - whole * den) / double(den);
      i1 = c1[whole] / Md;
      i2 = c2[whole] / Md;
      if (whole < M) {
        i1 += frac * r[whole] / Md;
        i2 += frac * r[whole] * r[whole] / Md;
      }
    };
    double lo1 = 0.0, lo2 = 0.0, hi1, hi2;
    for (std::size_t i = 0; i < n; ++i) {
      cum(i + 1, n, hi1, hi2);
      const double v = pa[i];
      acc += v * v / double(n) - 2.0 * v * (hi1 - lo1) + (hi2 - lo2);
      lo1 = hi1;
      lo2 = hi2;
    }
  }
  return std::max(0.0, acc / static_cast<double>(dirs_.size()));
}

PathwiseError pathwise_error(const PathSet& a, const PathSet& b, const PathwiseOptions& opt) {
  if (a.times != b.times) throw CouplingError("pathwise error needs identical time grids");
  if (a.paths != b.paths) throw CouplingError("pathwise error needs equal path counts");
  const std::size_t n = b.labels.size(), P = b.paths, K = b.times.size();
  std::vector<std::size_t> match(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto it = std::find(a.labels.begin(), a.labels.end(), b.labels[i]);
    if (it == a.labels.end()) throw CouplingError("label missing from the reference solution");
    match[i] = static_cast<std::size_t>(it - a.labels.begin());
    if (a.noise_digest[match[i]] != b.noise_digest[i]) {
      throw CouplingError("noise digests differ for label " + std::to_string(b.labels[i].num) + "/" +
                          std::to_string(b.labels[i].den) + ": solutions are not coupled");
    }
  }
  std::vector<double> per_path(P, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t ia = match[i];
    for (std::size_t p = 0; p < P; ++p) {
      double sup_sum = 0.0, sup_x = 0.0, sup_y = 0.0;
      for (std::size_t k = 0; k < K; ++k) {
        const double dx = a.x[a.index(ia, k, p)] - b.x[b.index(i, k, p)];
        const double dy = a.y[a.index(ia, k, p)] - b.y[b.index(i, k, p)];
        sup_sum = std::max(sup_sum, dx * dx + dy * dy);
        sup_x = std::max(sup_x, dx * dx);
        sup_y = std::max(sup_y, dy * dy);
      }
      per_path[p] += opt.sup_of_sum ? sup_sum : sup_x + sup_y;
    }
  }
  for (auto& v : per_path) v /= static_cast<double>(n);
  const auto s = moments(per_path.data(), P);
  return {s.mean, std::sqrt(s.var / static_cast<double>(P))};
}

double weighted_norm(const FieldSamples& f, double k, double p) {
  if (!(p >= 1.0)) throw DomainError("weighted norm needs p >= 1");
  const std::size_t K = f.times.size();
  if (f.values.size() != f.types * K * f.samples) throw DomainError("field sample array has the wrong size");
  double best = 0.0;
  for (std::size_t i = 0; i < f.types; ++i) {
    double integral = 0.0;
    for (std::size_t t = 0; t + 1 < K; ++t) {
      const double* v = f.values.data() + (i * K + t) * f.samples;
      double acc = 0.0;
      for (std::size_t s = 0; s < f.samples; ++s) acc += p == 2.0 ? v[s] * v[s] : std::pow(std::abs(v[s]), p);
      integral += std::exp(k * f.times[t]) * acc / static_cast<double>(f.samples) * (f.times[t + 1] - f.times[t]);
    }
    best = std::max(best, integral);
  }
  return best;
}

RateFit fit_rate(const std::vector<double>& ns, const std::vector<double>& errors) {
  if (ns.size() != errors.size()) throw DomainError("rate fit needs matching sizes");
  if (ns.size() < 3) throw DomainError("rate fit needs at least 3 points");
  for (std::size_t i = 0; i < ns.size(); ++i) {
    if (!(errors[i] > 0.0) || !std::isfinite(errors[i])) throw DomainError("rate fit needs positive errors");
    if (!(ns[i] > 0.0)) throw DomainError("rate fit needs positive abscissae");
    if (i > 0 && !(ns[i] > ns[i - 1])) throw DomainError("rate fit abscissae must be strictly increasing");
  }
  RateFit r;
  r.ns = ns;
  r.errors = errors;
  const std::size_t n = ns.size();
  double mx = 0.0, my = 0.0;
  std::vector<double> lx(n), ly(n);
  for (std::size_t i = 0; i < n; ++i) {
    lx[i] = std::log(ns[i]);
    ly[i] = std::log(errors[i]);
    mx += lx[i];
    my += ly[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxx += (lx[i] - mx) * (lx[i] - mx);
    sxy += (lx[i] - mx) * (ly[i] - my);
    syy += (ly[i] - my) * (ly[i] - my);
  }
  r.slope = sxy / sxx;
  r.intercept = my - r.slope * mx;
  double sse = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double res = ly[i] - (r.intercept + r.slope * lx[i]);
    r.residuals.push_back(res);
    sse += res * res;
  }
  r.r_squared = syy > 0.0 ? 1.0 - sse / syy : 1.0;
  return r;
}

}  // namespace gmfg
