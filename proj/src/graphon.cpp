#include "gmfg/graphon.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <mutex>
#include <random>
#include <sstream>
#include <thread>

#include "gmfg/errors.hpp"

namespace gmfg {

namespace {

void check_unit(double v, const char* what) {
  if (!(v >= 0.0 && v <= 1.0)) {
    throw DomainError(std::string(what) + " coordinate outside [0,1]: " + std::to_string(v));
  }
}

std::size_t block_index(const std::vector<double>& b, double v) {
  // right-open blocks, the last one closed
  auto it = std::upper_bound(b.begin(), b.end(), v);
  std::size_t idx = static_cast<std::size_t>(it - b.begin());
  idx = idx == 0 ? 0 : idx - 1;
  return std::min(idx, b.size() - 2);
}

void check_boundaries(const std::vector<double>& b, std::size_t m) {
  if (b.size() != m + 1) throw DomainError("step graphon needs m+1 boundaries");
  if (b.front() != 0.0 || b.back() != 1.0) throw DomainError("step boundaries must start at 0 and end at 1");
  for (std::size_t i = 0; i + 1 < b.size(); ++i) {
    if (!(b[i] < b[i + 1])) throw DomainError("step boundaries must be strictly increasing");
  }
}

std::vector<double> uniform_boundaries(std::size_t m) {
  std::vector<double> b(m + 1);
  for (std::size_t i = 0; i <= m; ++i) b[i] = static_cast<double>(i) / static_cast<double>(m);
  return b;
}

// Two-point Gauss-Legendre nodes on each cell of an axis partition.
struct AxisRule {
  std::vector<double> nodes;
  std::vector<double> weights;
};

AxisRule axis_rule(const std::vector<double>& breaks, std::size_t level) {
  AxisRule r;
  const double g = 0.5 / std::sqrt(3.0);
  for (std::size_t b = 0; b + 1 < breaks.size(); ++b) {
    const double lo = breaks[b], hi = breaks[b + 1];
    const auto cells = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(level * (hi - lo) - 1e-9)));
    const double h = (hi - lo) / static_cast<double>(cells);
    for (std::size_t c = 0; c < cells; ++c) {
      const double mid = lo + (static_cast<double>(c) + 0.5) * h;
      r.nodes.push_back(mid - g * h);
      r.nodes.push_back(mid + g * h);
      r.weights.push_back(0.5 * h);
      r.weights.push_back(0.5 * h);
    }
  }
  return r;
}

template <class F>
DistanceResult integrate_difference(const Graphon& a, const Graphon& b, std::size_t level, F&& f) {
  DistanceResult res;
  if (a.is_step() && b.is_step()) {
    GraphonDelta d = difference(a, b);
    double s = 0.0;
    for (std::size_t i = 0; i < d.block_count(); ++i)
      for (std::size_t j = 0; j < d.block_count(); ++j) s += f(d.blocks(i, j)) * d.width(i) * d.width(j);
    res.value = s;
    return res;
  }
  std::vector<double> breaks{0.0, 1.0};
  if (a.is_step()) breaks = common_refinement(breaks, a.boundaries());
  if (b.is_step()) breaks = common_refinement(breaks, b.boundaries());
  AxisRule r = axis_rule(breaks, level);
  double s = 0.0;
  for (std::size_t i = 0; i < r.nodes.size(); ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < r.nodes.size(); ++j) {
      row += r.weights[j] * f(a(r.nodes[i], r.nodes[j]) - b(r.nodes[i], r.nodes[j]));
    }
    s += r.weights[i] * row;
  }
  res.value = s;
  res.exact = false;
  res.quadrature_level = level;
  return res;
}

std::map<std::string, std::function<Graphon(const std::string&)>>& registry() {
  static std::map<std::string, std::function<Graphon(const std::string&)>> r;
  return r;
}

std::mutex& registry_mutex() {
  static std::mutex m;
  return m;
}

double parse_number(const std::string& s, const std::string& id) {
  try {
    std::size_t pos = 0;
    double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw ValidationError("bad numeric parameter in graphon id '" + id + "'");
  }
}

}  // namespace

Graphon Graphon::analytic(std::string name, Kernel kernel, double bound) {
  if (!kernel) throw DomainError("analytic graphon needs a kernel");
  if (!(bound >= 0.0)) throw DomainError("graphon bound must be nonnegative");
  Graphon g;
  g.name_ = std::move(name);
  g.kernel_ = std::move(kernel);
  g.bound_ = bound;
  // symmetry and range are checked on a coarse sample grid
  const int q = 17;
  for (int i = 0; i < q; ++i) {
    for (int j = 0; j < q; ++j) {
      const double l = i / double(q - 1), k = j / double(q - 1);
      const double v = g.kernel_(l, k), w = g.kernel_(k, l);
      if (!std::isfinite(v)) throw DomainError("graphon '" + g.name_ + "' is not finite at a sample point");
      if (std::abs(v - w) > 1e-12 * (1.0 + std::abs(v))) throw DomainError("graphon '" + g.name_ + "' is not symmetric");
      if (v < -1e-15 || v > bound + 1e-12) throw DomainError("graphon '" + g.name_ + "' leaves [0, bound]");
    }
  }
  return g;
}

Graphon Graphon::step(Eigen::MatrixXd blocks, std::vector<double> boundaries, double bound) {
  const auto m = static_cast<std::size_t>(blocks.rows());
  if (m == 0 || blocks.cols() != blocks.rows()) throw DomainError("step graphon needs a nonempty square block matrix");
  check_boundaries(boundaries, m);
  if (!(blocks - blocks.transpose()).isZero(0.0)) throw DomainError("step graphon block matrix is not symmetric");
  if (!blocks.allFinite() || blocks.minCoeff() < 0.0 || blocks.maxCoeff() > bound) {
    throw DomainError("step graphon values must lie in [0, bound]");
  }
  Graphon g;
  g.name_ = "step";
  g.blocks_ = std::move(blocks);
  g.boundaries_ = std::move(boundaries);
  g.bound_ = bound;
  return g;
}

Graphon Graphon::uniform_step(Eigen::MatrixXd blocks, double bound) {
  auto m = static_cast<std::size_t>(blocks.rows());
  return step(std::move(blocks), uniform_boundaries(m), bound);
}

Graphon Graphon::constant(double c) {
  return uniform_step(Eigen::MatrixXd::Constant(1, 1, c), std::max(1.0, c));
}

double Graphon::operator()(double lambda, double kappa) const {
  check_unit(lambda, "lambda");
  check_unit(kappa, "kappa");
  if (kernel_) return kernel_(lambda, kappa);
  return blocks_(static_cast<Eigen::Index>(block_index(boundaries_, lambda)),
                 static_cast<Eigen::Index>(block_index(boundaries_, kappa)));
}

double eval(const Graphon& g, double lambda, double kappa) { return g(lambda, kappa); }

Eigen::MatrixXd sampled_matrix(const Graphon& g, std::size_t n) {
  if (n == 0) throw DomainError("sample_step needs n >= 1");
  Eigen::MatrixXd m(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      const double v = g(double(i + 1) / double(n), double(j + 1) / double(n));
      m(i, j) = v;
      m(j, i) = v;
    }
  }
  return m;
}

Graphon sample_step(const Graphon& g, std::size_t n) {
  return Graphon::uniform_step(sampled_matrix(g, n), g.bound());
}

std::vector<double> common_refinement(const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<double> r;
  r.reserve(a.size() + b.size());
  std::merge(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(r));
  r.erase(std::unique(r.begin(), r.end()), r.end());
  return r;
}

GraphonDelta difference(const Graphon& a, const Graphon& b) {
  if (!a.is_step() || !b.is_step()) throw CapabilityError("graphon difference needs step operands");
  GraphonDelta d;
  d.boundaries = common_refinement(a.boundaries(), b.boundaries());
  const std::size_t m = d.boundaries.size() - 1;
  d.blocks.resize(m, m);
  for (std::size_t i = 0; i < m; ++i) {
    const double li = 0.5 * (d.boundaries[i] + d.boundaries[i + 1]);
    for (std::size_t j = 0; j < m; ++j) {
      const double kj = 0.5 * (d.boundaries[j] + d.boundaries[j + 1]);
      d.blocks(i, j) = a(li, kj) - b(li, kj);
    }
  }
  return d;
}

GraphonDelta GraphonDelta::scaled(double c) const {
  GraphonDelta d = *this;
  d.blocks *= c;
  return d;
}

GraphonDelta GraphonDelta::transposed() const {
  GraphonDelta d = *this;
  d.blocks.transposeInPlace();
  return d;
}

DistanceResult l2_distance(const Graphon& a, const Graphon& b, std::size_t level) {
  auto r = integrate_difference(a, b, level, [](double v) { return v * v; });
  r.value = std::sqrt(std::max(0.0, r.value));
  return r;
}

DistanceResult l1_distance(const Graphon& a, const Graphon& b, std::size_t level) {
  return integrate_difference(a, b, level, [](double v) { return std::abs(v); });
}

double l1_norm(const GraphonDelta& d) {
  double s = 0.0;
  for (std::size_t i = 0; i < d.block_count(); ++i)
    for (std::size_t j = 0; j < d.block_count(); ++j) s += std::abs(d.blocks(i, j)) * d.width(i) * d.width(j);
  return s;
}

double l2_norm(const GraphonDelta& d) {
  double s = 0.0;
  for (std::size_t i = 0; i < d.block_count(); ++i)
    for (std::size_t j = 0; j < d.block_count(); ++j) s += d.blocks(i, j) * d.blocks(i, j) * d.width(i) * d.width(j);
  return std::sqrt(s);
}

namespace {

// Column sums of the weighted block matrix restricted to rows in `mask`,
// accumulated in ascending row order.
void masked_column_sums(const GraphonDelta& d, std::uint64_t mask, std::vector<double>& c) {
  const std::size_t m = d.block_count();
  std::fill(c.begin(), c.end(), 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    if (!((mask >> i) & 1ULL)) continue;
    const double wi = d.width(i);
    for (std::size_t j = 0; j < m; ++j) c[j] += d.blocks(i, j) * wi * d.width(j);
  }
}

// Best T for given column sums: all positive or all negative columns.
double best_columns(const std::vector<double>& c, std::uint64_t& tmask) {
  double pos = 0.0, neg = 0.0;
  std::uint64_t pm = 0, nm = 0;
  for (std::size_t j = 0; j < c.size(); ++j) {
    if (c[j] > 0.0) {
      pos += c[j];
      pm |= 1ULL << j;
    } else if (c[j] < 0.0) {
      neg += c[j];
      nm |= 1ULL << j;
    }
  }
  if (pos >= -neg) {
    tmask = pm;
    return pos;
  }
  tmask = nm;
  return -neg;
}

std::vector<bool> unpack(std::uint64_t mask, std::size_t m) {
  std::vector<bool> v(m);
  for (std::size_t i = 0; i < m; ++i) v[i] = (mask >> i) & 1ULL;
  return v;
}

}  // namespace

CutNormResult cut_norm(const GraphonDelta& d, const CutNormOptions& opt) {
  const std::size_t m = d.block_count();
  if (m == 0) throw DomainError("cut norm of an empty delta");
  CutNormResult res;
  if (m <= opt.exact_limit && m < 63) {
    const std::uint64_t total = 1ULL << m;
    const unsigned threads = std::max(1u, opt.threads);
    struct Best {
      double v = 0.0;
      std::uint64_t s = 0, t = 0;
    };
    std::vector<Best> best(threads);
    auto work = [&](unsigned w) {
      std::vector<double> c(m);
      const std::uint64_t lo = total * w / threads, hi = total * (w + 1) / threads;
      for (std::uint64_t s = lo; s < hi; ++s) {
        masked_column_sums(d, s, c);
        std::uint64_t t = 0;
        const double v = best_columns(c, t);
        if (v > best[w].v) best[w] = {v, s, t};
      }
    };
    if (threads == 1) {
      work(0);
    } else {
      std::vector<std::thread> pool;
      for (unsigned w = 0; w < threads; ++w) pool.emplace_back(work, w);
      for (auto& th : pool) th.join();
    }
    // ties resolved toward the lowest subset index, independent of thread count
    Best b;
    for (const auto& x : best) {
      if (x.v > b.v || (x.v == b.v && x.s < b.s)) b = x;
    }
    res.value = b.v;
    res.rows = unpack(b.s, m);
    res.cols = unpack(b.t, m);
    return res;
  }

  // alternating maximization: fix S, pick best T; fix T, pick best S
  res.approximate = true;
  std::mt19937_64 rng(opt.seed);
  std::bernoulli_distribution coin(0.5);
  std::vector<bool> s(m), t(m);
  auto value_for = [&](const std::vector<bool>& rows, std::vector<bool>& cols, bool transpose) {
    std::vector<double> c(m, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
      if (!rows[i]) continue;
      for (std::size_t j = 0; j < m; ++j) {
        const double v = transpose ? d.blocks(j, i) : d.blocks(i, j);
        c[j] += v * d.width(i) * d.width(j);
      }
    }
    double pos = 0.0, neg = 0.0;
    for (double x : c) (x > 0 ? pos : neg) += x;
    const bool take_pos = pos >= -neg;
    for (std::size_t j = 0; j < m; ++j) cols[j] = take_pos ? c[j] > 0 : c[j] < 0;
    return take_pos ? pos : -neg;
  };
  for (std::size_t r = 0; r < std::max<std::size_t>(1, opt.restarts); ++r) {
    for (std::size_t i = 0; i < m; ++i) s[i] = coin(rng);
    double v = value_for(s, t, false), prev = -1.0;
    for (int it = 0; it < 100 && v > prev + 1e-15; ++it) {
      prev = v;
      value_for(t, s, true);
      v = value_for(s, t, false);
    }
    if (v > res.value) {
      res.value = v;
      res.rows = s;
      res.cols = t;
    }
  }
  return res;
}

double cut_norm_brute_force(const GraphonDelta& d) {
  const std::size_t m = d.block_count();
  if (m > 20) throw CapabilityError("brute-force cut norm limited to 20 blocks");
  const std::uint64_t total = 1ULL << m;
  std::vector<double> c(m);
  double best = 0.0;
  for (std::uint64_t s = 0; s < total; ++s) {
    masked_column_sums(d, s, c);
    for (std::uint64_t t = 0; t < total; ++t) {
      double sum = 0.0;
      for (std::size_t j = 0; j < m; ++j) {
        if ((t >> j) & 1ULL) sum += c[j];
      }
      best = std::max(best, std::abs(sum));
    }
  }
  return best;
}

void register_graphon(const std::string& name, std::function<Graphon(const std::string&)> factory) {
  std::lock_guard<std::mutex> lock(registry_mutex());
  registry()[name] = std::move(factory);
}

Graphon make_graphon(const std::string& id) {
  const auto colon = id.find(':');
  const std::string head = id.substr(0, colon);
  const std::string arg = colon == std::string::npos ? "" : id.substr(colon + 1);
  if (head == "product") return Graphon::analytic(id, [](double l, double k) { return l * k; });
  if (head == "min") return Graphon::analytic(id, [](double l, double k) { return std::min(l, k); });
  if (head == "zero") return Graphon::constant(0.0);
  if (head == "constant") {
    if (arg.empty()) throw ValidationError("constant graphon needs a value, e.g. constant:0.5");
    const double c = parse_number(arg, id);
    if (c < 0.0) throw ValidationError("constant graphon must be nonnegative");
    return Graphon::constant(c);
  }
  if (head == "exp-threshold") {
    const double s = arg.empty() ? 4.0 : parse_number(arg, id);
    return Graphon::analytic(id, [s](double l, double k) { return std::exp(-s * std::abs(l - k)); });
  }
  if (head == "step-csv") return read_step_csv(arg);
  {
    std::lock_guard<std::mutex> lock(registry_mutex());
    auto it = registry().find(head);
    if (it != registry().end()) return it->second(arg);
  }
  throw ValidationError("unknown graphon preset '" + id + "'");
}

Graphon perturbed(const Graphon& base, const Graphon& direction, double eps) {
  return Graphon::analytic(base.name() + "+eps", [base, direction, eps](double l, double k) {
    return std::clamp(base(l, k) + eps * direction(l, k), 0.0, 1.0);
  });
}

Graphon read_step_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open graphon csv '" + path + "'");
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) row.push_back(parse_number(cell.substr(0, cell.find_last_not_of(" \t\r") + 1), path));
    rows.push_back(std::move(row));
  }
  if (rows.size() < 2) throw ValidationError("graphon csv '" + path + "' needs boundaries and block rows");
  const std::size_t m = rows.size() - 1;
  Eigen::MatrixXd blocks(m, m);
  for (std::size_t i = 0; i < m; ++i) {
    if (rows[i + 1].size() != m) throw ValidationError("graphon csv '" + path + "' block row has wrong width");
    for (std::size_t j = 0; j < m; ++j) blocks(i, j) = rows[i + 1][j];
  }
  return Graphon::step(blocks, rows[0], std::max(1.0, blocks.maxCoeff()));
}

void write_step_csv(const Graphon& g, const std::string& path) {
  if (!g.is_step()) throw CapabilityError("only step graphons serialize to csv");
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write graphon csv '" + path + "'");
  out.precision(17);
  const auto& b = g.boundaries();
  for (std::size_t i = 0; i < b.size(); ++i) out << (i ? "," : "") << b[i];
  out << '\n';
  for (Eigen::Index i = 0; i < g.blocks().rows(); ++i) {
    for (Eigen::Index j = 0; j < g.blocks().cols(); ++j) out << (j ? "," : "") << g.blocks()(i, j);
    out << '\n';
  }
}

}  // namespace gmfg
