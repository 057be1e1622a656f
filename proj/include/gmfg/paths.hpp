#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace gmfg {

// Rational type label num/den kept in lowest terms, so 2/4 and 1/2 coincide.
struct Label {
  std::uint64_t num = 1;
  std::uint64_t den = 1;

  static Label of(std::uint64_t num, std::uint64_t den);
  double value() const { return static_cast<double>(num) / static_cast<double>(den); }
  bool operator==(const Label& o) const { return num == o.num && den == o.den; }
};

// State and adjoint trajectories on the reporting grid, one block per label.
// Layout: [label][time][path].
struct PathSet {
  std::vector<Label> labels;
  std::vector<double> times;
  std::size_t paths = 0;
  std::vector<double> x;
  std::vector<double> y;
  // Digest of the noise consumed per label; equal digests certify coupling.
  std::vector<std::uint64_t> noise_digest;

  void resize(std::vector<Label> l, std::vector<double> t, std::size_t p);
  std::size_t steps() const { return times.empty() ? 0 : times.size() - 1; }
  std::size_t index(std::size_t i, std::size_t k, std::size_t p) const {
    return (i * times.size() + k) * paths + p;
  }
  double* x_at(std::size_t i, std::size_t k) { return x.data() + index(i, k, 0); }
  double* y_at(std::size_t i, std::size_t k) { return y.data() + index(i, k, 0); }
  const double* x_at(std::size_t i, std::size_t k) const { return x.data() + index(i, k, 0); }
  const double* y_at(std::size_t i, std::size_t k) const { return y.data() + index(i, k, 0); }
};

struct MomentStats {
  double mean = 0.0;
  double var = 0.0;  // unbiased sample variance
};

MomentStats moments(const double* v, std::size_t n);

}  // namespace gmfg
