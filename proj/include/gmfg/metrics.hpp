#pragma once

#include <array>

#include <cstdint>
#include <vector>

#include "gmfg/paths.hpp"

namespace gmfg {

// Uniformly weighted point cloud in one or two dimensions; points are stored
// interleaved for dim = 2.
struct EmpiricalMeasure {
  int dim = 1;
  std::vector<double> points;

  std::size_t size() const { return points.size() / static_cast<std::size_t>(dim); }
};

double w2_1d(const std::vector<double>& a, const std::vector<double>& b);

enum class W2Mode { exact, sliced };

struct W2Options {
  W2Mode mode = W2Mode::exact;
  std::size_t projections = 64;
  std::uint64_t seed = 0x51cedULL;
  std::size_t exact_limit = 512;
};

double w2_2d(const EmpiricalMeasure& a, const EmpiricalMeasure& b, const W2Options& opt = {});

// Sliced squared W2 against a fixed reference cloud. Projections are sorted
// once and stored with prefix sums, so a query of n points costs O(n log n)
// per direction. Uses the same seeded directions as w2_2d in sliced mode.
class SlicedReference {
 public:
  SlicedReference(const EmpiricalMeasure& ref, const W2Options& opt);
  double distance_sq(const EmpiricalMeasure& a) const;

 private:
  std::vector<std::array<double, 2>> dirs_;
  std::vector<std::vector<double>> sorted_;
  std::vector<std::vector<double>> s1_, s2_;  // prefix sums of values and squares
};

// Minimum-cost perfect matching on a square cost matrix (row-major); returns
// the column assigned to each row.
std::vector<std::size_t> assignment(const std::vector<double>& cost, std::size_t n);

struct PathwiseError {
  double value = 0.0;
  double std_error = 0.0;
};

struct PathwiseOptions {
  // true: E sup_t (dX^2 + dY^2); false: E sup_t dX^2 + E sup_t dY^2
  bool sup_of_sum = true;
};

// Coupled pathwise error between two trajectory sets sharing labels and noise.
// Every label of `b` must be present in `a`.
PathwiseError pathwise_error(const PathSet& a, const PathSet& b, const PathwiseOptions& opt = {});

// Field samples laid out [type][time][sample], times t_0..t_N.
struct FieldSamples {
  std::size_t types = 0;
  std::vector<double> times;
  std::size_t samples = 0;
  std::vector<double> values;
};

double weighted_norm(const FieldSamples& delta, double k, double p);

struct RateFit {
  std::vector<double> ns;
  std::vector<double> errors;
  double slope = 0.0;
  double intercept = 0.0;
  double r_squared = 0.0;
  std::vector<double> residuals;
};

RateFit fit_rate(const std::vector<double>& ns, const std::vector<double>& errors);

}  // namespace gmfg
