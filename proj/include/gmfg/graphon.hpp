#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

namespace gmfg {

// Symmetric interaction kernel on [0,1]^2, either analytic or blockwise constant.
class Graphon {
 public:
  using Kernel = std::function<double(double, double)>;

  static Graphon analytic(std::string name, Kernel kernel, double bound = 1.0);
  static Graphon step(Eigen::MatrixXd blocks, std::vector<double> boundaries, double bound = 1.0);
  static Graphon uniform_step(Eigen::MatrixXd blocks, double bound = 1.0);
  static Graphon constant(double c);

  bool is_step() const { return !kernel_; }
  const std::string& name() const { return name_; }
  double bound() const { return bound_; }
  const Eigen::MatrixXd& blocks() const { return blocks_; }
  const std::vector<double>& boundaries() const { return boundaries_; }
  std::size_t block_count() const { return boundaries_.empty() ? 0 : boundaries_.size() - 1; }

  double operator()(double lambda, double kappa) const;

 private:
  Graphon() = default;
  std::string name_;
  Kernel kernel_;
  Eigen::MatrixXd blocks_;
  std::vector<double> boundaries_;
  double bound_ = 1.0;
};

// Signed symmetric step function, typically a difference of two step graphons.
struct GraphonDelta {
  Eigen::MatrixXd blocks;
  std::vector<double> boundaries;

  std::size_t block_count() const { return boundaries.size() - 1; }
  double width(std::size_t i) const { return boundaries[i + 1] - boundaries[i]; }
  GraphonDelta scaled(double c) const;
  GraphonDelta transposed() const;
};

double eval(const Graphon& g, double lambda, double kappa);

// Block (i,j) takes the value g(i/n, j/n).
Graphon sample_step(const Graphon& g, std::size_t n);

// Block values of sample_step(g, n) as a matrix, the form used by the solvers.
Eigen::MatrixXd sampled_matrix(const Graphon& g, std::size_t n);

std::vector<double> common_refinement(const std::vector<double>& a, const std::vector<double>& b);
GraphonDelta difference(const Graphon& a, const Graphon& b);

struct DistanceResult {
  double value = 0.0;
  bool exact = true;            // step x step: closed-form integral
  std::size_t quadrature_level = 0;  // cells per axis when quadrature is used
};

DistanceResult l2_distance(const Graphon& a, const Graphon& b, std::size_t level = 512);
DistanceResult l1_distance(const Graphon& a, const Graphon& b, std::size_t level = 512);
double l1_norm(const GraphonDelta& d);
double l2_norm(const GraphonDelta& d);

struct CutNormOptions {
  std::size_t exact_limit = 16;
  std::size_t restarts = 64;
  std::uint64_t seed = 0x5eedULL;
  unsigned threads = 1;
};

struct CutNormResult {
  double value = 0.0;
  bool approximate = false;
  std::vector<bool> rows;  // maximizing S
  std::vector<bool> cols;  // maximizing T
};

CutNormResult cut_norm(const GraphonDelta& d, const CutNormOptions& opt = {});

// Direct maximization over all subset pairs; exponential in m, used as a check.
double cut_norm_brute_force(const GraphonDelta& d);

// Named presets: "product", "min", "constant:c", "exp-threshold[:s]", "zero",
// "step-csv:<path>". Extra entries may be registered at runtime.
Graphon make_graphon(const std::string& id);
void register_graphon(const std::string& name, std::function<Graphon(const std::string& arg)> factory);

// Pointwise clip(a + eps*b, 0, 1) as an analytic kernel.
Graphon perturbed(const Graphon& base, const Graphon& direction, double eps);

Graphon read_step_csv(const std::string& path);
void write_step_csv(const Graphon& g, const std::string& path);

}  // namespace gmfg
