#pragma once

#include <cstddef>
#include <cstdint>

#include "gmfg/paths.hpp"

namespace gmfg {

// Counter-based Gaussian source: the draw for (seed, label, path, step) is a
// pure function of those values, so any system asking for the same key sees
// the same increment regardless of evaluation order or thread layout.
class BrownianTable {
 public:
  BrownianTable(std::uint64_t seed, std::size_t paths, std::size_t steps, double dt);

  std::uint64_t seed() const { return seed_; }
  std::size_t paths() const { return paths_; }
  std::size_t steps() const { return steps_; }
  double dt() const { return dt_; }

  // Standard normal for the Brownian increment of `step` (0-based).
  double normal(const Label& l, std::size_t path, std::size_t step) const;
  double increment(const Label& l, std::size_t path, std::size_t step) const;
  // Standard normal used for the initial condition (separate stream).
  double initial_normal(const Label& l, std::size_t path) const;

  // Normals for all paths [first, first+count) of one step.
  void normals(const Label& l, std::size_t step, std::size_t first, std::size_t count, double* out) const;
  void initial_normals(const Label& l, std::size_t first, std::size_t count, double* out) const;

  // Fingerprint of the streams a label consumes on this table.
  std::uint64_t digest(const Label& l) const;

 private:
  void pair(const Label& l, std::uint64_t stream, std::size_t q, double& z0, double& z1) const;

  std::uint64_t seed_;
  std::size_t paths_;
  std::size_t steps_;
  double dt_;
};

std::uint64_t mix64(std::uint64_t x);

}  // namespace gmfg
