#include "gmfg/noise.hpp"

#include <cmath>
#include <cstring>
#include <numbers>

#include "gmfg/errors.hpp"

namespace gmfg {

std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

namespace {

constexpr std::uint64_t kInitialStream = ~0ULL;

std::uint64_t key(std::uint64_t seed, const Label& l, std::uint64_t stream, std::uint64_t q) {
  std::uint64_t h = mix64(seed);
  h = mix64(h ^ l.num);
  h = mix64(h ^ (l.den * 0x632be59bd9b4e019ULL));
  h = mix64(h ^ stream);
  return mix64(h ^ q);
}

// Uniform in (0,1), never 0.
double unit(std::uint64_t bits) { return (static_cast<double>(bits >> 11) + 0.5) * 0x1.0p-53; }

}  // namespace

BrownianTable::BrownianTable(std::uint64_t seed, std::size_t paths, std::size_t steps, double dt)
    : seed_(seed), paths_(paths), steps_(steps), dt_(dt) {
  if (paths == 0 || steps == 0 || !(dt > 0.0)) throw DomainError("noise table needs paths, steps and dt > 0");
}

void BrownianTable::pair(const Label& l, std::uint64_t stream, std::size_t q, double& z0, double& z1) const {
  const std::uint64_t k = key(seed_, l, stream, q);
  const double u1 = unit(k), u2 = unit(mix64(k ^ 0xd6e8feb86659fd93ULL));
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double th = 2.0 * std::numbers::pi * u2;
  z0 = r * std::cos(th);
  z1 = r * std::sin(th);
}

double BrownianTable::normal(const Label& l, std::size_t path, std::size_t step) const {
  double z0, z1;
  pair(l, step, path / 2, z0, z1);
  return path % 2 ? z1 : z0;
}

double BrownianTable::increment(const Label& l, std::size_t path, std::size_t step) const {
  return std::sqrt(dt_) * normal(l, path, step);
}

double BrownianTable::initial_normal(const Label& l, std::size_t path) const {
  double z0, z1;
  pair(l, kInitialStream, path / 2, z0, z1);
  return path % 2 ? z1 : z0;
}

void BrownianTable::normals(const Label& l, std::size_t step, std::size_t first, std::size_t count, double* out) const {
  std::size_t p = first;
  const std::size_t end = first + count;
  if (p % 2 && p < end) {
    *out++ = normal(l, p, step);
    ++p;
  }
  for (; p + 1 < end; p += 2) {
    pair(l, step, p / 2, out[0], out[1]);
    out += 2;
  }
  if (p < end) *out = normal(l, p, step);
}

void BrownianTable::initial_normals(const Label& l, std::size_t first, std::size_t count, double* out) const {
  for (std::size_t p = 0; p < count; ++p) out[p] = initial_normal(l, first + p);
}

std::uint64_t BrownianTable::digest(const Label& l) const {
  std::uint64_t dt_bits;
  std::memcpy(&dt_bits, &dt_, sizeof dt_bits);
  std::uint64_t h = key(seed_, l, 0x5eed, paths_);
  h = mix64(h ^ steps_);
  h = mix64(h ^ dt_bits);
  double probe = normal(l, paths_ - 1, steps_ - 1);
  std::uint64_t pb;
  std::memcpy(&pb, &probe, sizeof pb);
  return mix64(h ^ pb);
}

}  // namespace gmfg
