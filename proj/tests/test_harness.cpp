#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "gmfg/errors.hpp"
#include "gmfg/harness.hpp"

using namespace gmfg;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

json small() {
  return json::parse(R"({
    "seed": 7,
    "grid": {"m": 4, "N": 16, "P": 200},
    "n_list": [2, 3, 4, 5, 6],
    "eps_list": [0.0, 0.1, 0.2, 0.4],
    "w2": {"reference_types": 32, "reference_paths": 8, "worlds": 50, "projections": 16}
  })");
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream s;
  s << f.rdbuf();
  return s.str();
}

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("gmfg_harness_" + name);
  fs::remove_all(p);
  return p;
}

std::size_t count_lines(const std::string& s) { return std::size_t(std::count(s.begin(), s.end(), '\n')); }

}  // namespace

TEST_CASE("config validation") {
  auto j = small();
  CHECK_NOTHROW(ExperimentConfig::from_json(j).validate());

  auto e = j;
  e["n_list"] = json::array();
  CHECK_THROWS_AS(ExperimentConfig::from_json(e).validate(), ValidationError);
  e = j;
  e["eps_list"] = {0.2, 0.1};
  CHECK_THROWS_AS(ExperimentConfig::from_json(e).validate(), ValidationError);
  e = j;
  e.erase("seed");
  CHECK_THROWS_AS(ExperimentConfig::from_json(e).validate(), ValidationError);
  e = j;
  e["graphon"] = "no-such-graphon";
  CHECK_THROWS(ExperimentConfig::from_json(e).validate());
  e = j;
  e["preset"] = "no-such-preset";
  CHECK_THROWS_AS(ExperimentConfig::from_json(e).validate(), ValidationError);
  e = j;
  e["grid"]["Q"] = 3;
  CHECK_THROWS_AS(ExperimentConfig::from_json(e), ValidationError);
  e = j;
  e["seed"] = -1;
  CHECK_THROWS_AS(ExperimentConfig::from_json(e), ValidationError);
}

TEST_CASE("config hash ignores execution-only fields and tracks the rest") {
  auto a = ExperimentConfig::from_json(small());
  auto j = small();
  j["threads"] = 4;
  j["out"] = "elsewhere";
  CHECK(ExperimentConfig::from_json(j).hash() == a.hash());
  j["seed"] = 8;
  CHECK(ExperimentConfig::from_json(j).hash() != a.hash());
  // recomputable from the canonical echo
  CHECK(ExperimentConfig::from_json(a.canonical()).hash() == a.hash());
  CHECK(a.hash().size() == 16);
}

TEST_CASE("stability sweep: eps = 0 is exactly zero and rows match points") {
  auto cfg = ExperimentConfig::from_json(small());
  auto r = run_stability_sweep(cfg);
  REQUIRE(r.points.size() == 4);
  CHECK(r.points[0].error == 0.0);
  CHECK(r.checks["zero_eps_exact"].get<bool>());
  for (std::size_t i = 1; i < 4; ++i) CHECK(r.points[i].error > r.points[i - 1].error);
  auto dir = scratch("stab");
  emit_outputs(r, dir.string());
  const auto csv = slurp(dir / "results.csv");
  CHECK(count_lines(csv) == 5);
  auto echo = json::parse(slurp(dir / "config-echo.json"));
  CHECK(ExperimentConfig::from_json(echo["config"]).hash() == echo["hash"].get<std::string>());
  CHECK(fs::exists(dir / "plotdata" / "stability-stability.csv"));
  CHECK(fs::exists(dir / "timing.json"));
  fs::remove_all(dir);
}

TEST_CASE("stability sweep: zero interaction gives zero error at every eps") {
  auto j = small();
  j["params"] = {{"beta1", 0.0}, {"beta0", 0.0}, {"eta1_hat", 0.0}, {"rho1_hat", 0.0}};
  auto r = run_stability_sweep(ExperimentConfig::from_json(j));
  for (const auto& p : r.points) CHECK(p.error == 0.0);
}

TEST_CASE("poc sweep: five points, byte-identical reruns across thread counts") {
  auto j = small();
  auto a = run_poc_sweep(ExperimentConfig::from_json(j));
  j["threads"] = 3;
  auto b = run_poc_sweep(ExperimentConfig::from_json(j));
  auto da = scratch("poc_a"), db = scratch("poc_b");
  emit_outputs(a, da.string());
  emit_outputs(b, db.string());
  const auto csv = slurp(da / "results.csv");
  CHECK(count_lines(csv) == 6);
  for (const char* f : {"results.csv", "ratefit.json", "config-echo.json", "plotdata/poc-pathwise.csv", "plotdata/poc-w2.csv"})
    CHECK(slurp(da / f) == slurp(db / f));
  for (const auto& p : a.points) {
    CHECK(p.error > 0.0);
    CHECK(p.extra[0] > 0.0);
  }
  fs::remove_all(da);
  fs::remove_all(db);
}

TEST_CASE("poc sweep: zero interaction couples the systems exactly") {
  auto j = small();
  j["params"] = {{"beta1", 0.0}, {"beta0", 0.0}, {"eta1_hat", 0.0}, {"rho1_hat", 0.0}};
  j["n_list"] = {2, 4, 8};
  auto r = run_poc_sweep(ExperimentConfig::from_json(j));
  for (const auto& p : r.points) CHECK(p.error < 1e-24);
}

TEST_CASE("game sweep: audit gate, vanishing control map, decreasing error") {
  auto j = small();
  j["n_list"] = {2, 4, 8};
  j["preset"] = "lq-coercive";
  CHECK_THROWS_AS(run_game_convergence(ExperimentConfig::from_json(j)), ValidationError);

  j["preset"] = "lq-dissipative";
  auto r = run_game_convergence(ExperimentConfig::from_json(j));
  REQUIRE(r.points.size() == 3);
  CHECK(r.points[2].error < r.points[0].error);
  for (const auto& p : r.points) CHECK(std::isfinite(p.extra[3]));

  j["params"] = {{"b3", 0.0}};
  auto z = run_game_convergence(ExperimentConfig::from_json(j));
  for (std::size_t i = 0; i < z.points.size(); ++i) CHECK(z.column(i, "control_gap") == 0.0);
}

TEST_CASE("band half-width scales with the path count") {
  auto j = small();
  j["grid"]["P"] = 20000;
  auto cfg = ExperimentConfig::from_json(j);
  CHECK(band_halfwidth(cfg, 0.4) == doctest::Approx(0.2));
}
