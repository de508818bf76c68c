#include <doctest.h>

#include <cmath>
#include <sstream>

#include "cpcore/bench.hpp"
#include "cpcore/error.hpp"

using namespace cpcore;
using doctest::Approx;

namespace {

const Group C = Group::core, P = Group::periphery;

SweepConfig small_theta_sweep() {
  SweepConfig cfg;
  cfg.n = 2000;
  cfg.trials = 3;
  cfg.theta1 = 3.0;
  cfg.r = 2.0;
  cfg.theta2_grid = {-0.5, 0.0};
  cfg.seed = 9;
  cfg.fit.restarts = 1;
  return cfg;
}

}  // namespace

TEST_SUITE("bench") {
  TEST_CASE("error rate") {
    CHECK(error_rate(Assignment{C, C, P, P}, Assignment{C, C, P, P}) == 0.0);
    CHECK(error_rate(Assignment{P, P, C, C}, Assignment{C, C, P, P}) == 0.0);
    CHECK(error_rate(Assignment{C, P, P, P}, Assignment{C, C, P, P}) == 0.25);
    CHECK(error_rate(Assignment{C, P, C, P}, Assignment{C, C, P, P}) == 0.5);
    CHECK_THROWS_AS(error_rate(Assignment{C}, Assignment{C, P}), UserError);
    // Invariant under relabeling vertices in both.
    const Assignment a{C, P, P, C, C, P, C}, b{C, C, P, P, C, P, P};
    const Assignment a2{a[3], a[0], a[6], a[1], a[5], a[2], a[4]}, b2{b[3], b[0], b[6], b[1], b[5], b[2], b[4]};
    CHECK(error_rate(a, b) == error_rate(a2, b2));
  }

  TEST_CASE("method names") {
    for (Method m : {Method::bp_em, Method::degree_em, Method::naive}) CHECK(method_from_string(to_string(m)) == m);
    CHECK_THROWS_AS(method_from_string("louvain"), UserError);
  }

  TEST_CASE("default theta2 grid") {
    const auto grid = default_theta2_grid(3.0, 2.0);
    REQUIRE(grid.size() == 11);
    const auto [lo, hi] = admissible_theta2(3.0, 2.0);
    int zeros = 0;
    for (std::size_t k = 0; k < grid.size(); ++k) {
      CHECK(grid[k] > lo);
      CHECK(grid[k] < hi);
      if (k > 0) CHECK(grid[k] > grid[k - 1]);
      zeros += grid[k] == 0.0;
      CHECK_NOTHROW(mixing_from_theta({3.0, grid[k], 2.0}));
    }
    CHECK(zeros == 1);
    CHECK_THROWS_AS(default_theta2_grid(3.0, 2.0, 1), UserError);
  }

  TEST_CASE("config validation") {
    auto cfg = small_theta_sweep();
    CHECK_NOTHROW(cfg.validate());
    cfg.theta2_grid = {0.9};
    CHECK_THROWS_AS(cfg.validate(), UserError);
    cfg = small_theta_sweep();
    cfg.methods.clear();
    CHECK_THROWS_AS(cfg.validate(), UserError);
    cfg = small_theta_sweep();
    cfg.family = SweepFamily::weak;
    cfg.delta_grid.clear();
    CHECK_THROWS_AS(cfg.validate(), UserError);
  }

  TEST_CASE("sweep is identical across worker counts") {
    auto cfg = small_theta_sweep();
    cfg.workers = 1;
    const auto a = run_sweep(cfg);
    cfg.workers = 3;
    const auto b = run_sweep(cfg);
    std::ostringstream ca, cb;
    write_sweep_csv(ca, cfg, a);
    write_sweep_csv(cb, cfg, b);
    CHECK(ca.str() == cb.str());
    std::istringstream lines(ca.str());
    std::string header;
    std::getline(lines, header);
    CHECK(header == "theta1,theta2,method,mean_error,stderr,trials,mean_iters,failures");
    int rows = 0;
    for (std::string line; std::getline(lines, line);) ++rows;
    CHECK(rows == 6);
    REQUIRE(a.size() == 2);
    for (const auto& row : a)
      for (const auto& s : row.methods) {
        CHECK(s.trials == 3);
        CHECK(s.errors.size() == 3);
        CHECK(s.mean_error >= 0.0);
        CHECK(s.mean_error <= 0.5);
      }
  }

  TEST_CASE("strong structure is easy for every method") {
    SweepConfig cfg;
    cfg.n = 5000;
    cfg.trials = 2;
    cfg.theta1 = 10.0;
    cfg.r = 4.0;
    cfg.theta2_grid = {0.0};
    cfg.seed = 3;
    // c = (40, 10, 2.5)
    const auto rows = run_sweep(cfg);
    for (const auto& s : rows[0].methods) CHECK_MESSAGE(s.mean_error < 0.05, to_string(s.method));
  }

  TEST_CASE("true-parameter mode on the weak family") {
    SweepConfig cfg;
    cfg.family = SweepFamily::weak;
    cfg.n = 3000;
    cfg.trials = 2;
    cfg.c = 3.0;
    cfg.delta_grid = {1.0, 2.0};
    cfg.methods = {Method::bp_em};
    cfg.true_params_mode = true;
    const auto rows = run_sweep(cfg);
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].point == 1.0);
    CHECK(rows[1].stats(Method::bp_em).mean_error < 0.5);
    CHECK_THROWS_AS(rows[0].stats(Method::naive), UserError);
    std::ostringstream csv;
    write_sweep_csv(csv, cfg, rows);
    CHECK(csv.str().rfind("c,delta,method", 0) == 0);
  }

  TEST_CASE("linear check with no structure has zero slope") {
    const auto res = weak_structure_linear_check(2000, 3.0, 1.0, 1.0, 0.0, 2, 4);
    CHECK(res.trials_used == 2);
    CHECK(res.vertices == 4000);
    CHECK(std::abs(res.slope) < 1e-9);
    CHECK(std::abs(res.intercept) < 1e-9);
  }

  TEST_CASE("gnuplot script") {
    auto cfg = small_theta_sweep();
    std::ostringstream out;
    write_gnuplot_script(out, cfg, "sweep.csv");
    const auto s = out.str();
    CHECK(s.find("'sweep.csv'") != std::string::npos);
    CHECK(s.find("bp_em") != std::string::npos);
    CHECK(s.find("naive") != std::string::npos);
    CHECK(s.find("xlabel 'theta2'") != std::string::npos);
  }
}
