#include <doctest.h>

#include <cmath>
#include <sstream>

#include "cpcore/bp.hpp"
#include "cpcore/em.hpp"
#include "cpcore/error.hpp"
#include "cpcore/oracle.hpp"
#include "cpcore/sbm_gen.hpp"
#include "helpers.hpp"

using namespace cpcore;
using doctest::Approx;

namespace {

BpResult converge(const Graph& g, const Params& p, std::uint64_t seed, double tol = 1e-13) {
  BpOptions opts;
  opts.tol = tol;
  opts.max_iter = 2000;
  opts.schedule_seed = seed + 1;
  return run_bp(g, p, seed, opts);
}

double max_deviation(const Marginals& a, const Marginals& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a.q[i][0] - b.q[i][0]));
  return worst;
}

}  // namespace

TEST_SUITE("bp") {
  TEST_CASE("external field from group sums") {
    const Graph g = testing::path(10);
    const Params p{0.5, {6, 3, 1.5}, 0};
    const BpState uni = uniform_state(g);
    const Pair h = external_field(p, uni.marginals, 10);
    CHECK(h[0] == Approx(std::exp(-4.5)).epsilon(1e-12));
    CHECK(h[1] == Approx(std::exp(-2.25)).epsilon(1e-12));
    const Pair s = external_field(Params{0.3, {2, 2, 2}, 0}, uni.marginals, 10);
    CHECK(s[0] == Approx(std::exp(-2.0)));
    CHECK(s[1] == Approx(std::exp(-2.0)));
  }

  TEST_CASE("exp-form field tracks the product form on a 3-path") {
    const Graph g = testing::path(3);
    Marginals m{{{0.2, 0.8}, {0.7, 0.3}, {0.55, 0.45}}};
    const double n = 3;
    for (const MixingMatrix c : {MixingMatrix{0.3, 0.15, 0.05}, MixingMatrix{0.1, 0.2, 0.3}, MixingMatrix{0.3, 0.3, 0.3}}) {
      const Params p{0.5, c, 0};
      const Pair h = external_field(p, m, n);
      for (int r = 0; r < 2; ++r) {
        // |log(1 - x) + x| <= x^2 / (2 (1 - x)) per factor.
        double prod = 1.0, bound = 0.0;
        for (const auto& q : m.q) {
          const double x = (q[0] * c(r, 0) + q[1] * c(r, 1)) / n;
          prod *= 1.0 - x;
          bound += x * x / (2 * (1 - x));
        }
        CHECK(std::abs(std::log(h[r]) - std::log(prod)) <= bound);
        CHECK(std::abs(h[r] - prod) / prod < 0.02);
      }
    }
  }

  TEST_CASE("symmetric parameters: uniform messages are a fixed point") {
    Rng rng(1);
    const Graph g = testing::random_graph(40, 0.1, rng);
    const Params p{0.5, {3, 3, 3}, 0};
    BpState st = uniform_state(g);
    Rng sched(2);
    CHECK(bp_sweep(g, p, st, sched) == 0.0);
  }

  TEST_CASE("symmetric parameters converge to the prior") {
    Rng rng(2);
    const Graph g = testing::random_graph(60, 0.08, rng);
    const Params p{0.3, {2, 2, 2}, 0};
    BpOptions opts;
    opts.max_iter = 1;
    opts.tol = 1e-12;
    const BpResult res = run_bp(g, p, std::uint64_t{7}, opts);
    CHECK(res.converged == false);
    // Each vertex's update only sees factors with equal rows, so one sweep suffices.
    for (const auto& q : res.state.marginals.q) CHECK(q[0] == Approx(0.3).epsilon(1e-14));
    const BpResult two = run_bp(g, p, res.state, opts);
    CHECK(two.converged);
  }

  TEST_CASE("uniform random graph at delta = 0 converges in one sweep") {
    const auto net = sample_sbm(2000, 0.5, weak_structure_mixing(3, 1, 1, 0), 3);
    const Params p{0.5, net.c, 0};
    BpState st = uniform_state(net.graph);
    Rng sched(5);
    CHECK(bp_sweep(net.graph, p, st, sched) == 0.0);
    for (const auto& q : st.marginals.q) CHECK(q[0] == 0.5);
  }

  TEST_CASE("single edge matches enumeration") {
    const Graph g = Graph::from_edges(2, {{0, 1}});
    const Params p{0.5, {6, 3, 1.5}, 1e12};
    const auto bp = converge(g, p, 3);
    const auto exact = exact_posterior(g, p);
    CHECK(max_deviation(bp.state.marginals, exact.one_point) <= 1e-10);
    // Hand value: q_core proportional to (6 + 3) against (3 + 1.5).
    CHECK(bp.state.marginals.q[0][0] == Approx(2.0 / 3.0).epsilon(1e-10));
  }

  TEST_CASE("random trees match enumeration to 1e-8") {
    Rng rng(2024);
    const std::array<Params, 3> sets{Params{0.5, {6, 3, 1.5}, 1e12}, Params{0.3, {3, 1, 0.5}, 1e12},
                                     Params{0.7, mixing_from_theta({3, -0.6, 2}), 1e12}};
    for (int t = 0; t < 30; ++t) {
      const std::size_t n = 2 + static_cast<std::size_t>(uniform01(rng) * 11);
      const Graph g = testing::random_tree(n, rng);
      const Params& p = sets[t % 3];
      const auto bp = converge(g, p, 100 + t);
      REQUIRE(bp.converged);
      const auto exact = exact_posterior(g, p);
      CHECK(max_deviation(bp.state.marginals, exact.one_point) <= 1e-8);

      // Edge tables against exact pair marginals, and marginalization.
      const auto edges = two_point_marginals(g, p, bp.state.messages);
      for (std::size_t e = 0; e < g.num_edges(); ++e) {
        const auto [u, v] = g.edges()[e];
        const auto& t2 = edges.table[e];
        const auto& x = exact.pair(u, v);
        for (int r = 0; r < 2; ++r)
          for (int s = 0; s < 2; ++s) CHECK(std::abs(t2[r][s] - x[r][s]) <= 1e-8);
        CHECK(std::abs(t2[0][0] + t2[0][1] - bp.state.marginals.q[u][0]) <= 1e-8);
        CHECK(std::abs(t2[0][0] + t2[1][0] - bp.state.marginals.q[v][0]) <= 1e-8);
      }
    }
  }

  TEST_CASE("normalization after every sweep") {
    const auto net = sample_sbm(3000, 0.4, {8, 2, 1}, 4);
    const Params p{0.4, net.c, 0};
    BpState st = random_state(net.graph, p, 9);
    Rng sched(10);
    for (int k = 0; k < 5; ++k) {
      bp_sweep(net.graph, p, st, sched, k % 2 ? 0.3 : 0.0);
      for (const auto& m : st.messages.eta) CHECK(std::abs(m[0] + m[1] - 1.0) <= 1e-12);
      for (const auto& q : st.marginals.q) CHECK(std::abs(q[0] + q[1] - 1.0) <= 1e-12);
    }
  }

  TEST_CASE("plane identity on loopy graphs") {
    for (std::uint64_t seed : {1, 2}) {
      const double theta = 3, r = 2, gamma1 = 0.45;
      const MixingMatrix c{theta * r, theta, theta / r};
      const auto net = sample_sbm(3000, gamma1, c, seed);
      const Params p{gamma1, c, 0};
      const auto bp = converge(net.graph, p, seed, 1e-12);
      REQUIRE(bp.converged);
      double s1 = 0;
      for (const auto& q : bp.state.marginals.q) s1 += q[0];
      const double s2 = static_cast<double>(net.graph.num_vertices()) - s1;
      // Mean degrees as BP sees them, from the current group masses.
      const double n = static_cast<double>(net.graph.num_vertices());
      const double d1 = (c.c11 * s1 + c.c12 * s2) / n, d2 = (c.c12 * s1 + c.c22 * s2) / n;
      for (vertex_t i = 0; i < net.graph.num_vertices(); ++i) {
        const double want = gamma1 / (1 - gamma1) * std::exp(d2 - d1) * std::pow(r, net.graph.degree(i));
        CHECK(std::abs(odds_ratio(bp.state.marginals, i) / want - 1.0) <= 1e-8);
      }
    }
  }

  TEST_CASE("plane factor equals r for any message") {
    const double theta = 2.5, r = 3;
    const MixingMatrix c{theta * r, theta, theta / r};
    for (double a = 0.0; a <= 1.0; a += 0.05) {
      const double f = (a * c.c11 + (1 - a) * c.c12) / (a * c.c12 + (1 - a) * c.c22);
      CHECK(f == Approx(r).epsilon(1e-14));
    }
  }

  TEST_CASE("strong structure is recovered confidently") {
    // Group mean degrees 25 and 6.25.
    const auto net = sample_sbm(10000, 0.5, {40, 10, 2.5}, 21);
    const auto bp = converge(net.graph, Params{0.5, net.c, 0}, 5, 1e-8);
    CHECK(bp.converged);
    std::size_t confident = 0, correct = 0;
    for (std::size_t i = 0; i < net.truth.size(); ++i) {
      const auto& q = bp.state.marginals.q[i];
      confident += std::max(q[0], q[1]) >= 0.9;
      correct += (q[0] >= q[1]) == (net.truth[i] == Group::core);
    }
    CHECK(static_cast<double>(confident) > 0.95 * net.truth.size());
    CHECK(static_cast<double>(correct) > 0.95 * net.truth.size());
  }

  TEST_CASE("damping keeps the tree fixed point") {
    Rng rng(8);
    const Graph g = testing::random_tree(10, rng);
    const Params p{0.4, {5, 2, 1}, 1e12};
    BpOptions opts;
    opts.tol = 1e-13;
    opts.max_iter = 5000;
    opts.damping = 0.5;
    const auto damped = run_bp(g, p, std::uint64_t{4}, opts);
    REQUIRE(damped.converged);
    CHECK(max_deviation(damped.state.marginals, exact_posterior(g, p).one_point) <= 1e-8);
  }

  TEST_CASE("deterministic given seeds") {
    const auto net = sample_sbm(2000, 0.5, {6, 3, 1.5}, 6);
    const Params p{0.5, net.c, 0};
    BpOptions opts;
    opts.schedule_seed = 3;
    opts.record_deltas = true;
    const auto a = run_bp(net.graph, p, std::uint64_t{1}, opts);
    const auto b = run_bp(net.graph, p, std::uint64_t{1}, opts);
    CHECK(a.deltas == b.deltas);
    CHECK(a.state.marginals.q == b.state.marginals.q);
    CHECK(a.iterations == a.deltas.size());
    std::ostringstream csv;
    write_delta_csv(csv, a.deltas);
    CHECK(csv.str().rfind("iteration,delta\n1,", 0) == 0);
  }

  TEST_CASE("two-point tables") {
    const Graph g = Graph::from_edges(2, {{0, 1}});
    const Params p{0.5, {6, 3, 1.5}, 0};
    Messages uni{{{0.5, 0.5}, {0.5, 0.5}}};
    const auto t = two_point_marginals(g, p, uni).table[0];
    CHECK(t[0][0] == Approx(6 / 13.5));
    CHECK(t[0][1] == Approx(3 / 13.5));
    CHECK(t[1][0] == Approx(3 / 13.5));
    CHECK(t[1][1] == Approx(1.5 / 13.5));

    Messages sure{{{1, 0}, {1, 0}}};
    const auto s = two_point_marginals(g, p, sure).table[0];
    CHECK(s[0][0] == 1.0);
    CHECK(s[0][1] + s[1][0] + s[1][1] == 0.0);

    Messages clash{{{1, 0}, {0, 1}}};
    CHECK_THROWS_AS(two_point_marginals(g, Params{0.5, {1, 0, 1}, 0}, clash), std::domain_error);
  }

  TEST_CASE("odds ratio") {
    Marginals m{{{0.5, 0.5}, {0.75, 0.25}, {1.0, 0.0}}};
    CHECK(odds_ratio(m, 0) == 1.0);
    CHECK(odds_ratio(m, 1) == Approx(3.0));
    CHECK(std::isinf(odds_ratio(m, 2)));
  }

  TEST_CASE("argument checks") {
    const Graph g = testing::path(3);
    BpOptions bad;
    bad.tol = 0;
    CHECK_THROWS_AS(run_bp(g, Params{0.5, {1, 1, 1}, 0}, std::uint64_t{1}, bad), UserError);
    CHECK_THROWS_AS(run_bp(g, Params{1.0, {1, 1, 1}, 0}, std::uint64_t{1}), UserError);
    CHECK_THROWS_AS(run_bp(g, Params{0.5, {1, 1, 1}, 0}, uniform_state(testing::path(4))), UserError);
  }
}
