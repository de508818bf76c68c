#include <doctest.h>

#include <cmath>

#include "cpcore/error.hpp"
#include "cpcore/oracle.hpp"
#include "helpers.hpp"

using namespace cpcore;
using doctest::Approx;

namespace {

// Plain linear-domain sum over assignments, vertex pairs visited in reverse.
double brute_log_likelihood(const Graph& g, const Params& params) {
  const std::size_t n = g.num_vertices();
  const double scale = params.scale(g);
  double z = 0.0;
  for (std::uint64_t s = 0; s < (std::uint64_t{1} << n); ++s) {
    double w = 1.0;
    for (std::size_t i = n; i-- > 0;) {
      const int gi = (s >> i) & 1u;
      w *= params.gamma(gi);
      for (std::size_t j = n; j-- > i + 1;) {
        const double p = params.c(gi, (s >> j) & 1u) / scale;
        w *= g.has_edge(static_cast<vertex_t>(i), static_cast<vertex_t>(j)) ? p : 1.0 - p;
      }
    }
    z += w;
  }
  return std::log(z);
}

Graph dense_core_toy() {
  // K4 on 0..3, each of 4..7 hangs off one core vertex.
  std::vector<Edge> edges{{0, 1}, {0, 2}, {0, 3}, {1, 2}, {1, 3}, {2, 3}, {0, 4}, {1, 5}, {2, 6}, {3, 7}};
  return Graph::from_edges(8, edges);
}

}  // namespace

TEST_SUITE("oracle") {
  TEST_CASE("single vertex is the prior") {
    const auto post = exact_posterior(Graph::from_edges(1, {}), {0.3, {1, 1, 1}, 10});
    CHECK(post.one_point.q[0][0] == 0.3);
    CHECK(post.one_point.q[0][1] == Approx(0.7).epsilon(1e-15));
  }

  TEST_CASE("single edge by hand") {
    // p = (0.6, 0.3, 0.15) on two vertices.
    const auto post = exact_posterior(testing::path(2), {0.5, {1.2, 0.6, 0.3}, 0});
    CHECK(post.one_point.q[0][0] == Approx(2.0 / 3.0).epsilon(1e-14));
    CHECK(post.pair(0, 1)[0][0] == Approx(0.6 / 1.35).epsilon(1e-14));
    CHECK(post.pair(0, 1)[0][1] == Approx(0.3 / 1.35).epsilon(1e-14));
    CHECK(post.pair(0, 1)[1][1] == Approx(0.15 / 1.35).epsilon(1e-14));
    CHECK(post.log_evidence == Approx(std::log(0.25 * 1.35)).epsilon(1e-14));
  }

  TEST_CASE("symmetric parameters give the prior everywhere") {
    Rng rng(1);
    for (int t = 0; t < 5; ++t) {
      const Graph g = testing::random_graph(9, 0.4, rng);
      const auto post = exact_posterior(g, {0.35, {2, 2, 2}, 20});
      for (const auto& q : post.one_point.q) CHECK(q[0] == Approx(0.35).epsilon(1e-12));
    }
  }

  TEST_CASE("consistency and normalization") {
    Rng rng(2);
    const Graph g = testing::random_graph(10, 0.35, rng);
    const auto post = exact_posterior(g, {0.4, {5, 2, 1}, 12}, 3);
    for (std::size_t i = 0; i < 10; ++i) {
      CHECK(std::abs(post.one_point.q[i][0] + post.one_point.q[i][1] - 1) < 1e-12);
      for (std::size_t j = 0; j < 10; ++j) {
        const auto& t = post.pair(i, j);
        CHECK(std::abs(t[0][0] + t[0][1] + t[1][0] + t[1][1] - 1) < 1e-12);
        for (int r = 0; r < 2; ++r) {
          CHECK(std::abs(t[r][0] + t[r][1] - post.one_point.q[i][r]) < 1e-12);
          CHECK(std::abs(t[0][r] + t[1][r] - post.one_point.q[j][r]) < 1e-12);
        }
      }
    }
  }

  TEST_CASE("gauge: swapping labels permutes outputs") {
    Rng rng(3);
    const Graph g = testing::random_graph(9, 0.4, rng);
    const Params p{0.3, {4, 2, 0.5}, 15};
    const auto a = exact_posterior(g, p);
    const auto b = exact_posterior(g, p.swapped());
    CHECK(a.log_evidence == Approx(b.log_evidence).epsilon(1e-13));
    for (std::size_t i = 0; i < 9; ++i) {
      CHECK(std::abs(a.one_point.q[i][0] - b.one_point.q[i][1]) < 1e-13);
      for (std::size_t j = 0; j < 9; ++j)
        for (int r = 0; r < 2; ++r)
          for (int s = 0; s < 2; ++s) CHECK(std::abs(a.pair(i, j)[r][s] - b.pair(i, j)[1 - r][1 - s]) < 1e-13);
    }
  }

  TEST_CASE("results do not depend on worker count") {
    Rng rng(4);
    const Graph g = testing::random_graph(12, 0.3, rng);
    const Params p{0.45, {3, 1.5, 0.8}, 0};
    const auto a = exact_posterior(g, p, 1);
    const auto b = exact_posterior(g, p, 4);
    CHECK(a.log_evidence == b.log_evidence);
    for (std::size_t i = 0; i < 12; ++i) CHECK(a.one_point.q[i] == b.one_point.q[i]);
  }

  TEST_CASE("log likelihood against an independent summation") {
    Rng rng(5);
    for (int t = 0; t < 10; ++t) {
      const std::size_t n = 2 + static_cast<std::size_t>(uniform01(rng) * 9);
      const Graph g = testing::random_graph(n, 0.4, rng);
      const Params p{uniform(rng, 0.1, 0.9), {uniform(rng, 0.5, 4), uniform(rng, 0.5, 4), uniform(rng, 0.5, 4)}, 12};
      CHECK(exact_log_likelihood(g, p) == Approx(brute_log_likelihood(g, p)).epsilon(1e-12));
    }
    // Empty graph too.
    const Graph empty = Graph::from_edges(6, {});
    const Params p{0.4, {3, 1, 2}, 0};
    CHECK(exact_log_likelihood(empty, p) == Approx(brute_log_likelihood(empty, p)).epsilon(1e-12));
  }

  TEST_CASE("gamma1 = 1 is a single assignment") {
    const Graph g = dense_core_toy();
    const double p11 = 0.4;
    const double expected = 10 * std::log(p11) + (28 - 10) * std::log1p(-p11);
    CHECK(exact_log_likelihood(g, {1.0, {p11 * 8, 0.1, 0.1}, 0}) == Approx(expected).epsilon(1e-13));
  }

  TEST_CASE("raising p11 toward the core density raises the likelihood") {
    const Graph g = dense_core_toy();
    double prev = -1e300;
    for (double p11 = 0.1; p11 <= 1.0 + 1e-12; p11 += 0.1) {
      const double ll = exact_log_likelihood(g, {0.5, {std::min(p11, 0.999) * 8, 0.1 * 8, 0.05 * 8}, 0});
      CHECK(ll > prev);
      prev = ll;
    }
  }

  TEST_CASE("exact EM reaches a fixed point") {
    const Graph g = dense_core_toy();
    Params p{0.45, {3.0, 1.2, 0.6}, 0};
    for (int it = 0; it < 2000; ++it) p = exact_em_step(g, p);
    const Params q = exact_em_step(g, p);
    CHECK(std::abs(q.gamma1 - p.gamma1) < 1e-8);
    CHECK(std::abs(q.c.c11 - p.c.c11) < 1e-8);
    CHECK(std::abs(q.c.c12 - p.c.c12) < 1e-8);
    CHECK(std::abs(q.c.c22 - p.c.c22) < 1e-8);
    // Each step does not lower the likelihood.
    Params r{0.45, {3.0, 1.2, 0.6}, 0};
    double ll = exact_log_likelihood(g, r);
    for (int it = 0; it < 20; ++it) {
      r = exact_em_step(g, r);
      const double next = exact_log_likelihood(g, r);
      CHECK(next >= ll - 1e-12);
      ll = next;
    }
  }

  TEST_CASE("symmetric start stays symmetric") {
    const Graph g = dense_core_toy();
    const Params p = exact_em_step(g, {0.5, {2, 2, 2}, 0});
    CHECK(p.gamma1 == Approx(0.5).epsilon(1e-13));
    CHECK(p.c.c11 == Approx(p.c.c12).epsilon(1e-12));
    CHECK(p.c.c22 == Approx(p.c.c12).epsilon(1e-12));
    // The common value is the overall density.
    CHECK(p.c.c11 == Approx(8.0 * 10 / 28).epsilon(1e-12));
  }

  TEST_CASE("hard posterior reproduces counts") {
    // Triangle plus five isolated vertices, parameters that pin the triangle to the core.
    const Graph g = Graph::from_edges(8, {{0, 1}, {0, 2}, {1, 2}});
    const Params p = exact_em_step(g, {3.0 / 8, {8 * (1 - 1e-12), 8e-9, 8e-9}, 0});
    CHECK(p.gamma1 == Approx(3.0 / 8).epsilon(1e-9));
    CHECK(p.c.c11 == Approx(8.0).epsilon(1e-9));
    CHECK(p.c.c12 < 1e-8);
    CHECK(p.c.c22 < 1e-8);
  }

  TEST_CASE("errors") {
    CHECK_THROWS_AS(exact_posterior(Graph::from_edges(21, {}), {0.5, {1, 1, 1}, 0}), UserError);
    CHECK_THROWS_AS(exact_posterior(testing::path(3), {0.5, {4, 1, 1}, 0}), UserError);
    CHECK_THROWS_AS(exact_em_step(testing::path(4), {1.0, {1, 1, 1}, 0}), DegenerateGroupError);
  }
}
