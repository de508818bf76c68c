#pragma once

#include <cstddef>
#include <vector>

#include "cpcore/graph.hpp"
#include "cpcore/random.hpp"

namespace testing {

using namespace cpcore;

// Each new vertex attaches to a uniformly chosen earlier one.
inline Graph random_tree(std::size_t n, Rng& rng) {
  std::vector<Edge> edges;
  for (std::size_t v = 1; v < n; ++v) {
    const auto u = static_cast<vertex_t>(uniform01(rng) * static_cast<double>(v));
    edges.push_back({u, static_cast<vertex_t>(v)});
  }
  return Graph::from_edges(n, edges);
}

// G(n, p) by brute force; only for small n.
inline Graph random_graph(std::size_t n, double p, Rng& rng) {
  std::vector<Edge> edges;
  for (vertex_t i = 0; i < n; ++i)
    for (vertex_t j = i + 1; j < n; ++j)
      if (uniform01(rng) < p) edges.push_back({i, j});
  return Graph::from_edges(n, edges);
}

inline Graph path(std::size_t n) {
  std::vector<Edge> edges;
  for (vertex_t i = 0; i + 1 < n; ++i) edges.push_back({i, i + 1});
  return Graph::from_edges(n, edges);
}

inline Graph star(std::size_t leaves) {
  std::vector<Edge> edges;
  for (vertex_t i = 1; i <= leaves; ++i) edges.push_back({0, i});
  return Graph::from_edges(leaves + 1, edges);
}

// Two disjoint K_k joined by a single edge between vertex 0 and vertex k.
inline Graph two_cliques(std::size_t k) {
  std::vector<Edge> edges;
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t i = 0; i < k; ++i)
      for (std::size_t j = i + 1; j < k; ++j)
        edges.push_back({static_cast<vertex_t>(b * k + i), static_cast<vertex_t>(b * k + j)});
  edges.push_back({0, static_cast<vertex_t>(k)});
  return Graph::from_edges(2 * k, edges);
}

}  // namespace testing
