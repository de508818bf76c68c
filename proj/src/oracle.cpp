#include "cpcore/oracle.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

#include <fmt/format.h>

#include "cpcore/error.hpp"
#include "cpcore/parallel.hpp"

namespace cpcore {

namespace {

constexpr std::size_t kBlocks = 16;

struct BlockSums {
  double max_log = -std::numeric_limits<double>::infinity();
  double z = 0.0;
  std::vector<Pair> one;
  std::vector<EdgeTable> two;  // upper triangle i < j, row-major n x n
};

}  // namespace

ExactPosterior exact_posterior(const Graph& g, const Params& params, std::size_t workers) {
  const std::size_t n = g.num_vertices();
  if (n > kOracleMaxVertices)
    throw UserError(fmt::format("exact enumeration supports at most {} vertices, got {}", kOracleMaxVertices, n));
  if (!(params.gamma1 >= 0.0 && params.gamma1 <= 1.0)) throw UserError("gamma1 must lie in [0, 1]");
  const double scale = params.scale(g);
  std::array<std::array<double, 2>, 2> p{};
  for (int r = 0; r < 2; ++r)
    for (int s = 0; s < 2; ++s) {
      p[r][s] = params.c(r, s) / scale;
      if (!(p[r][s] >= 0.0 && p[r][s] <= 1.0))
        throw UserError(fmt::format("p_{}{} = {} is not a probability", r + 1, s + 1, p[r][s]));
    }

  // Pair log-factors for the edge / non-edge outcome of every pair.
  std::array<std::array<double, 2>, 2> log_edge{}, log_none{};
  for (int r = 0; r < 2; ++r)
    for (int s = 0; s < 2; ++s) {
      log_edge[r][s] = std::log(p[r][s]);
      log_none[r][s] = std::log1p(-p[r][s]);
    }
  const Pair log_gamma{std::log(params.gamma(0)), std::log(params.gamma(1))};
  std::vector<std::uint8_t> adj(n * n, 0);
  for (const auto& e : g.edges()) adj[e.u * n + e.v] = adj[e.v * n + e.u] = 1;

  const std::uint64_t states = std::uint64_t{1} << n;
  const std::size_t blocks = static_cast<std::size_t>(std::min<std::uint64_t>(kBlocks, states));
  const std::uint64_t per_block = states / blocks;
  std::vector<BlockSums> sums(blocks);

  parallel_for(blocks, workers, [&](std::size_t b) {
    BlockSums& acc = sums[b];
    acc.one.assign(n, Pair{0.0, 0.0});
    acc.two.assign(n * n, EdgeTable{});
    const std::uint64_t first = b * per_block;
    std::vector<double> log_w(per_block);
    std::vector<int> group(n);
    for (std::uint64_t t = 0; t < per_block; ++t) {
      const std::uint64_t s = first + t;
      double lw = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        group[i] = static_cast<int>((s >> i) & 1u);
        lw += log_gamma[group[i]];
      }
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
          lw += adj[i * n + j] ? log_edge[group[i]][group[j]] : log_none[group[i]][group[j]];
      log_w[t] = lw;
      acc.max_log = std::max(acc.max_log, lw);
    }
    if (acc.max_log == -std::numeric_limits<double>::infinity()) return;
    for (std::uint64_t t = 0; t < per_block; ++t) {
      const double w = std::exp(log_w[t] - acc.max_log);
      if (w == 0.0) continue;
      const std::uint64_t s = first + t;
      acc.z += w;
      for (std::size_t i = 0; i < n; ++i) {
        const int gi = static_cast<int>((s >> i) & 1u);
        acc.one[i][gi] += w;
        for (std::size_t j = i + 1; j < n; ++j) acc.two[i * n + j][gi][(s >> j) & 1u] += w;
      }
    }
  });

  double max_log = -std::numeric_limits<double>::infinity();
  for (const auto& acc : sums) max_log = std::max(max_log, acc.max_log);
  if (max_log == -std::numeric_limits<double>::infinity())
    throw UserError("every group assignment has zero probability under these parameters");

  ExactPosterior out;
  out.n = n;
  out.one_point.q.assign(n, Pair{0.0, 0.0});
  out.two_point.assign(n * n, EdgeTable{});
  double z = 0.0;
  for (const auto& acc : sums) {
    if (acc.z == 0.0) continue;
    const double f = std::exp(acc.max_log - max_log);
    z += f * acc.z;
    for (std::size_t i = 0; i < n; ++i) {
      out.one_point.q[i][0] += f * acc.one[i][0];
      out.one_point.q[i][1] += f * acc.one[i][1];
      for (std::size_t j = i + 1; j < n; ++j)
        for (int r = 0; r < 2; ++r)
          for (int s = 0; s < 2; ++s) out.two_point[i * n + j][r][s] += f * acc.two[i * n + j][r][s];
    }
  }
  out.log_evidence = max_log + std::log(z);
  for (std::size_t i = 0; i < n; ++i) {
    out.one_point.q[i][0] /= z;
    out.one_point.q[i][1] /= z;
    EdgeTable& diag = out.two_point[i * n + i];
    diag[0][0] = out.one_point.q[i][0];
    diag[1][1] = out.one_point.q[i][1];
    for (std::size_t j = i + 1; j < n; ++j) {
      EdgeTable& t = out.two_point[i * n + j];
      for (auto& row : t)
        for (auto& x : row) x /= z;
      EdgeTable& mirror = out.two_point[j * n + i];
      for (int r = 0; r < 2; ++r)
        for (int s = 0; s < 2; ++s) mirror[s][r] = t[r][s];
    }
  }
  return out;
}

double exact_log_likelihood(const Graph& g, const Params& params, std::size_t workers) {
  return exact_posterior(g, params, workers).log_evidence;
}

Params exact_em_step(const Graph& g, const Params& params, std::size_t workers) {
  const ExactPosterior post = exact_posterior(g, params, workers);
  const std::size_t n = post.n;
  Pair mass{0.0, 0.0};
  for (const auto& q : post.one_point.q) {
    mass[0] += q[0];
    mass[1] += q[1];
  }
  for (int r = 0; r < 2; ++r)
    if (mass[r] < 1e-9 * static_cast<double>(n))
      throw DegenerateGroupError(fmt::format("group {} has vanishing mass {:.3g}", r + 1, mass[r]));

  EdgeTable edge_sum{}, pair_sum{};
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      const EdgeTable& t = post.pair(i, j);
      const bool linked = g.has_edge(static_cast<vertex_t>(i), static_cast<vertex_t>(j));
      for (int r = 0; r < 2; ++r)
        for (int s = 0; s < 2; ++s) {
          pair_sum[r][s] += t[r][s];
          if (linked) edge_sum[r][s] += t[r][s];
        }
    }
  for (int r = 0; r < 2; ++r)
    for (int s = 0; s < 2; ++s)
      if (!(pair_sum[r][s] > 0.0)) throw DegenerateGroupError("no vertex-pair mass in some group pair");

  const double scale = params.scale(g);
  Params next;
  next.ambient_n = params.ambient_n;
  next.gamma1 = mass[0] / static_cast<double>(n);
  next.c = {scale * edge_sum[0][0] / pair_sum[0][0], scale * (edge_sum[0][1] + edge_sum[1][0]) / (pair_sum[0][1] + pair_sum[1][0]),
            scale * edge_sum[1][1] / pair_sum[1][1]};
  return next;
}

}  // namespace cpcore
