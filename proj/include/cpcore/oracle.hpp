#pragma once

#include <cstddef>
#include <vector>

#include "cpcore/bp.hpp"
#include "cpcore/graph.hpp"

namespace cpcore {

/// Largest graph the enumeration accepts (2^20 assignments).
inline constexpr std::size_t kOracleMaxVertices = 20;

/// Exact posterior summaries of the two-group block model, by enumerating
/// all 2^n group assignments with exact Bernoulli factors p_rs = c_rs / N.
struct ExactPosterior {
  Marginals one_point;
  /// pair(i, j)[r][s] = P(g_i = r, g_j = s | A) for every vertex pair,
  /// including i == j (diagonal tables).
  std::vector<EdgeTable> two_point;
  std::size_t n = 0;
  double log_evidence = 0.0;

  const EdgeTable& pair(std::size_t i, std::size_t j) const { return two_point[i * n + j]; }
};

/// Throws UserError if n exceeds kOracleMaxVertices or some p_rs lies outside
/// [0, 1]. The enumeration is split into a fixed number of prefix blocks that
/// are reduced in order, so results do not depend on thread count.
ExactPosterior exact_posterior(const Graph& g, const Params& params, std::size_t workers = 1);

/// log P(A | p, gamma), summed over all assignments.
double exact_log_likelihood(const Graph& g, const Params& params, std::size_t workers = 1);

/// One exact EM cycle: exact marginals, then
///   gamma_r = (1/n) sum_i q_r^i,  p_rs = sum_{i!=j} A_ij q_rs^ij / sum_{i!=j} q_rs^ij.
/// Returned c_rs use the same scale N as `params`. Throws DegenerateGroupError
/// if a group's mass vanishes.
Params exact_em_step(const Graph& g, const Params& params, std::size_t workers = 1);

}  // namespace cpcore
