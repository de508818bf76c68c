#pragma once

#include <cstddef>
#include <cstdint>

#include "cpcore/bp.hpp"
#include "cpcore/graph.hpp"
#include "cpcore/sbm_gen.hpp"

namespace cpcore {

/// The one-dimensional block-model family c = (theta r, theta, theta / r),
/// on which the posterior depends on a vertex only through its degree.
struct DegreeModelParams {
  double gamma1 = 0.5;
  double r = 1.0;
  double theta = 0.0;

  MixingMatrix mixing() const noexcept { return {theta * r, theta, theta / r}; }
};

struct DegreeFit {
  DegreeModelParams params;
  Marginals marginals;
  Assignment assignment;
  std::size_t iterations = 0;
  bool converged = false;
};

/// q_1 for a vertex of degree k: gamma1 e^{-d1} r^k / (gamma2 e^{-d2} + gamma1 e^{-d1} r^k),
/// evaluated through the log-odds.
double degree_model_core_probability(double gamma1, double r, double d1, double d2, double k) noexcept;

/// Iterates kappa_r = sum_i k_i q_r^i / sum_i q_r^i, gamma_r = (1/n) sum_i q_r^i,
/// r = kappa_1 / kappa_2 and the closed-form marginals until both gamma1 and r
/// move less than `tol`. Group 1 is kept as the high-degree group (r >= 1).
/// Throws DegenerateGroupError when a group empties or kappa_2 = 0. The seed
/// is accepted for interface uniformity; the iteration is deterministic and
/// runs over the degree histogram, so each step costs O(max degree).
DegreeFit fit_degree_model(const Graph& g, double tol = 1e-10, std::size_t max_iter = 100000, std::uint64_t seed = 0);

/// The ceil(core_fraction n) highest-degree vertices form the core; equal
/// degrees are ordered by ascending vertex index.
Assignment naive_split(const Graph& g, double core_fraction = 0.5);

}  // namespace cpcore
