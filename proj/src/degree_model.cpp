#include "cpcore/degree_model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "cpcore/em.hpp"
#include "cpcore/error.hpp"

namespace cpcore {

double degree_model_core_probability(double gamma1, double r, double d1, double d2, double k) noexcept {
  const double log_odds = std::log(gamma1) - std::log1p(-gamma1) + d2 - d1 + k * std::log(r);
  return 1.0 / (1.0 + std::exp(-log_odds));
}

DegreeFit fit_degree_model(const Graph& g, double tol, std::size_t max_iter, std::uint64_t /*seed*/) {
  const std::size_t n = g.num_vertices();
  if (n < 2) throw UserError("degree model needs at least two vertices");
  if (!(tol > 0.0)) throw UserError("tolerance must be positive");
  const double c = g.mean_degree();
  if (!(c > 0.0)) throw UserError("degree model needs at least one edge");

  std::vector<double> degree(n);
  for (vertex_t i = 0; i < n; ++i) degree[i] = static_cast<double>(g.degree_unchecked(i));

  // Start: equal groups, r from the means of the upper and lower degree halves.
  std::vector<double> sorted = degree;
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  const std::size_t half = n / 2;
  const double top = std::accumulate(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(half), 0.0) / half;
  const double bottom =
      std::accumulate(sorted.begin() + static_cast<std::ptrdiff_t>(half), sorted.end(), 0.0) / static_cast<double>(n - half);
  DegreeModelParams p;
  p.gamma1 = 0.5;
  p.r = bottom > 0.0 ? std::max(top / bottom, 1.01) : std::max(top, 1.01);
  // theta from kappa_1 kappa_2 / c with kappa_r ~ the half means.
  p.theta = std::max(top * std::max(bottom, 1e-3) / c, 1e-9);

  // The iteration only sees the degree histogram.
  std::vector<double> count(static_cast<std::size_t>(sorted.front()) + 1, 0.0);
  for (double k : degree) count[static_cast<std::size_t>(k)] += 1.0;

  DegreeFit fit;
  for (std::size_t it = 0; it < max_iter; ++it) {
    const auto dbar = group_mean_degrees(p.gamma1, p.mixing());
    double mass1 = 0.0, deg1 = 0.0;
    for (std::size_t k = 0; k < count.size(); ++k) {
      if (count[k] == 0.0) continue;
      const double q1 = degree_model_core_probability(p.gamma1, p.r, dbar.core, dbar.periphery, static_cast<double>(k));
      mass1 += count[k] * q1;
      deg1 += count[k] * static_cast<double>(k) * q1;
    }
    const double mass2 = static_cast<double>(n) - mass1;
    const double deg2 = c * static_cast<double>(n) - deg1;
    if (mass1 < 1e-9 * n || mass2 < 1e-9 * n)
      throw DegenerateGroupError(fmt::format("degree model: a group emptied (mass {:.3g} / {:.3g})", mass1, mass2));
    const double kappa1 = deg1 / mass1;
    const double kappa2 = deg2 / mass2;
    if (!(kappa2 > 0.0)) throw DegenerateGroupError("degree model: periphery expected degree is zero");

    DegreeModelParams next;
    next.gamma1 = mass1 / static_cast<double>(n);
    next.r = kappa1 / kappa2;
    next.theta = kappa1 * kappa2 / c;
    if (next.r < 1.0) {
      // Keep the high-degree group first.
      next.gamma1 = 1.0 - next.gamma1;
      next.r = 1.0 / next.r;
    }
    const bool done = std::abs(next.gamma1 - p.gamma1) < tol && std::abs(next.r - p.r) < tol;
    p = next;
    fit.iterations = it + 1;
    if (done) {
      fit.converged = true;
      break;
    }
  }

  // Marginals consistent with the final parameters.
  const auto dbar = group_mean_degrees(p.gamma1, p.mixing());
  fit.marginals.q.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double q1 = degree_model_core_probability(p.gamma1, p.r, dbar.core, dbar.periphery, degree[i]);
    fit.marginals.q[i] = {q1, 1.0 - q1};
  }
  fit.params = p;
  fit.assignment = classify(fit.marginals).assignment;
  return fit;
}

Assignment naive_split(const Graph& g, double core_fraction) {
  if (!(core_fraction > 0.0 && core_fraction < 1.0)) throw UserError("core fraction must lie in (0, 1)");
  const std::size_t n = g.num_vertices();
  std::vector<vertex_t> order(n);
  std::iota(order.begin(), order.end(), vertex_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](vertex_t a, vertex_t b) { return g.degree_unchecked(a) > g.degree_unchecked(b); });
  const auto core_size = std::min<std::size_t>(n, static_cast<std::size_t>(std::ceil(core_fraction * static_cast<double>(n) - 1e-9)));
  Assignment out(n, Group::periphery);
  for (std::size_t k = 0; k < core_size; ++k) out[order[k]] = Group::core;
  return out;
}

}  // namespace cpcore
