#include "cpcore/em.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <stdexcept>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "cpcore/error.hpp"
#include "cpcore/parallel.hpp"
#include "cpcore/random.hpp"

namespace cpcore {

void FitConfig::validate() const {
  if (restarts < 1) throw UserError("restarts must be at least 1");
  if (!(em_tol > 0.0) || !(bp_tol > 0.0)) throw UserError("tolerances must be positive");
  if (em_max_iter < 1 || bp_max_iter < 1) throw UserError("iteration caps must be at least 1");
  if (!(init_spread >= 0.0 && init_spread < 1.0)) throw UserError("init_spread must lie in [0, 1)");
  if (!(damping >= 0.0 && damping < 1.0)) throw UserError("damping must lie in [0, 1)");
}

Classification classify(const Marginals& marginals) {
  Classification out;
  out.assignment.resize(marginals.size());
  for (std::size_t i = 0; i < marginals.size(); ++i) {
    const auto& q = marginals.q[i];
    if (q[0] == q[1]) ++out.ties;
    out.assignment[i] = q[0] >= q[1] ? Group::core : Group::periphery;
  }
  if (out.ties > 0) spdlog::debug("classify: {} exact tie(s) assigned to the core", out.ties);
  return out;
}

namespace {

constexpr double kProbFloor = 1e-12;
constexpr double kLogFloor = 1e-300;

double entropy(const Pair& p) noexcept {
  double h = 0.0;
  for (double x : p)
    if (x > 0.0) h -= x * std::log(x);
  return h;
}

double entropy(const EdgeTable& t) noexcept {
  double h = 0.0;
  for (const auto& row : t)
    for (double x : row)
      if (x > 0.0) h -= x * std::log(x);
  return h;
}

Pair group_mass(const Marginals& marginals) noexcept {
  Pair s{0.0, 0.0};
  for (const auto& q : marginals.q) {
    s[0] += q[0];
    s[1] += q[1];
  }
  return s;
}

}  // namespace

Params m_step(const Graph& g, const Marginals& marginals, const EdgeMarginals& edge_marginals, double ambient_n) {
  const double n = static_cast<double>(g.num_vertices());
  if (marginals.size() != g.num_vertices() || edge_marginals.table.size() != g.num_edges())
    throw UserError("marginals do not match the graph");
  const Pair mass = group_mass(marginals);
  for (int r = 0; r < 2; ++r)
    if (mass[r] < 1e-9 * n)
      throw DegenerateGroupError(fmt::format("group {} has vanishing mass {:.3g}", r + 1, mass[r]));

  // Ordered-pair edge sums: each undirected edge contributes q_rs and q_sr.
  double e11 = 0.0, e12 = 0.0, e22 = 0.0;
  for (const auto& t : edge_marginals.table) {
    e11 += 2.0 * t[0][0];
    e12 += t[0][1] + t[1][0];
    e22 += 2.0 * t[1][1];
  }
  auto prob = [](double edges, double denom) { return std::clamp(edges / denom, kProbFloor, 1.0 - kProbFloor); };
  const double scale = ambient_n > 0.0 ? ambient_n : n;
  Params p;
  p.gamma1 = mass[0] / n;
  p.c = {scale * prob(e11, mass[0] * mass[0]), scale * prob(e12, mass[0] * mass[1]),
         scale * prob(e22, mass[1] * mass[1])};
  p.ambient_n = ambient_n;
  return p;
}

double bethe_objective(const Graph& g, const Params& params, const Marginals& marginals,
                       const EdgeMarginals& edge_marginals) {
  const auto& c = params.c;
  const std::array<std::array<double, 2>, 2> log_c{{{std::log(std::max(c.c11, kLogFloor)), std::log(std::max(c.c12, kLogFloor))},
                                                    {std::log(std::max(c.c12, kLogFloor)), std::log(std::max(c.c22, kLogFloor))}}};
  const Pair log_gamma{std::log(std::max(params.gamma(0), kLogFloor)), std::log(std::max(params.gamma(1), kLogFloor))};

  double edge_energy = 0.0, edge_entropy = 0.0;
  for (const auto& t : edge_marginals.table) {
    for (int r = 0; r < 2; ++r)
      for (int s = 0; s < 2; ++s)
        if (t[r][s] > 0.0) edge_energy += t[r][s] * log_c[r][s];
    edge_entropy += entropy(t);
  }

  double prior = 0.0, vertex_entropy = 0.0;
  for (std::size_t i = 0; i < marginals.size(); ++i) {
    const auto& q = marginals.q[i];
    prior += q[0] * log_gamma[0] + q[1] * log_gamma[1];
    vertex_entropy += (static_cast<double>(g.degree_unchecked(static_cast<vertex_t>(i))) - 1.0) * entropy(q);
  }

  const Pair s = group_mass(marginals);
  const double field = 0.5 * (c.c11 * s[0] * s[0] + 2.0 * c.c12 * s[0] * s[1] + c.c22 * s[1] * s[1]) / params.scale(g);
  return edge_energy - field + prior + edge_entropy - vertex_entropy;
}

Params initial_params(const Graph& g, double init_spread, std::uint64_t seed, bool assortative) {
  const double mean = g.mean_degree();
  if (!(mean > 0.0)) throw UserError("cannot fit a graph without edges");
  Rng rng(seed);
  Params p;
  p.gamma1 = uniform(rng, 0.3, 0.7);
  std::array<double, 3> c;
  for (auto& x : c) x = mean * (1.0 + init_spread * uniform(rng, -1.0, 1.0));
  std::sort(c.begin(), c.end(), std::greater<>());
  p.c = assortative ? MixingMatrix{c[0], c[2], c[1]} : MixingMatrix{c[0], c[1], c[2]};
  return p;
}

namespace {

using Coords = std::array<double, 4>;

Coords to_coords(const Params& p) {
  return {std::log(p.gamma1) - std::log1p(-p.gamma1), std::log(p.c.c11), std::log(p.c.c12), std::log(p.c.c22)};
}

Params from_coords(const Coords& x, const Params& like, double scale) {
  Params p = like;
  p.gamma1 = 1.0 / (1.0 + std::exp(-x[0]));
  auto c = [&](double v) { return std::clamp(std::exp(v), scale * kProbFloor, scale * (1.0 - kProbFloor)); };
  p.c = {c(x[1]), c(x[2]), c(x[3])};
  return p;
}

bool small_change(const Params& a, const Params& b, double tol) {
  const double change = std::max({std::abs(a.c.c11 - b.c.c11), std::abs(a.c.c12 - b.c.c12), std::abs(a.c.c22 - b.c.c22)});
  const double mean_c = (b.c.c11 + b.c.c12 + b.c.c22) / 3.0;
  return change < tol * mean_c && std::abs(a.gamma1 - b.gamma1) < tol;
}

}  // namespace

EmTrace run_em(const Graph& g, const Params& init, const FitConfig& config, std::uint64_t seed) {
  EmTrace trace;
  trace.params = init;
  const double scale = init.scale(g);
  std::optional<BpState> warm;
  std::size_t evals = 0;

  // One EM map evaluation: BP at `at`, then the M-step. Leaves the result in
  // trace.params and reports whether it moved less than em_tol.
  auto map = [&](const Params& at) {
    BpOptions opts;
    opts.tol = config.bp_tol;
    opts.max_iter = config.bp_max_iter;
    opts.damping = config.damping;
    opts.record_deltas = config.record_bp_deltas;
    opts.schedule_seed = child_seed(seed, {2, evals});
    BpInit bp_init = warm ? BpInit{std::move(*warm)} : BpInit{child_seed(seed, {1})};
    BpResult bp = run_bp(g, at, std::move(bp_init), opts);
    if (!bp.converged) ++trace.bp_nonconverged;

    EdgeMarginals edges;
    try {
      edges = two_point_marginals(g, at, bp.state.messages);
    } catch (const std::domain_error& e) {
      throw DegenerateGroupError(e.what());
    }
    const Params next = m_step(g, bp.state.marginals, edges, at.ambient_n);
    trace.objective = bethe_objective(g, next, bp.state.marginals, edges);
    trace.objectives.push_back(trace.objective);
    ++evals;
    spdlog::debug("em {}: bp sweeps {} gamma1 {:.6f} c ({:.5f}, {:.5f}, {:.5f}) objective {:.6f}", evals, bp.iterations,
                  next.gamma1, next.c.c11, next.c.c12, next.c.c22, trace.objective);

    trace.params = next;
    trace.state = bp.state;
    trace.iterations = evals;
    trace.bp_deltas = std::move(bp.deltas);
    warm = std::move(bp.state);
    return small_change(at, next, config.em_tol);
  };
  auto finish = [&] {
    trace.converged = true;
    return trace;
  };

  Params x0 = init;
  double step_max = 1.0;
  while (evals < config.em_max_iter) {
    if (map(x0)) return finish();
    const Params x1 = trace.params;
    if (!config.accelerate) {
      x0 = x1;
      continue;
    }
    if (evals >= config.em_max_iter) break;
    if (map(x1)) return finish();
    const Params x2 = trace.params;
    const double obj2 = trace.objective;

    const Coords u0 = to_coords(x0), u1 = to_coords(x1), u2 = to_coords(x2);
    Coords r, v;
    double rr = 0.0, vv = 0.0;
    for (int k = 0; k < 4; ++k) {
      r[k] = u1[k] - u0[k];
      v[k] = u2[k] - u1[k] - r[k];
      rr += r[k] * r[k];
      vv += v[k] * v[k];
    }
    const double alpha = vv > 0.0 ? std::max(-std::sqrt(rr / vv), -step_max) : -1.0;
    if (alpha > -1.0 || evals >= config.em_max_iter) {
      x0 = x2;
      continue;
    }
    if (alpha == -step_max) step_max *= 4.0;
    Coords ux;
    for (int k = 0; k < 4; ++k) ux[k] = u0[k] - 2.0 * alpha * r[k] + alpha * alpha * v[k];
    const Params xs = from_coords(ux, x2, scale);
    const BpState before = trace.state;
    bool stable = false;
    try {
      stable = map(xs);
    } catch (const DegenerateGroupError&) {
      stable = false;
      trace.objective = -std::numeric_limits<double>::infinity();
    }
    if (trace.objective < obj2) {
      // Extrapolation overshot; continue from the plain iterate instead.
      ++trace.rejected_steps;
      step_max = 1.0;
      trace.params = x2;
      trace.objective = obj2;
      trace.state = before;
      warm = before;
      x0 = x2;
      continue;
    }
    if (stable) return finish();
    x0 = trace.params;
  }
  return trace;
}

FitResult fit(const Graph& g, const FitConfig& config) {
  config.validate();
  if (g.num_vertices() == 0) throw UserError("cannot fit an empty graph");
  if (g.num_edges() == 0) throw UserError("cannot fit a graph without edges");

  std::vector<std::optional<EmTrace>> traces(config.restarts);
  std::vector<RestartDiagnostics> diags(config.restarts);
  parallel_for(config.restarts, config.workers, [&](std::size_t k) {
    auto& d = diags[k];
    d.seed = child_seed(config.seed, {k});
    for (std::size_t attempt = 0; attempt <= config.max_reseeds; ++attempt) {
      const std::uint64_t s = child_seed(d.seed, {attempt});
      try {
        traces[k] = run_em(g, initial_params(g, config.init_spread, s, config.init_order == InitOrder::mixed && k % 2 == 1), config, s);
        d.em_iterations = traces[k]->iterations;
        d.converged = traces[k]->converged;
        d.objective = traces[k]->objective;
        return;
      } catch (const DegenerateGroupError& e) {
        spdlog::debug("restart {} attempt {} collapsed: {}", k, attempt, e.what());
        ++d.reseeds;
      }
    }
    d.failed = true;
  });

  FitResult result;
  std::optional<std::size_t> best;
  for (std::size_t k = 0; k < config.restarts; ++k) {
    result.degenerate_restarts += diags[k].reseeds;
    if (!traces[k]) continue;
    ++result.restarts_used;
    if (!best || traces[k]->objective > traces[*best]->objective) best = k;
  }
  result.restarts = diags;
  if (!best) {
    throw FitFailure(fmt::format("all {} restarts collapsed to a single group ({} re-seeds)", config.restarts,
                                 result.degenerate_restarts));
  }

  EmTrace& win = *traces[*best];
  result.params = win.params;
  result.marginals = std::move(win.state.marginals);
  result.objective = win.objective;
  result.em_iterations = win.iterations;
  result.converged = win.converged;
  result.bp_deltas = std::move(win.bp_deltas);
  if (result.params.c.c11 < result.params.c.c22) {
    result.params = result.params.swapped();
    result.marginals = result.marginals.swapped();
  }
  auto cls = classify(result.marginals);
  result.assignment = std::move(cls.assignment);
  result.ties = cls.ties;
  result.structure_class = result.params.c.classify(1e-3);
  return result;
}

}  // namespace cpcore
