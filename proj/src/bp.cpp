#include "cpcore/bp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>
#include <stdexcept>

#include <fmt/format.h>

#include "cpcore/error.hpp"

namespace cpcore {

void Params::validate() const {
  if (!(gamma1 > 0.0 && gamma1 < 1.0)) throw UserError(fmt::format("gamma1 = {} must lie in (0, 1)", gamma1));
  if (!(c.c11 >= 0.0 && c.c12 >= 0.0 && c.c22 >= 0.0))
    throw UserError("mixing matrix entries must be nonnegative");
  if (ambient_n < 0.0) throw UserError("ambient_n must be nonnegative");
}

Marginals Marginals::swapped() const {
  Marginals out{q};
  for (auto& row : out.q) std::swap(row[0], row[1]);
  return out;
}

namespace {

constexpr double kFactorFloor = 1e-300;

// (P(core), P(periphery)) from their log ratio. The smaller entry is formed
// directly so it keeps full relative precision.
inline Pair from_log_odds(double u) noexcept {
  const double e = std::exp(-std::abs(u));
  const double big = 1.0 / (1.0 + e);
  const double small = e / (1.0 + e);
  return u >= 0.0 ? Pair{big, small} : Pair{small, big};
}

}  // namespace

Pair log_external_field(const Params& params, const Marginals& marginals, double scale) noexcept {
  double s0 = 0.0, s1 = 0.0;
  for (const auto& q : marginals.q) {
    s0 += q[0];
    s1 += q[1];
  }
  const auto& c = params.c;
  return {-(c.c11 * s0 + c.c12 * s1) / scale, -(c.c12 * s0 + c.c22 * s1) / scale};
}

Pair external_field(const Params& params, const Marginals& marginals, double scale) noexcept {
  const Pair lh = log_external_field(params, marginals, scale);
  return {std::exp(lh[0]), std::exp(lh[1])};
}

BpState random_state(const Graph& g, const Params& params, std::uint64_t seed) {
  Rng rng(child_seed(seed, {11}));
  BpState state;
  state.messages.eta.resize(g.num_half_edges());
  for (auto& m : state.messages.eta) {
    const double a = uniform01(rng);
    m = {a, 1.0 - a};
  }
  state.marginals.q.assign(g.num_vertices(), Pair{params.gamma1, 1.0 - params.gamma1});
  return state;
}

BpState uniform_state(const Graph& g) {
  BpState state;
  state.messages.eta.assign(g.num_half_edges(), Pair{0.5, 0.5});
  state.marginals.q.assign(g.num_vertices(), Pair{0.5, 0.5});
  return state;
}

double bp_sweep(const Graph& g, const Params& params, BpState& state, Rng& rng, double damping) {
  const std::size_t n = g.num_vertices();
  const auto& c = params.c;
  const Pair log_field = log_external_field(params, state.marginals, params.scale(g));
  // Only the core-vs-periphery log ratio matters for two groups.
  const double base = std::log(params.gamma(0)) - std::log(params.gamma(1)) + log_field[0] - log_field[1];

  std::vector<vertex_t> order(n);
  std::iota(order.begin(), order.end(), vertex_t{0});
  shuffle(order, rng);

  const std::size_t dmax = g.max_degree();
  std::vector<double> log_ratio(dmax), prefix(dmax + 1), suffix(dmax + 1);
  auto& eta = state.messages.eta;
  auto& q = state.marginals.q;
  double delta = 0.0;

  constexpr std::size_t kAhead = 8;
  for (std::size_t t = 0; t < n; ++t) {
    // Software prefetch in three stages: offsets, then the vertex's own rows,
    // then the neighbor messages they point at.
    if (t + 3 * kAhead < n) g.prefetch_offsets(order[t + 3 * kAhead]);
    if (t + 2 * kAhead < n) {
      const vertex_t w = order[t + 2 * kAhead];
      g.prefetch_reverse(w);
      __builtin_prefetch(&q[w]);
      __builtin_prefetch(&eta[g.half_begin(w)]);
    }
    if (t + kAhead < n) {
      const vertex_t w = order[t + kAhead];
      for (half_edge_t h = g.half_begin(w); h < g.half_end(w); ++h) __builtin_prefetch(&eta[g.reverse(h)]);
    }
    const vertex_t i = order[t];
    const half_edge_t b = g.half_begin(i);
    const std::size_t d = g.degree_unchecked(i);
    for (std::size_t k = 0; k < d; ++k) {
      const Pair& in = eta[g.reverse(b + static_cast<half_edge_t>(k))];
      const double f1 = std::max(in[0] * c.c11 + in[1] * c.c12, kFactorFloor);
      const double f2 = std::max(in[0] * c.c12 + in[1] * c.c22, kFactorFloor);
      log_ratio[k] = std::log(f1 / f2);
    }
    // Cavity sums as prefix + suffix, so excluding the target neighbor never
    // subtracts.
    prefix[0] = 0.0;
    for (std::size_t k = 0; k < d; ++k) prefix[k + 1] = prefix[k] + log_ratio[k];
    suffix[d] = 0.0;
    for (std::size_t k = d; k-- > 0;) suffix[k] = suffix[k + 1] + log_ratio[k];

    for (std::size_t k = 0; k < d; ++k) {
      Pair next = from_log_odds(base + prefix[k] + suffix[k + 1]);
      Pair& old = eta[b + k];
      if (damping > 0.0) {
        next = {(1.0 - damping) * next[0] + damping * old[0], (1.0 - damping) * next[1] + damping * old[1]};
        const double s = next[0] + next[1];
        next = {next[0] / s, next[1] / s};
      }
      delta = std::max(delta, std::abs(next[0] - old[0]));
      old = next;
    }
    q[i] = from_log_odds(base + prefix[d]);
  }
  return delta;
}

BpResult run_bp(const Graph& g, const Params& params, BpInit init, const BpOptions& options) {
  params.validate();
  if (!(options.tol > 0.0)) throw UserError("BP tolerance must be positive");
  if (options.max_iter < 1) throw UserError("BP needs at least one iteration");
  if (!(options.damping >= 0.0 && options.damping < 1.0)) throw UserError("damping must lie in [0, 1)");

  BpResult result;
  if (const auto* seed = std::get_if<std::uint64_t>(&init)) {
    result.state = random_state(g, params, *seed);
  } else {
    result.state = std::move(std::get<BpState>(init));
    if (result.state.messages.eta.size() != g.num_half_edges() || result.state.marginals.q.size() != g.num_vertices())
      throw UserError("warm-start state does not match the graph");
  }

  Rng schedule(child_seed(options.schedule_seed, {13}));
  for (std::size_t it = 0; it < options.max_iter; ++it) {
    const double delta = bp_sweep(g, params, result.state, schedule, options.damping);
    result.iterations = it + 1;
    result.final_delta = delta;
    if (options.record_deltas) result.deltas.push_back(delta);
    if (delta < options.tol) {
      result.converged = true;
      break;
    }
  }
  return result;
}

EdgeMarginals two_point_marginals(const Graph& g, const Params& params, const Messages& messages) {
  EdgeMarginals out;
  out.table.resize(g.num_edges());
  const auto& c = params.c;
  for (std::size_t e = 0; e < g.num_edges(); ++e) {
    const half_edge_t h = g.edge_half(e);
    const Pair& from_u = messages.eta[h];
    const Pair& from_v = messages.eta[g.reverse(h)];
    EdgeTable t;
    double total = 0.0;
    for (int r = 0; r < 2; ++r)
      for (int s = 0; s < 2; ++s) {
        t[r][s] = from_u[r] * from_v[s] * c(r, s);
        total += t[r][s];
      }
    if (!(total > 0.0))
      throw std::domain_error(fmt::format("degenerate two-point table on edge {} {}", g.edges()[e].u, g.edges()[e].v));
    for (auto& row : t)
      for (auto& x : row) x /= total;
    out.table[e] = t;
  }
  return out;
}

double odds_ratio(const Marginals& marginals, vertex_t i) {
  const Pair& q = marginals.q.at(i);
  if (q[1] == 0.0) return std::numeric_limits<double>::infinity();
  return q[0] / q[1];
}

void write_delta_csv(std::ostream& out, const std::vector<double>& deltas) {
  out << "iteration,delta\n";
  for (std::size_t i = 0; i < deltas.size(); ++i) out << fmt::format("{},{:.17g}\n", i + 1, deltas[i]);
}

}  // namespace cpcore
