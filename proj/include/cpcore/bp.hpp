#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <variant>
#include <vector>

#include "cpcore/graph.hpp"
#include "cpcore/random.hpp"
#include "cpcore/sbm_gen.hpp"

namespace cpcore {

/// Block model parameters: prior of the core group and the scaled mixing
/// matrix c_rs = N p_rs. N is the graph's vertex count unless `ambient_n` is
/// positive, which lets a small graph stand in for a sparse model on many
/// more vertices.
struct Params {
  double gamma1 = 0.5;
  MixingMatrix c;
  double ambient_n = 0.0;

  double gamma(int r) const noexcept { return r == 0 ? gamma1 : 1.0 - gamma1; }
  double scale(const Graph& g) const noexcept {
    return ambient_n > 0.0 ? ambient_n : static_cast<double>(g.num_vertices());
  }
  /// Exchanges the group labels.
  Params swapped() const noexcept { return {1.0 - gamma1, c.swapped(), ambient_n}; }
  /// Throws UserError unless 0 < gamma1 < 1 and all c_rs >= 0.
  void validate() const;
};

using Pair = std::array<double, 2>;
using EdgeTable = std::array<Pair, 2>;

/// One message per half-edge h: eta[h] is the belief of the half-edge's
/// owner about its own group with the head vertex removed.
struct Messages {
  std::vector<Pair> eta;
};

struct Marginals {
  std::vector<Pair> q;

  std::size_t size() const noexcept { return q.size(); }
  Marginals swapped() const;
};

/// Joint posterior of each edge's endpoints; table[e][r][s] has r for
/// edges()[e].u and s for edges()[e].v.
struct EdgeMarginals {
  std::vector<EdgeTable> table;
};

struct BpState {
  Messages messages;
  Marginals marginals;
};

struct BpOptions {
  double tol = 1e-8;
  std::size_t max_iter = 200;
  /// Weight of the previous message in each update, in [0, 1).
  double damping = 0.0;
  bool record_deltas = false;
  /// Seeds the per-sweep visiting order.
  std::uint64_t schedule_seed = 0;
};

struct BpResult {
  BpState state;
  bool converged = false;
  std::size_t iterations = 0;
  /// Largest message change in the last sweep.
  double final_delta = 0.0;
  std::vector<double> deltas;
};

/// Either a seed for random initial messages or an explicit warm start.
using BpInit = std::variant<std::uint64_t, BpState>;

/// log h_r = -sum_s c_rs (sum_k q_s^k) / N, the leading-order form of the
/// product of non-edge factors over all vertices.
Pair log_external_field(const Params& params, const Marginals& marginals, double scale) noexcept;
Pair external_field(const Params& params, const Marginals& marginals, double scale) noexcept;

/// Random normalized messages; marginals start at the prior.
BpState random_state(const Graph& g, const Params& params, std::uint64_t seed);
/// All messages and marginals (1/2, 1/2).
BpState uniform_state(const Graph& g);

/// One asynchronous sweep over all vertices in a fresh random order. Each
/// visited vertex refreshes all its outgoing messages and its marginal from
/// the current incoming messages. Returns the largest change of any message.
double bp_sweep(const Graph& g, const Params& params, BpState& state, Rng& rng, double damping = 0.0);

/// Sweeps until the largest message change drops below `tol` or `max_iter`
/// sweeps ran. Non-convergence is reported, not thrown.
BpResult run_bp(const Graph& g, const Params& params, BpInit init, const BpOptions& options = {});

/// q_rs^{ij} proportional to eta_r^{i->j} eta_s^{j->i} c_rs. Throws
/// std::domain_error if some edge table is identically zero.
EdgeMarginals two_point_marginals(const Graph& g, const Params& params, const Messages& messages);

/// q_1^i / q_2^i, +infinity when q_2^i = 0.
double odds_ratio(const Marginals& marginals, vertex_t i);

/// Per-sweep convergence log: `iteration,delta`.
void write_delta_csv(std::ostream& out, const std::vector<double>& deltas);

}  // namespace cpcore
