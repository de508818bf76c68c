#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "cpcore/bp.hpp"
#include "cpcore/graph.hpp"
#include "cpcore/sbm_gen.hpp"

namespace cpcore {

/// Ordering imposed on the random initial c_rs. `mixed` starts every odd
/// restart with c12 smallest, which reaches assortative splits on dense
/// graphs where core-periphery starts fall into the trivial fixed point.
enum class InitOrder { core_periphery, mixed };

struct FitConfig {
  std::size_t restarts = 5;
  double em_tol = 1e-6;
  std::size_t em_max_iter = 100;
  double bp_tol = 1e-8;
  std::size_t bp_max_iter = 200;
  std::uint64_t seed = 0;
  /// Relative spread of the random initial c_rs around the mean degree.
  double init_spread = 0.2;
  InitOrder init_order = InitOrder::core_periphery;
  double damping = 0.0;
  /// Re-seeds allowed per restart after a group collapses.
  std::size_t max_reseeds = 3;
  std::size_t workers = 1;
  /// Squared-extrapolation (SQUAREM) steps on top of the plain EM map.
  bool accelerate = true;
  /// Keep the BP delta history of the last E-step.
  bool record_bp_deltas = false;

  /// Throws UserError on nonpositive tolerances or zero restarts.
  void validate() const;
};

struct Classification {
  Assignment assignment;
  /// Vertices with q_1 == q_2 exactly; these go to the core.
  std::size_t ties = 0;
};

/// Arg-max group per vertex.
Classification classify(const Marginals& marginals);

/// Closed-form parameter update: gamma_r = (1/n) sum_i q_r^i and
/// p_rs = sum_ij A_ij q_rs^ij / (sum_i q_r^i sum_j q_s^j), the numerator
/// running over both orientations of every edge. Returns c_rs = N p_rs with
/// p_rs clamped into [1e-12, 1 - 1e-12], where N = `ambient_n` if positive,
/// else the vertex count. Throws DegenerateGroupError if a group's total mass
/// is below 1e-9 n.
Params m_step(const Graph& g, const Marginals& marginals, const EdgeMarginals& edge_marginals, double ambient_n = 0.0);

/// Bethe approximation of the EM lower bound, used to rank restarts:
///   sum_e sum_rs q_rs^e log c_rs - 1/2 sum_rs c_rs S_r S_s / N
///   + sum_i sum_r q_r^i log gamma_r + sum_e H(q^e) - sum_i (k_i - 1) H(q^i)
/// with S_r = sum_i q_r^i. Differs from log P(A | params) by m log N on trees.
double bethe_objective(const Graph& g, const Params& params, const Marginals& marginals,
                       const EdgeMarginals& edge_marginals);

/// One EM run from fixed initial parameters.
struct EmTrace {
  Params params;
  BpState state;
  std::vector<double> objectives;
  std::size_t iterations = 0;
  bool converged = false;
  std::size_t bp_nonconverged = 0;
  /// Extrapolations rejected because the objective dropped.
  std::size_t rejected_steps = 0;
  double objective = 0.0;
  std::vector<double> bp_deltas;
};

/// Alternates BP (warm-started) with m_step until the largest change of c_rs
/// is below em_tol times their mean and |delta gamma1| < em_tol. With
/// `accelerate`, every two map evaluations are followed by an extrapolated
/// step in (logit gamma1, log c) coordinates, kept only if the objective does
/// not drop. Each map evaluation counts toward em_max_iter. May throw
/// DegenerateGroupError.
EmTrace run_em(const Graph& g, const Params& init, const FitConfig& config, std::uint64_t seed);

/// Random starting point: gamma1 ~ U(0.3, 0.7), c_rs = (2m/n)(1 + spread U(-1, 1))
/// sorted so that c11 > c12 > c22, or c11 > c22 > c12 when `assortative`.
Params initial_params(const Graph& g, double init_spread, std::uint64_t seed, bool assortative = false);

struct RestartDiagnostics {
  std::uint64_t seed = 0;
  std::size_t reseeds = 0;
  bool failed = false;
  std::size_t em_iterations = 0;
  bool converged = false;
  double objective = 0.0;
};

struct FitResult {
  Params params;
  Marginals marginals;
  Assignment assignment;
  double objective = 0.0;
  std::size_t em_iterations = 0;
  bool converged = false;
  StructureClass structure_class = StructureClass::degenerate;
  std::size_t restarts_used = 0;
  std::size_t degenerate_restarts = 0;
  std::size_t ties = 0;
  std::vector<RestartDiagnostics> restarts;
  /// Winning restart's final BP deltas (only with record_bp_deltas).
  std::vector<double> bp_deltas;
};

/// Full core-periphery fit: independent EM restarts, the best Bethe objective
/// wins, groups are reordered so that c11 >= c22, and vertices are assigned
/// by arg-max. Throws FitFailure if every restart collapses.
FitResult fit(const Graph& g, const FitConfig& config);

}  // namespace cpcore
