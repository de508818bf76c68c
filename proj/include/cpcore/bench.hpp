#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cpcore/em.hpp"
#include "cpcore/sbm_gen.hpp"

namespace cpcore {

enum class Method { bp_em, degree_em, naive };

std::string_view to_string(Method m) noexcept;
/// Throws UserError for unknown names.
Method method_from_string(std::string_view name);

/// Fraction of misclassified vertices, minimized over the two global label
/// permutations. Throws UserError on length mismatch.
double error_rate(std::span<const Group> predicted, std::span<const Group> truth);

enum class SweepFamily { theta, weak };

/// EM settings for sweeps: two restarts, em_tol 1e-4, bp_tol 1e-6. Hard
/// assignments stop changing long before the parameters settle to 1e-6.
FitConfig sweep_fit_defaults();

struct SweepConfig {
  std::size_t n = 100000;
  std::size_t trials = 10;
  double gamma1 = 0.5;
  SweepFamily family = SweepFamily::theta;
  // theta family
  double r = 2.0;
  double theta1 = 3.0;
  std::vector<double> theta2_grid;
  // weak family
  double c = 3.0;
  double alpha1 = 1.0;
  double alpha2 = 1.0;
  std::vector<double> delta_grid;

  std::vector<Method> methods{Method::bp_em, Method::degree_em, Method::naive};
  std::uint64_t seed = 0;
  /// Run BP with the planted parameters instead of fitting them.
  bool true_params_mode = false;
  FitConfig fit = sweep_fit_defaults();
  std::size_t workers = 1;

  /// Throws UserError on inadmissible grid points or empty grids.
  void validate() const;
};

/// `points` evenly spaced theta2 values across the admissible interval shrunk
/// by `margin` of its width at each end; the point nearest zero is snapped to
/// exactly zero.
std::vector<double> default_theta2_grid(double theta1, double r, std::size_t points = 11, double margin = 0.05);

struct MethodStats {
  Method method = Method::bp_em;
  double mean_error = 0.0;
  /// Standard error of the mean across trials.
  double stderr_error = 0.0;
  std::size_t trials = 0;
  double mean_iters = 0.0;
  std::size_t failures = 0;
  std::vector<double> errors;
};

struct SweepRow {
  double theta1 = 0.0;
  /// theta2 or delta depending on the family.
  double point = 0.0;
  std::vector<MethodStats> methods;

  const MethodStats& stats(Method m) const;
};

/// Generates `trials` planted networks per grid point and scores every
/// method on each. Results are identical for identical configs regardless of
/// worker count.
std::vector<SweepRow> run_sweep(const SweepConfig& config);

/// Columns: theta1,theta2 (or delta),method,mean_error,stderr,trials,mean_iters,failures.
void write_sweep_csv(std::ostream& out, const SweepConfig& config, const std::vector<SweepRow>& rows);

/// gnuplot script plotting mean error with error bars per method from `csv_path`.
void write_gnuplot_script(std::ostream& out, const SweepConfig& config, const std::string& csv_path);

struct LinearCheckResult {
  double slope = 0.0;
  double intercept = 0.0;
  double residual_rms = 0.0;
  std::size_t vertices = 0;
  std::size_t trials_used = 0;
  std::size_t trials_dropped = 0;
  /// Every vertex of higher degree has a core probability at least as large.
  bool ranking_matches_degree = true;
};

/// Least-squares fit of log(q_1/q_2) against (k_i - c)/c over all vertices of
/// planted weak-structure networks, with BP run at the planted parameters.
/// Trials whose BP does not converge are dropped.
LinearCheckResult weak_structure_linear_check(std::size_t n, double c, double alpha1, double alpha2, double delta,
                                              std::size_t trials, std::uint64_t seed);

}  // namespace cpcore
