#include "cpcore/bench.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <ostream>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "cpcore/bp.hpp"
#include "cpcore/degree_model.hpp"
#include "cpcore/error.hpp"
#include "cpcore/parallel.hpp"
#include "cpcore/random.hpp"

namespace cpcore {

std::string_view to_string(Method m) noexcept {
  switch (m) {
    case Method::bp_em: return "bp_em";
    case Method::degree_em: return "degree_em";
    case Method::naive: return "naive";
  }
  return "unknown";
}

Method method_from_string(std::string_view name) {
  for (Method m : {Method::bp_em, Method::degree_em, Method::naive})
    if (to_string(m) == name) return m;
  throw UserError(fmt::format("unknown method '{}' (expected bp_em, degree_em or naive)", name));
}

double error_rate(std::span<const Group> predicted, std::span<const Group> truth) {
  if (predicted.size() != truth.size())
    throw UserError(fmt::format("assignment has {} entries but truth has {}", predicted.size(), truth.size()));
  if (truth.empty()) return 0.0;
  std::size_t mismatches = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) mismatches += predicted[i] != truth[i];
  const std::size_t flipped = truth.size() - mismatches;
  return static_cast<double>(std::min(mismatches, flipped)) / static_cast<double>(truth.size());
}

FitConfig sweep_fit_defaults() {
  FitConfig fc;
  fc.restarts = 2;
  fc.em_tol = 1e-4;
  fc.bp_tol = 1e-6;
  return fc;
}

void SweepConfig::validate() const {
  if (n < 2) throw UserError("benchmark networks need at least two vertices");
  if (trials < 1) throw UserError("need at least one trial");
  if (!(gamma1 > 0.0 && gamma1 < 1.0)) throw UserError("gamma1 must lie in (0, 1)");
  if (methods.empty()) throw UserError("no methods selected");
  if (family == SweepFamily::theta) {
    if (theta2_grid.empty()) throw UserError("empty theta2 grid");
    for (double t2 : theta2_grid) mixing_from_theta({theta1, t2, r});
  } else {
    if (delta_grid.empty()) throw UserError("empty delta grid");
    for (double d : delta_grid) weak_structure_mixing(c, alpha1, alpha2, d);
  }
  if (!true_params_mode || std::find(methods.begin(), methods.end(), Method::bp_em) == methods.end()) return;
  if (!(fit.bp_tol > 0.0) || fit.bp_max_iter < 1) throw UserError("invalid BP settings");
}

std::vector<double> default_theta2_grid(double theta1, double r, std::size_t points, double margin) {
  if (points < 2) throw UserError("theta2 grid needs at least two points");
  const auto [lo, hi] = admissible_theta2(theta1, r);
  const double width = hi - lo;
  const double a = lo + margin * width;
  const double b = hi - margin * width;
  std::vector<double> grid(points);
  for (std::size_t k = 0; k < points; ++k) grid[k] = a + (b - a) * static_cast<double>(k) / static_cast<double>(points - 1);
  if (a < 0.0 && b > 0.0) {
    auto nearest = std::min_element(grid.begin(), grid.end(), [](double x, double y) { return std::abs(x) < std::abs(y); });
    *nearest = 0.0;
  }
  return grid;
}

const MethodStats& SweepRow::stats(Method m) const {
  for (const auto& s : methods)
    if (s.method == m) return s;
  throw UserError(fmt::format("method {} not present in sweep row", to_string(m)));
}

namespace {

struct TrialOutcome {
  bool failed = true;
  double error = 0.0;
  double iterations = 0.0;
};

MixingMatrix point_mixing(const SweepConfig& cfg, double point) {
  return cfg.family == SweepFamily::theta ? mixing_from_theta({cfg.theta1, point, cfg.r})
                                          : weak_structure_mixing(cfg.c, cfg.alpha1, cfg.alpha2, point);
}

TrialOutcome run_method(Method method, const SweepConfig& cfg, const PlantedNetwork& net, std::uint64_t seed) {
  TrialOutcome out;
  try {
    switch (method) {
      case Method::bp_em: {
        if (cfg.true_params_mode) {
          BpOptions opts;
          opts.tol = cfg.fit.bp_tol;
          opts.max_iter = cfg.fit.bp_max_iter;
          opts.damping = cfg.fit.damping;
          opts.schedule_seed = child_seed(seed, {3});
          const BpResult bp = run_bp(net.graph, Params{net.gamma1, net.c, 0.0}, child_seed(seed, {4}), opts);
          out.error = error_rate(classify(bp.state.marginals).assignment, net.truth);
          out.iterations = static_cast<double>(bp.iterations);
        } else {
          FitConfig fc = cfg.fit;
          fc.seed = seed;
          fc.workers = 1;
          const FitResult fr = fit(net.graph, fc);
          out.error = error_rate(fr.assignment, net.truth);
          out.iterations = static_cast<double>(fr.em_iterations);
        }
        break;
      }
      case Method::degree_em: {
        const DegreeFit df = fit_degree_model(net.graph);
        out.error = error_rate(df.assignment, net.truth);
        out.iterations = static_cast<double>(df.iterations);
        break;
      }
      case Method::naive:
        out.error = error_rate(naive_split(net.graph, cfg.gamma1), net.truth);
        break;
    }
    out.failed = false;
  } catch (const std::exception& e) {
    spdlog::warn("{} failed on a benchmark trial: {}", to_string(method), e.what());
  }
  return out;
}

}  // namespace

std::vector<SweepRow> run_sweep(const SweepConfig& config) {
  config.validate();
  const auto& grid = config.family == SweepFamily::theta ? config.theta2_grid : config.delta_grid;
  const std::size_t points = grid.size();
  const std::size_t nm = config.methods.size();
  std::vector<TrialOutcome> outcomes(points * config.trials * nm);

  parallel_for(points * config.trials, config.workers, [&](std::size_t item) {
    const std::size_t p = item / config.trials;
    const std::size_t t = item % config.trials;
    const std::uint64_t trial_seed = child_seed(config.seed, {p, t});
    const PlantedNetwork net = sample_sbm(config.n, config.gamma1, point_mixing(config, grid[p]), child_seed(trial_seed, {0}));
    for (std::size_t k = 0; k < nm; ++k)
      outcomes[item * nm + k] = run_method(config.methods[k], config, net, child_seed(trial_seed, {1, k}));
    spdlog::debug("sweep point {} trial {} done", p, t);
  });

  std::vector<SweepRow> rows(points);
  for (std::size_t p = 0; p < points; ++p) {
    rows[p].theta1 = config.family == SweepFamily::theta ? config.theta1 : 0.0;
    rows[p].point = grid[p];
    for (std::size_t k = 0; k < nm; ++k) {
      MethodStats s;
      s.method = config.methods[k];
      double iters = 0.0;
      for (std::size_t t = 0; t < config.trials; ++t) {
        const auto& o = outcomes[(p * config.trials + t) * nm + k];
        if (o.failed) {
          ++s.failures;
          continue;
        }
        s.errors.push_back(o.error);
        iters += o.iterations;
      }
      s.trials = s.errors.size();
      if (s.trials == 0)
        throw std::runtime_error(fmt::format("every trial of {} failed at grid point {}", to_string(s.method), grid[p]));
      double sum = 0.0;
      for (double e : s.errors) sum += e;
      s.mean_error = sum / static_cast<double>(s.trials);
      s.mean_iters = iters / static_cast<double>(s.trials);
      if (s.trials > 1) {
        double ss = 0.0;
        for (double e : s.errors) ss += (e - s.mean_error) * (e - s.mean_error);
        s.stderr_error = std::sqrt(ss / static_cast<double>(s.trials - 1) / static_cast<double>(s.trials));
      }
      rows[p].methods.push_back(std::move(s));
    }
  }
  return rows;
}

void write_sweep_csv(std::ostream& out, const SweepConfig& config, const std::vector<SweepRow>& rows) {
  const bool theta = config.family == SweepFamily::theta;
  out << (theta ? "theta1,theta2" : "c,delta") << ",method,mean_error,stderr,trials,mean_iters,failures\n";
  for (const auto& row : rows)
    for (const auto& s : row.methods)
      out << fmt::format("{:.10g},{:.10g},{},{:.10g},{:.10g},{},{:.10g},{}\n", theta ? row.theta1 : config.c, row.point,
                         to_string(s.method), s.mean_error, s.stderr_error, s.trials, s.mean_iters, s.failures);
}

void write_gnuplot_script(std::ostream& out, const SweepConfig& config, const std::string& csv_path) {
  const bool theta = config.family == SweepFamily::theta;
  out << "set datafile separator ','\n";
  out << "set key top right\n";
  out << "set xlabel '" << (theta ? "theta2" : "delta") << "'\n";
  out << "set ylabel 'fraction misclassified'\n";
  if (theta) out << "set arrow from 0, graph 0 to 0, graph 1 nohead dashtype 2\n";
  out << "plot ";
  for (std::size_t k = 0; k < config.methods.size(); ++k) {
    const auto name = to_string(config.methods[k]);
    if (k > 0) out << ", \\\n     ";
    out << fmt::format("'{}' using 2:(stringcolumn(3) eq '{}' ? $4 : 1/0):5 with yerrorlines title '{}'", csv_path, name, name);
  }
  out << '\n';
}

LinearCheckResult weak_structure_linear_check(std::size_t n, double c, double alpha1, double alpha2, double delta,
                                              std::size_t trials, std::uint64_t seed) {
  const MixingMatrix mix = weak_structure_mixing(c, alpha1, alpha2, delta);
  LinearCheckResult res;
  double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
  std::vector<std::pair<double, double>> points;
  for (std::size_t t = 0; t < trials; ++t) {
    const PlantedNetwork net = sample_sbm(n, 0.5, mix, child_seed(seed, {t, 0}));
    BpOptions opts;
    opts.schedule_seed = child_seed(seed, {t, 1});
    const BpResult bp = run_bp(net.graph, Params{0.5, mix, 0.0}, child_seed(seed, {t, 2}), opts);
    if (!bp.converged) {
      ++res.trials_dropped;
      continue;
    }
    ++res.trials_used;

    // Per degree class, the range of core probabilities.
    std::map<std::size_t, std::pair<double, double>> by_degree;
    for (vertex_t i = 0; i < net.graph.num_vertices(); ++i) {
      const std::size_t k = net.graph.degree_unchecked(i);
      const auto& q = bp.state.marginals.q[i];
      const double x = (static_cast<double>(k) - c) / c;
      const double y = std::log(q[0]) - std::log(q[1]);
      sx += x;
      sy += y;
      sxx += x * x;
      sxy += x * y;
      points.emplace_back(x, y);
      auto [it, fresh] = by_degree.try_emplace(k, q[0], q[0]);
      if (!fresh) {
        it->second.first = std::min(it->second.first, q[0]);
        it->second.second = std::max(it->second.second, q[0]);
      }
    }
    double prev_max = -1.0;
    for (const auto& [k, range] : by_degree) {
      if (range.first < prev_max) res.ranking_matches_degree = false;
      prev_max = range.second;
    }
  }
  res.vertices = points.size();
  if (points.empty()) return res;
  const double m = static_cast<double>(points.size());
  const double var = sxx - sx * sx / m;
  res.slope = var > 0.0 ? (sxy - sx * sy / m) / var : 0.0;
  res.intercept = (sy - res.slope * sx) / m;
  double rss = 0.0;
  for (const auto& [x, y] : points) {
    const double r = y - (res.intercept + res.slope * x);
    rss += r * r;
  }
  res.residual_rms = std::sqrt(rss / m);
  return res;
}

}  // namespace cpcore
