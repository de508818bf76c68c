#include "cpcore/sbm_gen.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "cpcore/error.hpp"
#include "cpcore/random.hpp"

namespace cpcore {

std::string_view to_string(StructureClass s) noexcept {
  switch (s) {
    case StructureClass::core_periphery: return "core-periphery";
    case StructureClass::assortative: return "assortative";
    case StructureClass::disassortative: return "disassortative";
    case StructureClass::degenerate: return "degenerate";
  }
  return "unknown";
}

StructureClass MixingMatrix::classify(double rel_tol) const noexcept {
  const MixingMatrix m = c11 >= c22 ? *this : swapped();
  auto tied = [rel_tol](double x, double y) { return std::abs(x - y) <= rel_tol * std::max(std::abs(x), std::abs(y)); };
  // c11 == c22 is an ordinary symmetric matrix; only ties with c12 leave the
  // regime undetermined.
  if (tied(m.c11, m.c12) || tied(m.c12, m.c22)) return StructureClass::degenerate;
  if (m.c12 > m.c11) return StructureClass::disassortative;
  if (m.c12 < m.c22) return StructureClass::assortative;
  return StructureClass::core_periphery;
}

std::pair<double, double> admissible_theta2(double theta1, double r) {
  if (!(theta1 > 0.0)) throw UserError("theta1 must be positive");
  if (!(r > 1.0)) throw UserError("r must exceed 1");
  // Lower end: c22 = theta1/r + theta2 r > 0, and c11 > c12, which binds
  // first when r is below the golden ratio. Upper end: c12 > c22.
  const double lo = std::max(-theta1 / (r * r), -theta1 * r * (r - 1.0) / (r + 1.0));
  return {lo, theta1 * (1.0 - 1.0 / r) / (r + 1.0)};
}

MixingMatrix mixing_from_theta(const ThetaParametrization& p) {
  const auto [lo, hi] = admissible_theta2(p.theta1, p.r);
  if (!(p.theta2 > lo && p.theta2 < hi))
    throw UserError(fmt::format("theta2 = {} is not admissible for theta1 = {}, r = {}: valid interval is ({:.6g}, {:.6g})",
                                p.theta2, p.theta1, p.r, lo, hi));
  return {p.theta1 * p.r + p.theta2 / p.r, p.theta1 - p.theta2, p.theta1 / p.r + p.theta2 * p.r};
}

MixingMatrix weak_structure_mixing(double c, double alpha1, double alpha2, double delta) {
  if (!(c > 0.0)) throw UserError("c must be positive");
  if (!(alpha1 > 0.0) || !(alpha2 > 0.0)) throw UserError("alpha1 and alpha2 must be positive");
  if (!(delta >= 0.0)) throw UserError("delta must be nonnegative");
  if (c - alpha2 * delta < 0.0)
    throw UserError(fmt::format("delta = {} makes c22 = c - alpha2*delta negative; need delta < {:.6g}", delta, c / alpha2));
  return {c + alpha1 * delta, c, c - alpha2 * delta};
}

GroupMeanDegrees group_mean_degrees(double gamma1, const MixingMatrix& c) noexcept {
  const double gamma2 = 1.0 - gamma1;
  return {gamma1 * c.c11 + gamma2 * c.c12, gamma1 * c.c12 + gamma2 * c.c22};
}

namespace {

// Number of pairs to skip before the next success of a Bernoulli(p) sequence.
class GeometricSkip {
 public:
  explicit GeometricSkip(double p) : p_(p), log_q_(p < 1.0 ? std::log1p(-p) : 0.0) {}

  std::uint64_t next(Rng& rng) const {
    if (p_ >= 1.0) return 0;
    const double skip = std::floor(std::log(uniform_open_closed(rng)) / log_q_);
    return skip >= 1.8e19 ? UINT64_MAX / 2 : static_cast<std::uint64_t>(skip);
  }

 private:
  double p_;
  double log_q_;
};

// All pairs {a, b}, a < b, drawn from one member list.
void sample_within(const std::vector<vertex_t>& members, double p, Rng& rng, std::vector<Edge>& out) {
  if (p <= 0.0 || members.size() < 2) return;
  const GeometricSkip skip(p);
  const std::uint64_t k = members.size();
  // Walk the lower triangle row by row: pair (v, w) with w < v.
  std::uint64_t v = 1;
  std::uint64_t w = 0;
  bool first = true;
  while (v < k) {
    std::uint64_t step = skip.next(rng) + (first ? 0 : 1);
    first = false;
    w += step;
    while (v < k && w >= v) {
      w -= v;
      ++v;
    }
    if (v < k) out.push_back({members[w], members[v]});
  }
}

void sample_between(const std::vector<vertex_t>& rows, const std::vector<vertex_t>& cols, double p, Rng& rng,
                    std::vector<Edge>& out) {
  if (p <= 0.0 || rows.empty() || cols.empty()) return;
  const GeometricSkip skip(p);
  const std::uint64_t total = static_cast<std::uint64_t>(rows.size()) * cols.size();
  std::uint64_t idx = skip.next(rng);
  while (idx < total) {
    out.push_back({rows[idx / cols.size()], cols[idx % cols.size()]});
    const std::uint64_t step = skip.next(rng) + 1;
    if (step > total) break;
    idx += step;
  }
}

}  // namespace

PlantedNetwork sample_sbm(std::size_t n, double gamma1, const MixingMatrix& c, std::uint64_t seed) {
  if (n < 2) throw UserError("need at least two vertices");
  if (!(gamma1 >= 0.0 && gamma1 <= 1.0)) throw UserError("gamma1 must lie in [0, 1]");
  if (c.c11 < 0.0 || c.c12 < 0.0 || c.c22 < 0.0) throw UserError("mixing matrix entries must be nonnegative");

  PlantedNetwork net;
  net.gamma1 = gamma1;
  net.c = c;
  net.truth.resize(n);

  Rng label_rng(child_seed(seed, {1}));
  std::vector<vertex_t> core, periphery;
  for (std::size_t i = 0; i < n; ++i) {
    const bool is_core = uniform01(label_rng) < gamma1;
    net.truth[i] = is_core ? Group::core : Group::periphery;
    (is_core ? core : periphery).push_back(static_cast<vertex_t>(i));
  }

  const double dn = static_cast<double>(n);
  auto probability = [&](double crs, const char* name) {
    double p = crs / dn;
    if (p > 1.0) {
      spdlog::warn("{} / n = {} exceeds 1; clamped to 1", name, p);
      ++net.clamped_blocks;
      p = 1.0;
    }
    return p;
  };
  const double p11 = probability(c.c11, "c11");
  const double p12 = probability(c.c12, "c12");
  const double p22 = probability(c.c22, "c22");

  std::vector<Edge> edges;
  const double expected = p11 * core.size() * core.size() / 2 + p12 * core.size() * periphery.size() +
                          p22 * periphery.size() * periphery.size() / 2;
  edges.reserve(static_cast<std::size_t>(expected * 1.05) + 16);
  {
    Rng rng(child_seed(seed, {2, 0}));
    sample_within(core, p11, rng, edges);
  }
  {
    Rng rng(child_seed(seed, {2, 1}));
    sample_between(core, periphery, p12, rng, edges);
  }
  {
    Rng rng(child_seed(seed, {2, 2}));
    sample_within(periphery, p22, rng, edges);
  }
  net.graph = Graph::from_edges(n, std::move(edges));
  return net;
}

}  // namespace cpcore
