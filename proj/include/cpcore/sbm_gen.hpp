#pragma once

#include <cstddef>
#include <cstdint>
#include <string_view>
#include <utility>
#include <vector>

#include "cpcore/graph.hpp"

namespace cpcore {

/// Group 1 is the core, group 2 the periphery.
enum class Group : std::uint8_t { core = 1, periphery = 2 };

using Assignment = std::vector<Group>;

inline int index_of(Group g) noexcept { return g == Group::core ? 0 : 1; }
inline Group other(Group g) noexcept { return g == Group::core ? Group::periphery : Group::core; }

enum class StructureClass { core_periphery, assortative, disassortative, degenerate };

std::string_view to_string(StructureClass s) noexcept;

/// Scaled connection probabilities c_rs = n p_rs of a two-group block model.
struct MixingMatrix {
  double c11 = 0.0;
  double c12 = 0.0;
  double c22 = 0.0;

  /// r, s in {0, 1}.
  double operator()(int r, int s) const noexcept { return r == s ? (r == 0 ? c11 : c22) : c12; }

  /// Same matrix with the group labels exchanged.
  MixingMatrix swapped() const noexcept { return {c22, c12, c11}; }

  /// Names the mixing regime after putting the denser diagonal entry first.
  /// Entries closer than `rel_tol` (relative to the larger) count as tied,
  /// and any tie makes the matrix degenerate.
  StructureClass classify(double rel_tol = 1e-3) const noexcept;

  friend bool operator==(const MixingMatrix&, const MixingMatrix&) = default;
};

/// The rank-two benchmark family c = theta1 u1 u1^T + theta2 u2 u2^T with
/// u1 = (sqrt r, 1/sqrt r) and u2 = (1/sqrt r, -sqrt r).
struct ThetaParametrization {
  double theta1 = 0.0;
  double theta2 = 0.0;
  double r = 2.0;
};

/// Open interval of theta2 values for which every c_rs is positive and
/// c11 > c12 > c22. Throws UserError unless theta1 > 0 and r > 1.
std::pair<double, double> admissible_theta2(double theta1, double r);

/// Throws UserError (quoting the admissible interval) if theta2 is outside it.
MixingMatrix mixing_from_theta(const ThetaParametrization& p);

/// c11 = c + alpha1 delta, c12 = c, c22 = c - alpha2 delta.
MixingMatrix weak_structure_mixing(double c, double alpha1, double alpha2, double delta);

struct GroupMeanDegrees {
  double core = 0.0;
  double periphery = 0.0;
};

/// Expected degrees of core and periphery vertices for prior gamma1.
GroupMeanDegrees group_mean_degrees(double gamma1, const MixingMatrix& c) noexcept;

struct PlantedNetwork {
  Graph graph;
  std::vector<Group> truth;
  double gamma1 = 0.5;
  MixingMatrix c;
  /// Group-pair blocks whose probability c_rs/n exceeded 1 and was clamped.
  std::size_t clamped_blocks = 0;
};

/// Samples a two-group block model network. Labels and each of the three
/// group-pair blocks draw from independent child streams of `seed`; edges are
/// placed by geometric skipping, O(n + m) expected time.
PlantedNetwork sample_sbm(std::size_t n, double gamma1, const MixingMatrix& c, std::uint64_t seed);

}  // namespace cpcore
