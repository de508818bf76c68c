#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace cpcore {

using vertex_t = std::uint32_t;
using half_edge_t = std::uint32_t;

struct Edge {
  vertex_t u;
  vertex_t v;

  friend bool operator==(const Edge&, const Edge&) = default;
  friend auto operator<=>(const Edge&, const Edge&) = default;
};

/// Immutable undirected simple graph in compressed adjacency form.
///
/// Every undirected edge {u, v} owns two half-edges: one stored in u's
/// neighbor block pointing at v, and its reverse stored in v's block. The
/// half-edge index is the storage slot used by per-direction data such as
/// belief-propagation messages. Neighbor blocks are sorted ascending.
class Graph {
 public:
  Graph() = default;

  /// Builds a graph on vertices 0..n-1. Throws UserError on self-loops,
  /// duplicate edges or out-of-range endpoints.
  static Graph from_edges(std::size_t n, std::vector<Edge> edges);

  std::size_t num_vertices() const noexcept { return offsets_.empty() ? 0 : offsets_.size() - 1; }
  std::size_t num_edges() const noexcept { return edges_.size(); }
  std::size_t num_half_edges() const noexcept { return neighbors_.size(); }

  /// Throws std::out_of_range for i >= n.
  std::size_t degree(vertex_t i) const;
  std::size_t degree_unchecked(vertex_t i) const noexcept { return offsets_[i + 1] - offsets_[i]; }
  std::size_t max_degree() const noexcept { return max_degree_; }

  /// 2m/n. Throws UserError when n = 0.
  double mean_degree() const;

  std::span<const vertex_t> neighbors(vertex_t i) const noexcept {
    return {neighbors_.data() + offsets_[i], neighbors_.data() + offsets_[i + 1]};
  }
  half_edge_t half_begin(vertex_t i) const noexcept { return static_cast<half_edge_t>(offsets_[i]); }
  half_edge_t half_end(vertex_t i) const noexcept { return static_cast<half_edge_t>(offsets_[i + 1]); }
  vertex_t head(half_edge_t h) const noexcept { return neighbors_[h]; }
  half_edge_t reverse(half_edge_t h) const noexcept { return reverse_[h]; }
  /// Cache hints for the row of vertex i and for its reverse links.
  void prefetch_offsets(vertex_t i) const noexcept { __builtin_prefetch(offsets_.data() + i); }
  void prefetch_reverse(vertex_t i) const noexcept { __builtin_prefetch(reverse_.data() + offsets_[i]); }
  std::uint32_t edge_of(half_edge_t h) const noexcept { return edge_of_[h]; }

  /// Edges with u < v, sorted lexicographically.
  std::span<const Edge> edges() const noexcept { return edges_; }
  /// Half-edge u->v of edge e (where edges()[e] = {u, v}).
  half_edge_t edge_half(std::size_t e) const noexcept { return edge_half_[e]; }

  bool has_edge(vertex_t u, vertex_t v) const noexcept;

  /// Exhaustive scan of the representation invariants: symmetric adjacency,
  /// no self-loops or duplicates, handshake identity, reverse links.
  bool check_invariants() const;

 private:
  std::vector<std::uint64_t> offsets_;
  std::vector<vertex_t> neighbors_;
  std::vector<half_edge_t> reverse_;
  std::vector<std::uint32_t> edge_of_;
  std::vector<Edge> edges_;
  std::vector<half_edge_t> edge_half_;
  std::size_t max_degree_ = 0;
};

/// Bijection between external vertex labels and dense internal indices.
class LabelMap {
 public:
  /// Returns the index of `label`, assigning the next free index if new.
  vertex_t intern(std::string_view label);
  std::optional<vertex_t> find(std::string_view label) const;
  const std::string& label(vertex_t i) const { return labels_.at(i); }
  std::size_t size() const noexcept { return labels_.size(); }

  /// Labels "0".."n-1" in order.
  static LabelMap identity(std::size_t n);

 private:
  std::vector<std::string> labels_;
  std::unordered_map<std::string, vertex_t> index_;
};

enum class DuplicatePolicy { reject, ignore };
enum class SelfLoopPolicy { drop, reject };

struct LoadOptions {
  DuplicatePolicy duplicates = DuplicatePolicy::reject;
  SelfLoopPolicy self_loops = SelfLoopPolicy::drop;
  /// Reject input without any vertex.
  bool strict = false;
  /// Field separator; 0 splits on any run of spaces or tabs.
  char delimiter = 0;
  char comment = '#';
};

struct LoadReport {
  std::size_t lines = 0;
  std::size_t dropped_self_loops = 0;
  std::size_t dropped_duplicates = 0;
};

struct LoadedGraph {
  Graph graph;
  LabelMap labels;
  LoadReport report;
};

/// Reads a two-column edge list. A `%nodes <n>` directive before the first
/// edge pre-registers labels "0".."n-1" so isolated vertices survive.
LoadedGraph load_edge_list(std::istream& in, const LoadOptions& options = {});
LoadedGraph load_edge_list_file(const std::string& path, const LoadOptions& options = {});

/// Writes `%nodes n` followed by one `u<TAB>v` line per edge, using internal
/// indices. Reading the output back yields the same graph.
void write_edge_list(std::ostream& out, const Graph& g);

}  // namespace cpcore
