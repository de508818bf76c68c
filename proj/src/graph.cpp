#include "cpcore/graph.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <stdexcept>

#include <spdlog/spdlog.h>

#include "cpcore/error.hpp"

namespace cpcore {

Graph Graph::from_edges(std::size_t n, std::vector<Edge> edges) {
  if (n > std::numeric_limits<vertex_t>::max()) throw UserError("too many vertices");
  if (2 * edges.size() > std::numeric_limits<half_edge_t>::max()) throw UserError("too many edges");
  for (auto& e : edges) {
    if (e.u >= n || e.v >= n) throw UserError("edge endpoint out of range");
    if (e.u == e.v) throw UserError("self-loop at vertex " + std::to_string(e.u));
    if (e.u > e.v) std::swap(e.u, e.v);
  }
  std::sort(edges.begin(), edges.end());
  if (auto dup = std::adjacent_find(edges.begin(), edges.end()); dup != edges.end())
    throw UserError("duplicate edge " + std::to_string(dup->u) + " " + std::to_string(dup->v));

  Graph g;
  g.offsets_.assign(n + 1, 0);
  for (const auto& e : edges) {
    ++g.offsets_[e.u + 1];
    ++g.offsets_[e.v + 1];
  }
  for (std::size_t i = 0; i < n; ++i) {
    g.max_degree_ = std::max<std::size_t>(g.max_degree_, g.offsets_[i + 1]);
    g.offsets_[i + 1] += g.offsets_[i];
  }

  const std::size_t m = edges.size();
  g.neighbors_.resize(2 * m);
  g.reverse_.resize(2 * m);
  g.edge_of_.resize(2 * m);
  g.edge_half_.resize(m);
  // Filling in lexicographic edge order leaves every neighbor block sorted.
  std::vector<std::uint64_t> cursor(g.offsets_.begin(), g.offsets_.end() - 1);
  for (std::size_t e = 0; e < m; ++e) {
    const auto [u, v] = edges[e];
    const auto hu = static_cast<half_edge_t>(cursor[u]++);
    const auto hv = static_cast<half_edge_t>(cursor[v]++);
    g.neighbors_[hu] = v;
    g.neighbors_[hv] = u;
    g.reverse_[hu] = hv;
    g.reverse_[hv] = hu;
    g.edge_of_[hu] = g.edge_of_[hv] = static_cast<std::uint32_t>(e);
    g.edge_half_[e] = hu;
  }
  g.edges_ = std::move(edges);
  return g;
}

std::size_t Graph::degree(vertex_t i) const {
  if (i >= num_vertices()) throw std::out_of_range("vertex index " + std::to_string(i) + " out of range");
  return degree_unchecked(i);
}

double Graph::mean_degree() const {
  if (num_vertices() == 0) throw UserError("mean degree of an empty vertex set");
  return 2.0 * static_cast<double>(num_edges()) / static_cast<double>(num_vertices());
}

bool Graph::has_edge(vertex_t u, vertex_t v) const noexcept {
  if (u >= num_vertices() || v >= num_vertices()) return false;
  auto nb = neighbors(u);
  return std::binary_search(nb.begin(), nb.end(), v);
}

bool Graph::check_invariants() const {
  const std::size_t n = num_vertices();
  std::size_t degree_sum = 0;
  for (vertex_t i = 0; i < n; ++i) {
    auto nb = neighbors(i);
    degree_sum += nb.size();
    for (std::size_t k = 0; k < nb.size(); ++k) {
      if (nb[k] == i || nb[k] >= n) return false;
      if (k > 0 && nb[k - 1] >= nb[k]) return false;
      const half_edge_t h = half_begin(i) + static_cast<half_edge_t>(k);
      const half_edge_t back = reverse_[h];
      if (back >= neighbors_.size() || neighbors_[back] != i || reverse_[back] != h) return false;
      if (back < half_begin(nb[k]) || back >= half_end(nb[k])) return false;
      if (edge_of_[h] != edge_of_[back]) return false;
    }
  }
  if (degree_sum != 2 * num_edges()) return false;
  for (std::size_t e = 0; e < edges_.size(); ++e) {
    const half_edge_t h = edge_half_[e];
    if (edges_[e].u >= edges_[e].v || neighbors_[h] != edges_[e].v || edge_of_[h] != e) return false;
  }
  return true;
}

vertex_t LabelMap::intern(std::string_view label) {
  std::string key(label);
  if (auto it = index_.find(key); it != index_.end()) return it->second;
  const auto id = static_cast<vertex_t>(labels_.size());
  labels_.push_back(key);
  index_.emplace(std::move(key), id);
  return id;
}

std::optional<vertex_t> LabelMap::find(std::string_view label) const {
  if (auto it = index_.find(std::string(label)); it != index_.end()) return it->second;
  return std::nullopt;
}

LabelMap LabelMap::identity(std::size_t n) {
  LabelMap map;
  for (std::size_t i = 0; i < n; ++i) map.intern(std::to_string(i));
  return map;
}

namespace {

std::vector<std::string_view> split_fields(std::string_view line, char delimiter) {
  std::vector<std::string_view> fields;
  if (delimiter != 0) {
    std::size_t start = 0;
    while (true) {
      const auto pos = line.find(delimiter, start);
      auto field = line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start);
      while (!field.empty() && (field.front() == ' ' || field.front() == '\t')) field.remove_prefix(1);
      while (!field.empty() && (field.back() == ' ' || field.back() == '\t' || field.back() == '\r'))
        field.remove_suffix(1);
      fields.push_back(field);
      if (pos == std::string_view::npos) break;
      start = pos + 1;
    }
    if (fields.size() == 1 && fields[0].empty()) fields.clear();
    return fields;
  }
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    const std::size_t start = i;
    while (i < line.size() && line[i] != ' ' && line[i] != '\t' && line[i] != '\r') ++i;
    if (i > start) fields.push_back(line.substr(start, i - start));
  }
  return fields;
}

}  // namespace

LoadedGraph load_edge_list(std::istream& in, const LoadOptions& options) {
  LoadedGraph out;
  std::vector<Edge> edges;
  std::string line;
  std::size_t lineno = 0;
  bool seen_edge = false;

  // Duplicate detection needs all edges; keep the line of first occurrence.
  std::vector<std::pair<Edge, std::size_t>> keyed;

  while (std::getline(in, line)) {
    ++lineno;
    std::string_view view(line);
    if (view.starts_with("%nodes")) {
      auto fields = split_fields(view, 0);
      std::size_t count = 0;
      if (fields.size() != 2 ||
          std::from_chars(fields[1].data(), fields[1].data() + fields[1].size(), count).ec != std::errc{})
        throw ParseError(lineno, "expected '%nodes <count>'");
      if (seen_edge || out.labels.size() > 0) throw ParseError(lineno, "'%nodes' must precede all edges");
      out.labels = LabelMap::identity(count);
      continue;
    }
    if (auto pos = view.find(options.comment); pos != std::string_view::npos) view = view.substr(0, pos);
    auto fields = split_fields(view, options.delimiter);
    if (fields.empty()) continue;
    if (fields.size() != 2 || fields[0].empty() || fields[1].empty())
      throw ParseError(lineno, "expected two endpoint tokens, found " + std::to_string(fields.size()));
    seen_edge = true;
    const vertex_t a = out.labels.intern(fields[0]);
    const vertex_t b = out.labels.intern(fields[1]);
    if (a == b) {
      if (options.self_loops == SelfLoopPolicy::reject)
        throw ParseError(lineno, "self-loop on '" + std::string(fields[0]) + "'");
      ++out.report.dropped_self_loops;
      continue;
    }
    keyed.push_back({Edge{std::min(a, b), std::max(a, b)}, lineno});
  }
  out.report.lines = lineno;

  std::stable_sort(keyed.begin(), keyed.end(), [](const auto& x, const auto& y) { return x.first < y.first; });
  edges.reserve(keyed.size());
  std::size_t first_dup_line = 0;
  for (std::size_t k = 0; k < keyed.size(); ++k) {
    if (k > 0 && keyed[k].first == keyed[k - 1].first) {
      if (options.duplicates == DuplicatePolicy::reject) {
        if (first_dup_line == 0 || keyed[k].second < first_dup_line) first_dup_line = keyed[k].second;
        continue;
      }
      ++out.report.dropped_duplicates;
      continue;
    }
    edges.push_back(keyed[k].first);
  }
  if (first_dup_line != 0) throw ParseError(first_dup_line, "duplicate edge");

  if (out.labels.size() == 0 && options.strict) throw UserError("empty edge list");
  if (out.report.dropped_self_loops > 0)
    spdlog::warn("dropped {} self-loop(s) while reading edge list", out.report.dropped_self_loops);
  if (out.report.dropped_duplicates > 0)
    spdlog::warn("ignored {} duplicate edge(s) while reading edge list", out.report.dropped_duplicates);

  out.graph = Graph::from_edges(out.labels.size(), std::move(edges));
  return out;
}

LoadedGraph load_edge_list_file(const std::string& path, const LoadOptions& options) {
  std::ifstream in(path);
  if (!in) throw UserError("cannot open input file '" + path + "'");
  return load_edge_list(in, options);
}

void write_edge_list(std::ostream& out, const Graph& g) {
  out << "%nodes " << g.num_vertices() << '\n';
  for (const auto& e : g.edges()) out << e.u << '\t' << e.v << '\n';
}

}  // namespace cpcore
