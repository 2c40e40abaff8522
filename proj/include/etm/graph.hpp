#pragma once

/**
 * @file graph.hpp
 * @brief Conditional-dependence graphs from parameter matrices.
 *
 * The edge set E = {(i,j): i != j, M_ij != 0} captures conditional
 * dependence; its connected-component closure captures marginal dependence.
 */

#include <algorithm>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "model.hpp"

namespace etm {

/// Undirected graph on vertices {0, ..., p-1}; edges stored symmetrically,
/// no self-loops.
struct Graph {
  int p = 0;
  std::set<std::pair<int, int>> edges; ///< both orientations present

  void add_edge(int i, int j) {
    if (i == j) return;
    edges.insert({i, j});
    edges.insert({j, i});
  }
  bool has_edge(int i, int j) const { return edges.count({i, j}) > 0; }

  /// Unordered pairs (i < j), deterministic order.
  std::vector<std::pair<int, int>> edge_pairs() const {
    std::vector<std::pair<int, int>> out;
    for (const auto& [i, j] : edges)
      if (i < j) out.emplace_back(i, j);
    return out;
  }
};

/// E = {(i,j): i != j, |M_ij| > tol}.
inline Graph edge_set(const ParameterMatrix& m, double tol = 1e-8) {
  if (m.rows() != m.cols()) throw Error("edge_set: M must be square");
  if (tol < 0) throw Error("edge_set: tol must be >= 0");
  Graph g;
  g.p = static_cast<int>(m.rows());
  for (int i = 0; i < g.p; ++i)
    for (int j = i + 1; j < g.p; ++j)
      if (std::abs(m(i, j)) > tol || std::abs(m(j, i)) > tol) g.add_edge(i, j);
  return g;
}

/// Connected-component closure: (i,j) in Ebar iff a path in E connects them.
inline Graph dependence_closure(const Graph& g) {
  std::vector<int> parent(g.p);
  std::iota(parent.begin(), parent.end(), 0);
  std::function<int(int)> find = [&](int v) {
    while (parent[v] != v) v = parent[v] = parent[parent[v]];
    return v;
  };
  for (const auto& [i, j] : g.edges) parent[find(i)] = find(j);

  Graph closure;
  closure.p = g.p;
  for (int i = 0; i < g.p; ++i)
    for (int j = i + 1; j < g.p; ++j)
      if (find(i) == find(j)) closure.add_edge(i, j);
  return closure;
}

/// DOT `graph` document; each undirected edge emitted once (i < j),
/// vertices are 1-based to match the usual figure conventions.
inline std::string export_dot(const Graph& g,
                              const std::vector<std::string>& labels = {}) {
  std::ostringstream os;
  os << "graph G {\n";
  for (int v = 0; v < g.p; ++v) {
    os << "  " << v + 1;
    if (v < static_cast<int>(labels.size()))
      os << " [label=\"" << labels[v] << "\"]";
    os << ";\n";
  }
  for (const auto& [i, j] : g.edge_pairs())
    os << "  " << i + 1 << " -- " << j + 1 << ";\n";
  os << "}\n";
  return os.str();
}

/// Mixture-family decomposition: per-level subgraphs E^1, E^2 over the block
/// coordinates, plus the entries active in both levels.
struct MixtureGraphs {
  Graph level0, level1, shared;
};

inline MixtureGraphs mixture_edge_sets(const TraceModel& model,
                                       const ParameterMatrix& m,
                                       double tol = 1e-8) {
  if (model.family != Family::mixture_gaussian_binary)
    throw Error("mixture_edge_sets requires the mixture family");
  const int r = model.block_dim;
  MixtureGraphs out;
  out.level0 = edge_set(m.topLeftCorner(r, r), tol);
  out.level1 = edge_set(m.bottomRightCorner(r, r), tol);
  out.shared.p = r;
  for (const auto& [i, j] : out.level0.edge_pairs())
    if (out.level1.has_edge(i, j)) out.shared.add_edge(i, j);
  return out;
}

} // namespace etm
