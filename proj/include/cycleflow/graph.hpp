#pragma once

#include <algorithm>
#include <limits>
#include <queue>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "cycleflow/errors.hpp"

namespace cycleflow {

using NodeId = int;
using ArcId = int;

struct Arc {
  NodeId tail = 0;
  NodeId head = 0;
  double weight = 1.0;
};

/// An oriented multigraph. The orientation of an arc fixes the sign
/// convention for flow, not a travel restriction: flow may run against the
/// arrow and is then negative. Parallel arcs with the same orientation are
/// allowed; an oppositely oriented duplicate of an existing arc is not, and
/// self-loops are rejected.
class OrientedGraph {
 public:
  /// Single node, no arcs: the smallest valid graph.
  OrientedGraph() : OrientedGraph(1, {}) {}

  OrientedGraph(int node_count, std::vector<Arc> arcs)
      : n_(node_count), arcs_(std::move(arcs)) {
    if (n_ < 1) throw ValidationError("nodes", "node count must be positive");
    std::set<std::pair<NodeId, NodeId>> seen;
    for (std::size_t k = 0; k < arcs_.size(); ++k) {
      const Arc& a = arcs_[k];
      if (a.tail < 0 || a.tail >= n_ || a.head < 0 || a.head >= n_)
        throw ValidationError("arcs", "arc " + std::to_string(k) +
                                          " references a node out of range");
      if (a.tail == a.head)
        throw ValidationError("arcs",
                              "arc " + std::to_string(k) + " is a self-loop");
      if (!(a.weight >= 0.0))
        throw ValidationError(
            "arcs", "arc " + std::to_string(k) + " has negative weight");
      if (seen.count({a.head, a.tail}))
        throw ValidationError("arcs", "arc " + std::to_string(k) +
                                          " duplicates an existing arc with "
                                          "opposite orientation");
      seen.insert({a.tail, a.head});
    }
    adj_.resize(n_);
    // Built in arc order, so every incidence list is ascending by ArcId.
    for (std::size_t k = 0; k < arcs_.size(); ++k) {
      adj_[arcs_[k].tail].push_back({arcs_[k].head, static_cast<ArcId>(k)});
      adj_[arcs_[k].head].push_back({arcs_[k].tail, static_cast<ArcId>(k)});
    }
  }

  int node_count() const { return n_; }
  int arc_count() const { return static_cast<int>(arcs_.size()); }
  const Arc& arc(ArcId id) const { return arcs_[static_cast<std::size_t>(id)]; }
  const std::vector<Arc>& arcs() const { return arcs_; }

  /// Undirected incidence list of v: (other endpoint, arc id), ascending by
  /// arc id.
  const std::vector<std::pair<NodeId, ArcId>>& incident(NodeId v) const {
    return adj_[static_cast<std::size_t>(v)];
  }

  std::vector<double> weights() const {
    std::vector<double> w(arcs_.size());
    for (std::size_t k = 0; k < arcs_.size(); ++k) w[k] = arcs_[k].weight;
    return w;
  }

 private:
  int n_;
  std::vector<Arc> arcs_;
  std::vector<std::vector<std::pair<NodeId, ArcId>>> adj_;
};

/// Node-arc incidence matrix: +1 at the tail of an arc, -1 at its head.
/// Every column sums to zero; for a connected graph the rank is n-1.
using IncidenceMatrix = Eigen::MatrixXi;

inline IncidenceMatrix build_incidence(const OrientedGraph& g) {
  IncidenceMatrix inc = IncidenceMatrix::Zero(g.node_count(), g.arc_count());
  for (ArcId k = 0; k < g.arc_count(); ++k) {
    inc(g.arc(k).tail, k) = 1;
    inc(g.arc(k).head, k) = -1;
  }
  return inc;
}

inline bool is_connected(const OrientedGraph& g) {
  std::vector<char> seen(g.node_count(), 0);
  std::vector<NodeId> stack = {0};
  seen[0] = 1;
  int reached = 1;
  while (!stack.empty()) {
    NodeId u = stack.back();
    stack.pop_back();
    for (const auto& [v, a] : g.incident(u)) {
      if (!seen[v]) {
        seen[v] = 1;
        ++reached;
        stack.push_back(v);
      }
    }
  }
  return reached == g.node_count();
}

/// Connected and free of articulation vertices. Parallel arcs count as
/// distinct, so a doubled arc already makes its two endpoints biconnected.
inline bool is_biconnected(const OrientedGraph& g) {
  if (!is_connected(g)) return false;
  const int n = g.node_count();
  if (n <= 2) return true;
  std::vector<int> disc(n, -1), low(n, 0), child_count(n, 0);
  std::vector<std::size_t> next(n, 0);
  std::vector<NodeId> stack;
  std::vector<ArcId> via(n, -1);  // tree arc used to enter each node
  int timer = 0;

  disc[0] = low[0] = timer++;
  stack.push_back(0);
  while (!stack.empty()) {
    NodeId u = stack.back();
    const auto& inc = g.incident(u);
    if (next[u] < inc.size()) {
      auto [v, a] = inc[next[u]++];
      if (a == via[u]) continue;  // the tree arc itself; a parallel twin is a
                                  // genuine back edge
      if (disc[v] == -1) {
        disc[v] = low[v] = timer++;
        via[v] = a;
        ++child_count[u];
        stack.push_back(v);
      } else {
        low[u] = std::min(low[u], disc[v]);
      }
    } else {
      stack.pop_back();
      if (!stack.empty()) {
        NodeId p = stack.back();
        low[p] = std::min(low[p], low[u]);
        if (p != 0 && low[u] >= disc[p]) return false;
      }
    }
  }
  if (child_count[0] > 1) return false;
  return true;
}

struct SpanningTree {
  NodeId root = 0;
  std::vector<ArcId> tree_arcs;     // ascending
  std::vector<NodeId> parent;       // -1 at the root
  std::vector<ArcId> parent_arc;    // -1 at the root
  std::vector<int> depth;
  std::vector<char> is_tree_arc;    // indexed by ArcId

  bool contains(ArcId a) const {
    return a >= 0 && static_cast<std::size_t>(a) < is_tree_arc.size() &&
           is_tree_arc[static_cast<std::size_t>(a)];
  }
};

/// Breadth-first spanning tree. Frontier nodes scan their incidence lists in
/// ascending ArcId order, which makes the tree deterministic.
inline SpanningTree spanning_tree(const OrientedGraph& g, NodeId root = 0) {
  const int n = g.node_count();
  if (root < 0 || root >= n)
    throw ValidationError("root", "root node out of range");
  SpanningTree t;
  t.root = root;
  t.parent.assign(n, -1);
  t.parent_arc.assign(n, -1);
  t.depth.assign(n, 0);
  t.is_tree_arc.assign(g.arc_count(), 0);
  std::vector<char> seen(n, 0);
  std::queue<NodeId> q;
  seen[root] = 1;
  q.push(root);
  int reached = 1;
  while (!q.empty()) {
    NodeId u = q.front();
    q.pop();
    for (const auto& [v, a] : g.incident(u)) {
      if (seen[v]) continue;
      seen[v] = 1;
      ++reached;
      t.parent[v] = u;
      t.parent_arc[v] = a;
      t.depth[v] = t.depth[u] + 1;
      t.is_tree_arc[a] = 1;
      t.tree_arcs.push_back(a);
      q.push(v);
    }
  }
  if (reached != n) throw NotConnected("graph is not connected");
  std::sort(t.tree_arcs.begin(), t.tree_arcs.end());
  return t;
}

/// One step of a walk: the arc taken and whether it was traversed along its
/// orientation (+1) or against it (-1).
struct PathStep {
  ArcId arc = -1;
  int direction = 0;
};

struct ShortestPathTree {
  NodeId source = 0;
  std::vector<double> dist;
  std::vector<NodeId> parent;
  std::vector<ArcId> parent_arc;
};

/// Dijkstra with a deterministic tie-break: nodes leave the queue in
/// (distance, NodeId) order, incidence lists are scanned in ascending ArcId
/// order, and an equal-distance relaxation of an unsettled node overwrites
/// its parent, so the last equally short predecessor scanned wins. Parents
/// are always settled nodes, so parent chains can never cycle even with
/// zero-weight arcs.
inline ShortestPathTree shortest_path_tree(
    const OrientedGraph& g, NodeId source,
    const std::vector<double>* weights = nullptr) {
  const int n = g.node_count();
  if (source < 0 || source >= n)
    throw ValidationError("source", "node out of range");
  if (weights && static_cast<int>(weights->size()) != g.arc_count())
    throw ShapeMismatch("weight vector does not match arc count");
  const double inf = std::numeric_limits<double>::infinity();
  ShortestPathTree t;
  t.source = source;
  t.dist.assign(n, inf);
  t.parent.assign(n, std::numeric_limits<NodeId>::max());
  t.parent_arc.assign(n, std::numeric_limits<ArcId>::max());
  std::vector<char> done(n, 0);
  auto arc_weight = [&](ArcId a) {
    return weights ? (*weights)[static_cast<std::size_t>(a)] : g.arc(a).weight;
  };

  using Item = std::pair<double, NodeId>;
  std::priority_queue<Item, std::vector<Item>, std::greater<Item>> heap;
  t.dist[source] = 0.0;
  heap.push({0.0, source});
  while (!heap.empty()) {
    auto [d, u] = heap.top();
    heap.pop();
    if (done[u]) continue;
    done[u] = 1;
    for (const auto& [v, a] : g.incident(u)) {
      double nd = d + arc_weight(a);
      if (nd < t.dist[v]) {
        t.dist[v] = nd;
        t.parent[v] = u;
        t.parent_arc[v] = a;
        heap.push({nd, v});
      } else if (nd == t.dist[v] && !done[v]) {
        t.parent[v] = u;
        t.parent_arc[v] = a;
      }
    }
  }
  for (NodeId v = 0; v < n; ++v) {
    if (t.parent[v] == std::numeric_limits<NodeId>::max()) t.parent[v] = -1;
    if (t.parent_arc[v] == std::numeric_limits<ArcId>::max())
      t.parent_arc[v] = -1;
  }
  return t;
}

/// Walk from the tree's source to target, as traversal steps.
inline std::vector<PathStep> path_from_tree(const OrientedGraph& g,
                                            const ShortestPathTree& t,
                                            NodeId target) {
  if (target < 0 || target >= g.node_count())
    throw ValidationError("target", "node out of range");
  if (t.dist[target] == std::numeric_limits<double>::infinity())
    throw NotConnected("target unreachable from source");
  std::vector<PathStep> steps;
  NodeId v = target;
  while (v != t.source) {
    ArcId a = t.parent_arc[v];
    NodeId p = t.parent[v];
    steps.push_back({a, g.arc(a).tail == p ? +1 : -1});
    v = p;
  }
  std::reverse(steps.begin(), steps.end());
  return steps;
}

inline std::vector<PathStep> shortest_path(
    const OrientedGraph& g, NodeId src, NodeId dst,
    const std::vector<double>* weights = nullptr) {
  return path_from_tree(g, shortest_path_tree(g, src, weights), dst);
}

inline double path_weight(const OrientedGraph& g,
                          const std::vector<PathStep>& steps) {
  double w = 0.0;
  for (const PathStep& s : steps) w += g.arc(s.arc).weight;
  return w;
}

}  // namespace cycleflow
