#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "cycleflow/errors.hpp"
#include "cycleflow/exact.hpp"
#include "cycleflow/graph.hpp"

namespace cycleflow {

/// A simple cycle with a traversal orientation. entries(k) is +1 when arc k
/// is traversed along its orientation, -1 against it, 0 when the arc is not
/// on the cycle.
struct OrientedCycle {
  Eigen::VectorXi entries;          // length m
  std::vector<ArcId> arc_ids;       // ascending
  std::optional<ArcId> defining_arc;  // the non-tree arc, for tree bases
  double weight = 0.0;
};

enum class BasisSource { SpanningTree, Horton };

/// A basis of the cycle space: mu = m - n + 1 independent oriented cycles.
/// B is mu x m with entries in {-1, 0, +1}; every row is orthogonal to every
/// incidence row with exact integer arithmetic.
struct CycleBasis {
  Eigen::MatrixXi B;
  std::vector<OrientedCycle> cycles;
  int mu = 0;
  BasisSource source = BasisSource::SpanningTree;

  double total_weight() const {
    double w = 0.0;
    for (const OrientedCycle& c : cycles) w += c.weight;
    return w;
  }
};

namespace detail {

/// Orients an arc set that forms a simple cycle (every incident node has
/// degree exactly 2). The walk starts along the first listed arc, which
/// therefore gets entry +1.
inline OrientedCycle orient_cycle(const OrientedGraph& g,
                                  std::vector<ArcId> arc_ids) {
  OrientedCycle cycle;
  cycle.entries = Eigen::VectorXi::Zero(g.arc_count());
  std::map<NodeId, std::vector<ArcId>> local;
  for (ArcId a : arc_ids) {
    local[g.arc(a).tail].push_back(a);
    local[g.arc(a).head].push_back(a);
    cycle.weight += g.arc(a).weight;
  }
  for (const auto& [node, arcs] : local)
    if (arcs.size() != 2)
      throw Error("arc set is not a simple cycle");

  ArcId first = arc_ids.front();
  cycle.entries(first) = +1;
  NodeId start = g.arc(first).tail;
  NodeId cur = g.arc(first).head;
  ArcId prev = first;
  while (cur != start) {
    const auto& pair = local[cur];
    ArcId next = pair[0] == prev ? pair[1] : pair[0];
    if (g.arc(next).tail == cur) {
      cycle.entries(next) = +1;
      cur = g.arc(next).head;
    } else {
      cycle.entries(next) = -1;
      cur = g.arc(next).tail;
    }
    prev = next;
  }
  std::sort(arc_ids.begin(), arc_ids.end());
  cycle.arc_ids = std::move(arc_ids);
  return cycle;
}

}  // namespace detail

/// Fundamental cycle basis of a spanning tree: one cycle per non-tree arc,
/// oriented so the defining arc has entry +1 and the rest follow the closing
/// walk through the tree.
inline CycleBasis fundamental_basis(const OrientedGraph& g,
                                    const SpanningTree& tree) {
  const int n = g.node_count();
  const int m = g.arc_count();
  if (static_cast<int>(tree.is_tree_arc.size()) != m ||
      static_cast<int>(tree.parent.size()) != n)
    throw InvalidTree("spanning tree does not match the graph");
  int tree_arcs = 0;
  for (ArcId a = 0; a < m; ++a)
    if (tree.is_tree_arc[a]) ++tree_arcs;
  if (tree_arcs != n - 1)
    throw InvalidTree("spanning tree must have n-1 arcs");
  for (NodeId v = 0; v < n; ++v) {
    if (v == tree.root) {
      if (tree.parent[v] != -1)
        throw InvalidTree("root must have no parent");
      continue;
    }
    ArcId pa = tree.parent_arc[v];
    if (pa < 0 || pa >= m || !tree.is_tree_arc[pa])
      throw InvalidTree("parent arcs must be tree arcs");
    const Arc& a = g.arc(pa);
    if ((a.tail != v || a.head != tree.parent[v]) &&
        (a.head != v || a.tail != tree.parent[v]))
      throw InvalidTree("parent arc does not join node and parent");
  }

  CycleBasis basis;
  basis.source = BasisSource::SpanningTree;
  basis.mu = m - (n - 1);
  basis.B = Eigen::MatrixXi::Zero(basis.mu, m);
  int row = 0;
  for (ArcId e = 0; e < m; ++e) {
    if (tree.is_tree_arc[e]) continue;
    OrientedCycle cycle;
    cycle.entries = Eigen::VectorXi::Zero(m);
    cycle.defining_arc = e;
    cycle.entries(e) = +1;
    cycle.weight = g.arc(e).weight;
    // Close the cycle through the tree from head back to tail: climb both
    // endpoints to their lowest common ancestor. Steps up from the head run
    // with the climb; steps on the tail side are traversed downward.
    NodeId a = g.arc(e).head;
    NodeId b = g.arc(e).tail;
    auto step = [&](NodeId v, bool climb_direction) {
      ArcId pa = tree.parent_arc[v];
      NodeId p = tree.parent[v];
      // climb_direction: traversal runs v -> p; otherwise p -> v.
      int dir;
      if (climb_direction)
        dir = g.arc(pa).tail == v ? +1 : -1;
      else
        dir = g.arc(pa).tail == p ? +1 : -1;
      cycle.entries(pa) = dir;
      cycle.weight += g.arc(pa).weight;
      return p;
    };
    // Record the tail-side arcs while climbing, then flip traversal order by
    // marking them with the downward direction.
    while (tree.depth[a] > tree.depth[b]) a = step(a, true);
    while (tree.depth[b] > tree.depth[a]) b = step(b, false);
    while (a != b) {
      a = step(a, true);
      b = step(b, false);
    }
    for (ArcId k = 0; k < m; ++k)
      if (cycle.entries(k) != 0) cycle.arc_ids.push_back(k);
    basis.B.row(row) = cycle.entries.transpose();
    basis.cycles.push_back(std::move(cycle));
    ++row;
  }
  return basis;
}

inline CycleBasis fundamental_basis(const OrientedGraph& g) {
  return fundamental_basis(g, spanning_tree(g, 0));
}

/// Minimum-weight cycle basis construction. Candidate cycles are, for every
/// node v and arc (x, y), the closed walk shortest-path(v, x) + (x, y) +
/// shortest-path(y, v); walks that are not simple cycles are discarded,
/// duplicates are collapsed, and the basis is the greedy independent subset
/// in weight-ascending order (independence over GF(2)).
inline CycleBasis horton_basis(const OrientedGraph& g) {
  const int n = g.node_count();
  const int m = g.arc_count();
  if (!is_connected(g)) throw NotConnected("graph is not connected");
  const int mu = m - n + 1;

  std::vector<ShortestPathTree> trees;
  trees.reserve(static_cast<std::size_t>(n));
  for (NodeId v = 0; v < n; ++v) trees.push_back(shortest_path_tree(g, v));

  auto tree_path_arcs = [&](NodeId source, NodeId target,
                            std::vector<ArcId>& out) {
    NodeId c = target;
    while (c != source) {
      out.push_back(trees[source].parent_arc[c]);
      c = trees[source].parent[c];
    }
  };

  struct Candidate {
    double weight;
    std::vector<ArcId> key;  // sorted arc ids
  };
  std::map<std::vector<ArcId>, double> dedup;
  std::vector<ArcId> scratch;
  std::vector<int> degree(static_cast<std::size_t>(n));
  for (NodeId v = 0; v < n; ++v) {
    for (ArcId e = 0; e < m; ++e) {
      scratch.clear();
      tree_path_arcs(v, g.arc(e).tail, scratch);
      scratch.push_back(e);
      tree_path_arcs(v, g.arc(e).head, scratch);
      std::vector<ArcId> key = scratch;
      std::sort(key.begin(), key.end());
      if (std::adjacent_find(key.begin(), key.end()) != key.end())
        continue;  // an arc repeats: not a simple cycle
      std::fill(degree.begin(), degree.end(), 0);
      bool simple = true;
      for (ArcId a : key) {
        if (++degree[static_cast<std::size_t>(g.arc(a).tail)] > 2 ||
            ++degree[static_cast<std::size_t>(g.arc(a).head)] > 2) {
          simple = false;
          break;
        }
      }
      if (!simple) continue;
      double w = 0.0;
      for (ArcId a : key) w += g.arc(a).weight;
      auto [it, inserted] = dedup.emplace(std::move(key), w);
      if (!inserted && w < it->second) it->second = w;
    }
  }

  std::vector<Candidate> candidates;
  candidates.reserve(dedup.size());
  for (auto& [key, w] : dedup) candidates.push_back({w, key});
  std::sort(candidates.begin(), candidates.end(),
            [](const Candidate& a, const Candidate& b) {
              if (a.weight != b.weight) return a.weight < b.weight;
              return a.key < b.key;
            });

  CycleBasis basis;
  basis.source = BasisSource::Horton;
  basis.mu = mu;
  basis.B = Eigen::MatrixXi::Zero(mu, m);
  exact::Gf2Eliminator elim;
  auto try_add = [&](const std::vector<ArcId>& key) {
    if (elim.rank() >= mu) return;
    Eigen::VectorXi mask = Eigen::VectorXi::Zero(m);
    for (ArcId a : key) mask(a) = 1;
    if (!elim.add(exact::make_bit_row(mask))) return;
    OrientedCycle cycle = detail::orient_cycle(g, key);
    basis.B.row(elim.rank() - 1) = cycle.entries.transpose();
    basis.cycles.push_back(std::move(cycle));
  };
  for (const Candidate& c : candidates) {
    if (elim.rank() >= mu) break;
    try_add(c.key);
  }
  if (elim.rank() < mu) {
    // The candidate set can in principle fall short under degenerate
    // shortest-path ties; complete from a spanning-tree basis.
    CycleBasis fallback = fundamental_basis(g);
    std::vector<const OrientedCycle*> rest;
    for (const OrientedCycle& c : fallback.cycles) rest.push_back(&c);
    std::sort(rest.begin(), rest.end(),
              [](const OrientedCycle* a, const OrientedCycle* b) {
                if (a->weight != b->weight) return a->weight < b->weight;
                return a->arc_ids < b->arc_ids;
              });
    for (const OrientedCycle* c : rest) {
      if (elim.rank() >= mu) break;
      try_add(c->arc_ids);
    }
  }
  if (elim.rank() != mu)
    throw Error("failed to assemble a full cycle basis");
  return basis;
}

struct BasisCertificate {
  bool orthogonality = false;  // incidence * B^T == 0 exactly
  bool rank_ok = false;        // rank over GF(2) and over the rationals == mu
  bool ok() const { return orthogonality && rank_ok; }
};

/// Certifies a basis against an incidence matrix with exact arithmetic.
inline BasisCertificate verify_basis(const CycleBasis& basis,
                                     const IncidenceMatrix& inc) {
  if (basis.B.cols() != inc.cols())
    throw ShapeMismatch("basis and incidence arc counts differ");
  if (basis.B.rows() != basis.mu)
    throw ShapeMismatch("basis row count does not match mu");
  BasisCertificate cert;
  cert.orthogonality = exact::product_is_zero(inc, basis.B.transpose());
  cert.rank_ok = exact::gf2_rank(basis.B) == basis.mu &&
                 exact::integer_rank(basis.B) == basis.mu;
  return cert;
}

}  // namespace cycleflow
