#pragma once

#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "cycleflow/cycle_basis.hpp"
#include "cycleflow/errors.hpp"
#include "cycleflow/graph.hpp"
#include "cycleflow/solver.hpp"

namespace cycleflow {

/// Convex quadratic arc or generator cost quadratic*x^2 + linear*x.
struct QuadCost {
  double quadratic = 0.0;
  double linear = 0.0;

  double eval(double x) const { return quadratic * x * x + linear * x; }
};

/// Whether an injection vector is balanced. Integer-valued vectors must sum
/// to zero exactly; otherwise |sum| <= 1e-9 * l1-norm is accepted.
inline bool injections_balanced(const Eigen::VectorXd& f) {
  bool integral = true;
  for (int i = 0; i < f.size(); ++i)
    if (f(i) != std::floor(f(i))) {
      integral = false;
      break;
    }
  double sum = f.sum();
  if (integral) return sum == 0.0;
  return std::abs(sum) <= 1e-9 * f.cwiseAbs().sum();
}

/// Minimum-cost flow problem: route the injections through the network at
/// minimal quadratic cost, subject to conservation at every node and a box
/// on every arc flow.
struct FlowProblem {
  OrientedGraph graph;
  Eigen::VectorXd lower;
  Eigen::VectorXd upper;
  std::vector<QuadCost> cost;
  Eigen::VectorXd injections;

  void validate() const {
    const int m = graph.arc_count();
    const int n = graph.node_count();
    if (lower.size() != m || upper.size() != m ||
        static_cast<int>(cost.size()) != m)
      throw ShapeMismatch("arc data must match the arc count");
    if (injections.size() != n)
      throw ShapeMismatch("injections must match the node count");
    for (int k = 0; k < m; ++k) {
      if (lower(k) > upper(k))
        throw ValidationError("arcs", "arc " + std::to_string(k) +
                                          " has lower bound above upper");
      if (cost[static_cast<std::size_t>(k)].quadratic < 0.0)
        throw ValidationError("arcs", "arc " + std::to_string(k) +
                                          " has a concave cost");
    }
    if (!injections_balanced(injections))
      throw ValidationError("injections", "injections must sum to zero");
  }
};

/// Columns of the elementary particular solutions: column v routes one unit
/// from node v to the reference node along a shortest path, entries +1 where
/// the path runs along an arc's orientation and -1 against it.
struct ElementarySolutionSet {
  NodeId reference = 0;
  std::map<NodeId, Eigen::VectorXi> columns;
};

/// Elementary solutions for the given nodes. Each satisfies
/// incidence * column = unit injection at the node, -1 at the reference.
inline ElementarySolutionSet elementary_solutions(
    const OrientedGraph& g, NodeId reference,
    const std::set<NodeId>& needed) {
  const int n = g.node_count();
  if (reference < 0 || reference >= n)
    throw ValidationError("reference", "reference node out of range");
  if (!is_connected(g)) throw NotConnected("graph is not connected");
  ElementarySolutionSet set;
  set.reference = reference;
  for (NodeId v : needed) {
    if (v < 0 || v >= n)
      throw ValidationError("nodes", "needed node out of range");
    if (v == reference) continue;
    Eigen::VectorXi col = Eigen::VectorXi::Zero(g.arc_count());
    for (const PathStep& s : shortest_path(g, v, reference))
      col(s.arc) = s.direction;
    set.columns.emplace(v, std::move(col));
  }
  return set;
}

inline ElementarySolutionSet elementary_solutions(const OrientedGraph& g,
                                                  NodeId reference) {
  std::set<NodeId> all;
  for (NodeId v = 0; v < g.node_count(); ++v)
    if (v != reference) all.insert(v);
  return elementary_solutions(g, reference, all);
}

/// Superposition of elementary solutions: a flow that satisfies conservation
/// for the injection vector f (feasibility of the box is not promised).
inline Eigen::VectorXd particular_solution(const ElementarySolutionSet& elems,
                                           const Eigen::VectorXd& f) {
  if (!injections_balanced(f))
    throw UnbalancedInjection("injections must sum to zero");
  Eigen::VectorXd xp;
  bool sized = false;
  for (int v = 0; v < f.size(); ++v) {
    if (v == elems.reference || f(v) == 0.0) continue;
    auto it = elems.columns.find(v);
    if (it == elems.columns.end())
      throw MissingElementaryColumn("no elementary solution for node " +
                                    std::to_string(v));
    if (!sized) {
      xp = Eigen::VectorXd::Zero(it->second.size());
      sized = true;
    }
    xp += f(v) * it->second.cast<double>();
  }
  if (!sized) {
    if (!elems.columns.empty())
      xp = Eigen::VectorXd::Zero(elems.columns.begin()->second.size());
    else
      throw MissingElementaryColumn(
          "cannot size the particular solution without columns");
  }
  return xp;
}

/// Substitutes x = B' z + xp: maps cycle-space coordinates back to arc flows.
inline Eigen::VectorXd lift(const Eigen::VectorXd& z, const CycleBasis& basis,
                            const Eigen::VectorXd& xp) {
  if (z.size() != basis.mu)
    throw ShapeMismatch("cycle coordinates must have length mu");
  if (xp.size() != basis.B.cols())
    throw ShapeMismatch("particular solution must match the arc count");
  return basis.B.cast<double>().transpose() * z + xp;
}

/// The flow problem re-expressed over cycle-space coordinates z. The
/// conservation constraint is gone: every lifted point satisfies it by
/// construction, so only the box remains, composed with the affine map.
struct ReducedFlowProblem {
  CycleBasis basis;
  Eigen::VectorXd xp;
  Eigen::VectorXd lower;
  Eigen::VectorXd upper;
  std::vector<QuadCost> cost;
  Eigen::VectorXd injections;
};

/// Builds the reduced problem. Inputs must certify: the basis against the
/// problem's incidence matrix, and the particular solution against the
/// injections.
inline ReducedFlowProblem reduce(const FlowProblem& p, const CycleBasis& basis,
                                 const Eigen::VectorXd& xp) {
  p.validate();
  IncidenceMatrix inc = build_incidence(p.graph);
  if (basis.B.cols() != inc.cols() || xp.size() != inc.cols())
    throw ShapeMismatch("basis or particular solution does not match graph");
  if (!verify_basis(basis, inc).ok())
    throw UncertifiedInputs("cycle basis failed verification");
  Eigen::VectorXd residual = inc.cast<double>() * xp - p.injections;
  if (residual.cwiseAbs().maxCoeff() >
      1e-9 * std::max(1.0, p.injections.cwiseAbs().maxCoeff()))
    throw UncertifiedInputs("particular solution violates conservation");
  return ReducedFlowProblem{basis, xp, p.lower, p.upper, p.cost,
                            p.injections};
}

/// Full-space quadratic program: variables are the arc flows, conservation
/// rows are equalities, the box rows are the identity.
inline QpSpec full_flow_qp(const FlowProblem& p) {
  p.validate();
  const int m = p.graph.arc_count();
  const int n = p.graph.node_count();
  QuadraticBuilder obj(m);
  for (int k = 0; k < m; ++k)
    obj.add_affine_term({{k, 1.0}}, 0.0,
                        p.cost[static_cast<std::size_t>(k)].quadratic,
                        p.cost[static_cast<std::size_t>(k)].linear);
  ConstraintBuilder cons(m);
  IncidenceMatrix inc = build_incidence(p.graph);
  for (int i = 0; i < n; ++i) {
    std::vector<std::pair<int, double>> row;
    for (int k = 0; k < m; ++k)
      if (inc(i, k) != 0) row.push_back({k, static_cast<double>(inc(i, k))});
    cons.add_row(row, p.injections(i), p.injections(i));
  }
  for (int k = 0; k < m; ++k)
    cons.add_row({{k, 1.0}}, p.lower(k), p.upper(k));
  QpSpec spec;
  spec.P = obj.P;
  spec.q = obj.q;
  spec.constant = obj.constant;
  cons.fill(spec);
  return spec;
}

/// Reduced quadratic program over z: cost and box both composed with the
/// affine lift. Arcs on no cycle contribute constants and pure feasibility
/// rows.
inline QpSpec reduced_flow_qp(const ReducedFlowProblem& rp) {
  const int m = static_cast<int>(rp.xp.size());
  const int mu = rp.basis.mu;
  QuadraticBuilder obj(mu);
  ConstraintBuilder cons(mu);
  for (int k = 0; k < m; ++k) {
    std::vector<std::pair<int, double>> row;
    for (int i = 0; i < mu; ++i)
      if (rp.basis.B(i, k) != 0)
        row.push_back({i, static_cast<double>(rp.basis.B(i, k))});
    obj.add_affine_term(row, rp.xp(k),
                        rp.cost[static_cast<std::size_t>(k)].quadratic,
                        rp.cost[static_cast<std::size_t>(k)].linear);
    if (!row.empty() || rp.lower(k) > -kInf || rp.upper(k) < kInf)
      cons.add_row(row, rp.lower(k) - rp.xp(k), rp.upper(k) - rp.xp(k));
  }
  QpSpec spec;
  spec.P = obj.P;
  spec.q = obj.q;
  spec.constant = obj.constant;
  cons.fill(spec);
  return spec;
}

struct FlowSolution {
  Eigen::VectorXd x;
  std::optional<Eigen::VectorXd> z;
  SolveReport report;
};

/// Solves the problem in the full flow space.
inline FlowSolution solve_flow(const FlowProblem& p,
                               const SolverParams& params = {}) {
  SolveResult res = solve_qp(full_flow_qp(p), params);
  return FlowSolution{res.x, std::nullopt, res.report};
}

/// Solves the reduced problem and lifts the optimizer back to arc flows.
/// A cycle-free network leaves nothing to optimize: the particular solution
/// is the only conserving flow, and solving degenerates to checking it
/// against the box.
inline FlowSolution solve_reduced_flow(const ReducedFlowProblem& rp,
                                       const SolverParams& params = {}) {
  if (rp.basis.mu == 0) {
    FlowSolution sol;
    sol.x = rp.xp;
    sol.z = Eigen::VectorXd(0);
    sol.report.status = SolveStatus::Optimal;
    double viol = 0.0;
    for (int k = 0; k < rp.xp.size(); ++k) {
      viol = std::max(viol, rp.lower(k) - rp.xp(k));
      viol = std::max(viol, rp.xp(k) - rp.upper(k));
    }
    if (viol > 1e-9) sol.report.status = SolveStatus::Infeasible;
    sol.report.primal_residual = std::max(viol, 0.0);
    for (int k = 0; k < rp.xp.size(); ++k)
      sol.report.objective += rp.cost[static_cast<std::size_t>(k)].eval(rp.xp(k));
    return sol;
  }
  SolveResult res = solve_qp(reduced_flow_qp(rp), params);
  FlowSolution sol;
  sol.z = res.x;
  sol.x = lift(res.x, rp.basis, rp.xp);
  sol.report = res.report;
  return sol;
}

/// Whether some flow satisfies conservation and the box. Arc boxes are
/// shifted to start at zero (x = lower + t), which turns the question into a
/// standard maximum-flow saturation check against the node excesses.
inline bool check_capacity_feasibility(const FlowProblem& p) {
  p.validate();
  const int n = p.graph.node_count();
  const int m = p.graph.arc_count();
  for (int k = 0; k < m; ++k)
    if (!std::isfinite(p.lower(k)) || !std::isfinite(p.upper(k)))
      throw ValidationError("arcs",
                            "capacity feasibility needs finite arc bounds");
  Eigen::VectorXd excess = p.injections;
  for (int k = 0; k < m; ++k) {
    excess(p.graph.arc(k).tail) -= p.lower(k);
    excess(p.graph.arc(k).head) += p.lower(k);
  }
  std::set<NodeId> sources, sinks;
  double need = 0.0;
  const double tol = 1e-9 * std::max(1.0, excess.cwiseAbs().maxCoeff());
  for (NodeId v = 0; v < n; ++v) {
    if (excess(v) > tol) {
      sources.insert(v);
      need += excess(v);
    } else if (excess(v) < -tol) {
      sinks.insert(v);
    }
  }
  if (sources.empty()) return true;

  // Residual network over the shifted capacities, with per-node supply caps:
  // reuse max_flow by adding one arc per source/sink is not possible on the
  // value level, so run the same algorithm on a scratch graph with two extra
  // nodes encoded through capacity vectors.
  std::vector<Arc> arcs = p.graph.arcs();
  const int ss = n, tt = n + 1;
  std::vector<double> lo, up;
  for (int k = 0; k < m; ++k) {
    lo.push_back(0.0);
    up.push_back(p.upper(k) - p.lower(k));
  }
  for (NodeId v : sources) {
    arcs.push_back({ss, v, 1.0});
    lo.push_back(0.0);
    up.push_back(excess(v));
  }
  for (NodeId v : sinks) {
    arcs.push_back({v, tt, 1.0});
    lo.push_back(0.0);
    up.push_back(-excess(v));
  }
  OrientedGraph scratch(n + 2, arcs);
  Eigen::VectorXd lov = Eigen::Map<Eigen::VectorXd>(lo.data(), lo.size());
  Eigen::VectorXd upv = Eigen::Map<Eigen::VectorXd>(up.data(), up.size());
  MaxFlowResult r = max_flow(scratch, {ss}, {tt}, lov, upv);
  return r.value >= need - 1e-9 * std::max(1.0, need);
}

}  // namespace cycleflow
