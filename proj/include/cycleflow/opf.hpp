#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "cycleflow/cycle_basis.hpp"
#include "cycleflow/errors.hpp"
#include "cycleflow/flow_reduction.hpp"
#include "cycleflow/graph.hpp"
#include "cycleflow/solver.hpp"

namespace cycleflow {

/// Per-node generator fleet: box on output and a quadratic generation cost.
/// Nodes without generation carry a degenerate [0, 0] box.
struct GeneratorData {
  Eigen::VectorXd min_output;
  Eigen::VectorXd max_output;
  std::vector<QuadCost> cost;
};

/// Per-node storage with linear dynamics level' = retention * level + charge.
/// Charge is signed: negative values discharge into the grid.
struct StorageData {
  Eigen::VectorXd level_min;
  Eigen::VectorXd level_max;
  Eigen::VectorXd charge_min;
  Eigen::VectorXd charge_max;
  Eigen::VectorXd initial_level;
  Eigen::VectorXd retention;
};

/// Multi-period DC optimal power flow with storage. Loads are nonpositive
/// injections, one column per period.
struct OpfProblem {
  OrientedGraph graph;
  Eigen::VectorXd susceptance;
  Eigen::VectorXd line_limit;
  GeneratorData generators;
  StorageData storage;
  Eigen::MatrixXd loads;
  int horizon = 0;
  std::optional<Eigen::VectorXd> terminal_level;

  void validate() const {
    const int n = graph.node_count();
    const int m = graph.arc_count();
    if (susceptance.size() != m || line_limit.size() != m)
      throw ShapeMismatch("arc data must match the arc count");
    if (generators.min_output.size() != n ||
        generators.max_output.size() != n ||
        static_cast<int>(generators.cost.size()) != n)
      throw ShapeMismatch("generator data must match the node count");
    if (storage.level_min.size() != n || storage.level_max.size() != n ||
        storage.charge_min.size() != n || storage.charge_max.size() != n ||
        storage.initial_level.size() != n || storage.retention.size() != n)
      throw ShapeMismatch("storage data must match the node count");
    if (horizon < 1)
      throw ValidationError("horizon", "horizon must be at least one period");
    if (loads.rows() != n || loads.cols() != horizon)
      throw HorizonMismatch("loads must be nodes x horizon");
    if (terminal_level && terminal_level->size() != n)
      throw ShapeMismatch("terminal level must match the node count");
    for (int k = 0; k < m; ++k) {
      if (!(susceptance(k) > 0.0))
        throw ValidationError("susceptance", "susceptance must be positive");
      if (!(line_limit(k) >= 0.0))
        throw ValidationError("line_limit", "line limits must be nonnegative");
    }
    for (int v = 0; v < n; ++v) {
      if (generators.min_output(v) > generators.max_output(v))
        throw ValidationError("generators", "generator box is empty");
      if (generators.cost[static_cast<std::size_t>(v)].quadratic < 0.0)
        throw ValidationError("generators", "generation cost is concave");
      if (storage.level_min(v) > storage.level_max(v) ||
          storage.charge_min(v) > storage.charge_max(v))
        throw ValidationError("storage", "storage box is empty");
      if (!(storage.retention(v) > 0.0) || storage.retention(v) > 1.0)
        throw ValidationError("storage", "retention must lie in (0, 1]");
      if (storage.initial_level(v) < storage.level_min(v) ||
          storage.initial_level(v) > storage.level_max(v))
        throw ValidationError("storage", "initial level outside its box");
      if (terminal_level && ((*terminal_level)(v) < storage.level_min(v) ||
                             (*terminal_level)(v) > storage.level_max(v)))
        throw ValidationError("storage", "terminal level outside its box");
    }
    for (int t = 0; t < horizon; ++t)
      for (int v = 0; v < n; ++v)
        if (loads(v, t) > 0.0)
          throw ValidationError("loads", "loads must be nonpositive");
  }
};

/// Index layout of the reduced multi-period variables. Each period owns a
/// contiguous block [cycle coords | generation | charge | angles without the
/// reference node].
struct OpfLayout {
  int mu = 0;
  int n = 0;
  int horizon = 0;
  NodeId reference = 0;

  int per_period() const { return mu + 2 * n + (n - 1); }
  int total() const { return per_period() * horizon; }
  int z(int t, int i) const { return t * per_period() + i; }
  int generation(int t, NodeId v) const { return t * per_period() + mu + v; }
  int charge(int t, NodeId v) const { return t * per_period() + mu + n + v; }
  int theta(int t, NodeId v) const {
    return t * per_period() + mu + 2 * n + (v < reference ? v : v - 1);
  }
};

struct ReducedOpfProblem {
  OpfProblem problem;
  CycleBasis basis;
  ElementarySolutionSet elems;
  OpfLayout layout;
};

/// Certifies the basis and the elementary solutions against the problem's
/// network, then fixes the reduced variable layout. The elementary set must
/// provide a column for every non-reference node, each conserving exactly
/// one unit from its node to the reference.
inline ReducedOpfProblem reduce_opf(const OpfProblem& p, const CycleBasis& basis,
                             const ElementarySolutionSet& elems) {
  p.validate();
  const int n = p.graph.node_count();
  IncidenceMatrix inc = build_incidence(p.graph);
  if (!verify_basis(basis, inc).ok())
    throw UncertifiedInputs("cycle basis failed verification");
  for (NodeId v = 0; v < n; ++v) {
    if (v == elems.reference) continue;
    auto it = elems.columns.find(v);
    if (it == elems.columns.end())
      throw MissingElementaryColumn("no elementary solution for node " +
                                    std::to_string(v));
    if (it->second.size() != inc.cols())
      throw ShapeMismatch("elementary solution has the wrong length");
    Eigen::VectorXi image = inc * it->second;
    for (NodeId u = 0; u < n; ++u) {
      int want = (u == v) ? 1 : (u == elems.reference ? -1 : 0);
      if (image(u) != want)
        throw UncertifiedInputs("elementary solution for node " +
                                std::to_string(v) +
                                " violates conservation");
    }
  }
  ReducedOpfProblem r;
  r.problem = p;
  r.basis = basis;
  r.elems = elems;
  r.layout = OpfLayout{basis.mu, n, p.horizon, elems.reference};
  return r;
}

namespace detail {

/// Arc flow in period t as an affine function of the reduced variables:
/// the cycle term plus, through the particular solution, every generation
/// and charge variable at non-reference nodes. Returns the coefficient rows
/// and the constant contributed by the loads.
inline std::pair<std::vector<std::pair<int, double>>, double> reduced_arc_flow(
    const ReducedOpfProblem& r, int t, int k) {
  std::vector<std::pair<int, double>> row;
  const OpfLayout& L = r.layout;
  for (int i = 0; i < L.mu; ++i)
    if (r.basis.B(i, k) != 0)
      row.push_back({L.z(t, i), static_cast<double>(r.basis.B(i, k))});
  double constant = 0.0;
  for (const auto& [v, col] : r.elems.columns) {
    if (col(k) == 0) continue;
    double c = static_cast<double>(col(k));
    row.push_back({L.generation(t, v), c});
    row.push_back({L.charge(t, v), -c});
    constant += c * r.problem.loads(v, t);
  }
  return {std::move(row), constant};
}

inline void add_storage_rows(const OpfProblem& p, ConstraintBuilder& cons,
                             int charge_index_base, int stride) {
  const int n = p.graph.node_count();
  for (NodeId v = 0; v < n; ++v) {
    double lam = p.storage.retention(v);
    double decayed = p.storage.initial_level(v);
    std::vector<std::pair<int, double>> row;
    for (int t = 0; t < p.horizon; ++t) {
      decayed *= lam;
      for (auto& term : row) term.second *= lam;
      row.push_back({charge_index_base + t * stride + v, 1.0});
      if (t + 1 == p.horizon && p.terminal_level) {
        double want = (*p.terminal_level)(v);
        cons.add_row(row, want - decayed, want - decayed);
      } else {
        cons.add_row(row, p.storage.level_min(v) - decayed,
                     p.storage.level_max(v) - decayed);
      }
    }
  }
}

inline void add_opf_objective(const OpfProblem& p, QuadraticBuilder& obj,
                              int gen_index_base, int stride) {
  const double scale = 1.0 / p.horizon;
  for (int t = 0; t < p.horizon; ++t)
    for (NodeId v = 0; v < p.graph.node_count(); ++v) {
      const QuadCost& c = p.generators.cost[static_cast<std::size_t>(v)];
      if (c.quadratic == 0.0 && c.linear == 0.0) continue;
      obj.add_affine_term({{gen_index_base + t * stride + v, 1.0}}, 0.0,
                          scale * c.quadratic, scale * c.linear);
    }
}

}  // namespace detail

/// Reduced quadratic program. Conservation holds by construction; the
/// remaining equalities are one balance row per period and the DC relation
/// per arc and period tying angles to the lifted flow.
inline QpSpec reduced_opf_qp(const ReducedOpfProblem& r) {
  const OpfProblem& p = r.problem;
  const OpfLayout& L = r.layout;
  const int n = L.n;
  const int m = p.graph.arc_count();
  QuadraticBuilder obj(L.total());
  ConstraintBuilder cons(L.total());
  detail::add_opf_objective(p, obj, L.mu, L.per_period());

  for (int t = 0; t < p.horizon; ++t) {
    // Total generation plus charge must absorb the period's load, else no
    // conserving lift exists.
    std::vector<std::pair<int, double>> balance;
    double load_sum = 0.0;
    for (NodeId v = 0; v < n; ++v) {
      balance.push_back({L.generation(t, v), 1.0});
      balance.push_back({L.charge(t, v), -1.0});
      load_sum += p.loads(v, t);
    }
    cons.add_row(balance, -load_sum, -load_sum);

    for (int k = 0; k < m; ++k) {
      auto [flow, constant] = detail::reduced_arc_flow(r, t, k);
      cons.add_row(flow, -p.line_limit(k) - constant,
                   p.line_limit(k) - constant);
      const Arc& a = p.graph.arc(k);
      std::vector<std::pair<int, double>> dc = flow;
      for (auto& term : dc) term.second = -term.second;
      if (a.tail != L.reference)
        dc.push_back({L.theta(t, a.tail), p.susceptance(k)});
      if (a.head != L.reference)
        dc.push_back({L.theta(t, a.head), -p.susceptance(k)});
      cons.add_row(dc, constant, constant);
    }
    for (NodeId v = 0; v < n; ++v) {
      cons.add_row({{L.generation(t, v), 1.0}}, p.generators.min_output(v),
                   p.generators.max_output(v));
      cons.add_row({{L.charge(t, v), 1.0}}, p.storage.charge_min(v),
                   p.storage.charge_max(v));
    }
  }
  detail::add_storage_rows(p, cons, L.mu + n, L.per_period());
  QpSpec spec;
  spec.P = obj.P;
  spec.q = obj.q;
  spec.constant = obj.constant;
  cons.fill(spec);
  return spec;
}

/// Full-space oracle with explicit arc flows and per-node conservation
/// equalities. Variable block per period: [flows | generation | charge |
/// angles without the reference].
inline QpSpec full_opf_qp(const OpfProblem& p, NodeId reference) {
  p.validate();
  const int n = p.graph.node_count();
  const int m = p.graph.arc_count();
  if (reference < 0 || reference >= n)
    throw ValidationError("reference", "reference node out of range");
  const int stride = m + 2 * n + (n - 1);
  auto xi = [&](int t, int k) { return t * stride + k; };
  auto gi = [&](int t, NodeId v) { return t * stride + m + v; };
  auto ui = [&](int t, NodeId v) { return t * stride + m + n + v; };
  auto ti = [&](int t, NodeId v) {
    return t * stride + m + 2 * n + (v < reference ? v : v - 1);
  };
  QuadraticBuilder obj(stride * p.horizon);
  ConstraintBuilder cons(stride * p.horizon);
  detail::add_opf_objective(p, obj, m, stride);
  IncidenceMatrix inc = build_incidence(p.graph);

  for (int t = 0; t < p.horizon; ++t) {
    for (NodeId v = 0; v < n; ++v) {
      std::vector<std::pair<int, double>> row;
      for (int k = 0; k < m; ++k)
        if (inc(v, k) != 0)
          row.push_back({xi(t, k), static_cast<double>(inc(v, k))});
      row.push_back({gi(t, v), -1.0});
      row.push_back({ui(t, v), 1.0});
      cons.add_row(row, p.loads(v, t), p.loads(v, t));
    }
    for (int k = 0; k < m; ++k) {
      const Arc& a = p.graph.arc(k);
      std::vector<std::pair<int, double>> dc;
      dc.push_back({xi(t, k), -1.0});
      if (a.tail != reference) dc.push_back({ti(t, a.tail), p.susceptance(k)});
      if (a.head != reference) dc.push_back({ti(t, a.head), -p.susceptance(k)});
      cons.add_row(dc, 0.0, 0.0);
      cons.add_row({{xi(t, k), 1.0}}, -p.line_limit(k), p.line_limit(k));
    }
    for (NodeId v = 0; v < n; ++v) {
      cons.add_row({{gi(t, v), 1.0}}, p.generators.min_output(v),
                   p.generators.max_output(v));
      cons.add_row({{ui(t, v), 1.0}}, p.storage.charge_min(v),
                   p.storage.charge_max(v));
    }
  }
  detail::add_storage_rows(p, cons, m + n, stride);
  QpSpec spec;
  spec.P = obj.P;
  spec.q = obj.q;
  spec.constant = obj.constant;
  cons.fill(spec);
  return spec;
}

/// Trajectories of a solved instance. Angles include the pinned reference
/// row; levels carry the initial level in column zero, so they have one
/// column more than the horizon.
struct OpfSolution {
  Eigen::MatrixXd flows;
  Eigen::MatrixXd generation;
  Eigen::MatrixXd charge;
  Eigen::MatrixXd theta;
  Eigen::MatrixXd levels;
  Eigen::MatrixXd z;
  SolveReport report;
};

inline OpfSolution solve_opf(const ReducedOpfProblem& r,
                             const SolverParams& params = {}) {
  const OpfProblem& p = r.problem;
  const OpfLayout& L = r.layout;
  const int n = L.n;
  const int m = p.graph.arc_count();
  SolveResult res = solve_qp(reduced_opf_qp(r), params);
  OpfSolution sol;
  sol.report = res.report;
  sol.flows.resize(m, p.horizon);
  sol.generation.resize(n, p.horizon);
  sol.charge.resize(n, p.horizon);
  sol.theta.resize(n, p.horizon);
  sol.levels.resize(n, p.horizon + 1);
  sol.z.resize(L.mu, p.horizon);
  for (int t = 0; t < p.horizon; ++t) {
    for (int i = 0; i < L.mu; ++i) sol.z(i, t) = res.x(L.z(t, i));
    for (NodeId v = 0; v < n; ++v) {
      sol.generation(v, t) = res.x(L.generation(t, v));
      sol.charge(v, t) = res.x(L.charge(t, v));
      sol.theta(v, t) = (v == L.reference) ? 0.0 : res.x(L.theta(t, v));
    }
    for (int k = 0; k < m; ++k) {
      auto [row, constant] = detail::reduced_arc_flow(r, t, k);
      double x = constant;
      for (const auto& [idx, c] : row) x += c * res.x(idx);
      sol.flows(k, t) = x;
    }
  }
  sol.levels.col(0) = p.storage.initial_level;
  for (int t = 0; t < p.horizon; ++t)
    sol.levels.col(t + 1) = p.storage.retention.cwiseProduct(
                                sol.levels.col(t)) +
                            sol.charge.col(t);
  return sol;
}

/// Worst-case violations of the physical constraints under a candidate
/// solution, each as an absolute residual.
struct OpfResiduals {
  double conservation = 0.0;
  double storage_dynamics = 0.0;
  double dc = 0.0;
  double bounds = 0.0;
  double balance = 0.0;

  double max() const {
    return std::max({conservation, storage_dynamics, dc, bounds, balance});
  }
};

inline OpfResiduals validate_opf_solution(const OpfProblem& p,
                                          const OpfSolution& sol) {
  p.validate();
  const int n = p.graph.node_count();
  const int m = p.graph.arc_count();
  OpfResiduals res;
  IncidenceMatrix inc = build_incidence(p.graph);
  Eigen::MatrixXd incd = inc.cast<double>();
  for (int t = 0; t < p.horizon; ++t) {
    Eigen::VectorXd f =
        sol.generation.col(t) + p.loads.col(t) - sol.charge.col(t);
    Eigen::VectorXd cons = incd * sol.flows.col(t) - f;
    res.conservation = std::max(res.conservation, cons.cwiseAbs().maxCoeff());
    res.balance = std::max(res.balance, std::abs(f.sum()));
    for (int k = 0; k < m; ++k) {
      const Arc& a = p.graph.arc(k);
      double want =
          p.susceptance(k) * (sol.theta(a.tail, t) - sol.theta(a.head, t));
      res.dc = std::max(res.dc, std::abs(want - sol.flows(k, t)));
      res.bounds = std::max(res.bounds,
                            std::abs(sol.flows(k, t)) - p.line_limit(k));
    }
    for (NodeId v = 0; v < n; ++v) {
      res.bounds = std::max(
          {res.bounds, p.generators.min_output(v) - sol.generation(v, t),
           sol.generation(v, t) - p.generators.max_output(v),
           p.storage.charge_min(v) - sol.charge(v, t),
           sol.charge(v, t) - p.storage.charge_max(v),
           p.storage.level_min(v) - sol.levels(v, t + 1),
           sol.levels(v, t + 1) - p.storage.level_max(v)});
      double next = p.storage.retention(v) * sol.levels(v, t) +
                    sol.charge(v, t);
      res.storage_dynamics =
          std::max(res.storage_dynamics, std::abs(next - sol.levels(v, t + 1)));
    }
  }
  if (p.terminal_level)
    res.bounds = std::max(
        res.bounds,
        (sol.levels.col(p.horizon) - *p.terminal_level).cwiseAbs().maxCoeff());
  res.bounds = std::max(res.bounds, 0.0);
  return res;
}

/// Objective value of a candidate trajectory under the generation costs.
inline double opf_objective(const OpfProblem& p, const Eigen::MatrixXd& gen) {
  double total = 0.0;
  for (int t = 0; t < p.horizon; ++t)
    for (NodeId v = 0; v < p.graph.node_count(); ++v)
      total += p.generators.cost[static_cast<std::size_t>(v)].eval(gen(v, t));
  return total / p.horizon;
}

}  // namespace cycleflow
