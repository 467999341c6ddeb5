#pragma once

#include <algorithm>
#include <cmath>
#include <exception>
#include <limits>
#include <memory>
#include <mutex>
#include <set>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "cycleflow/cycle_basis.hpp"
#include "cycleflow/errors.hpp"
#include "cycleflow/exact.hpp"
#include "cycleflow/flow_reduction.hpp"
#include "cycleflow/graph.hpp"
#include "cycleflow/solver.hpp"

namespace cycleflow {

/// Communication topology derived from a cycle basis: one agent per cycle,
/// neighbors are cycles sharing at least one arc. Arcs on no cycle are
/// bridges; their flow is pinned to the particular solution.
struct CyberLayer {
  CycleBasis basis;
  Eigen::VectorXd particular;
  std::vector<std::vector<int>> neighbors;
  std::vector<std::vector<ArcId>> agent_arcs;
  std::vector<std::vector<int>> cycles_of_arc;
  std::vector<ArcId> bridge_arcs;

  int agent_count() const { return basis.mu; }
};

/// Derives the cyber layer from the basis matrix's sparsity pattern. The
/// basis is re-checked for internal consistency: the stored cycles must
/// match the matrix rows and the rows must be independent over GF(2).
inline CyberLayer build_cyber_layer(const CycleBasis& basis,
                                    const Eigen::VectorXd& xp) {
  const int mu = basis.mu;
  const int m = static_cast<int>(basis.B.cols());
  if (xp.size() != m)
    throw ShapeMismatch("particular solution must match the arc count");
  if (static_cast<int>(basis.cycles.size()) != mu || basis.B.rows() != mu)
    throw UncertifiedInputs("basis row count disagrees with its cycles");
  exact::Gf2Eliminator elim;
  for (int i = 0; i < mu; ++i) {
    std::vector<ArcId> support;
    for (int k = 0; k < m; ++k)
      if (basis.B(i, k) != 0) support.push_back(k);
    if (support != basis.cycles[static_cast<std::size_t>(i)].arc_ids)
      throw UncertifiedInputs("cycle arc list disagrees with basis row");
    if (!elim.add(exact::make_bit_row(basis.B.row(i))))
      throw UncertifiedInputs("basis rows are not independent");
  }

  CyberLayer layer;
  layer.basis = basis;
  layer.particular = xp;
  layer.neighbors.resize(mu);
  layer.agent_arcs.resize(mu);
  layer.cycles_of_arc.resize(m);
  std::vector<std::set<int>> nb(mu);
  for (int k = 0; k < m; ++k) {
    for (int i = 0; i < mu; ++i)
      if (basis.B(i, k) != 0) {
        layer.cycles_of_arc[static_cast<std::size_t>(k)].push_back(i);
        layer.agent_arcs[static_cast<std::size_t>(i)].push_back(k);
      }
    const auto& owners = layer.cycles_of_arc[static_cast<std::size_t>(k)];
    if (owners.empty()) layer.bridge_arcs.push_back(k);
    for (std::size_t a = 0; a < owners.size(); ++a)
      for (std::size_t b = a + 1; b < owners.size(); ++b) {
        nb[static_cast<std::size_t>(owners[a])].insert(owners[b]);
        nb[static_cast<std::size_t>(owners[b])].insert(owners[a]);
      }
  }
  for (int i = 0; i < mu; ++i)
    layer.neighbors[static_cast<std::size_t>(i)] =
        std::vector<int>(nb[static_cast<std::size_t>(i)].begin(),
                         nb[static_cast<std::size_t>(i)].end());
  return layer;
}

/// Whether the agent graph is connected (vacuously true without agents).
inline bool cyber_connected(const CyberLayer& layer) {
  const int mu = layer.agent_count();
  if (mu <= 1) return true;
  std::vector<char> seen(static_cast<std::size_t>(mu), 0);
  std::vector<int> stack{0};
  seen[0] = 1;
  int count = 1;
  while (!stack.empty()) {
    int i = stack.back();
    stack.pop_back();
    for (int j : layer.neighbors[static_cast<std::size_t>(i)])
      if (!seen[static_cast<std::size_t>(j)]) {
        seen[static_cast<std::size_t>(j)] = 1;
        ++count;
        stack.push_back(j);
      }
  }
  return count == mu;
}

/// One agent's slice of the network cost: each of its cycle's arcs weighted
/// by the reciprocal of how many cycles contain the arc, so that summing all
/// agents reproduces the total non-bridge cost exactly.
struct LocalObjective {
  std::vector<ArcId> arcs;
  std::vector<double> share;
  std::vector<QuadCost> cost;

  double eval_flows(const Eigen::VectorXd& x) const {
    double total = 0.0;
    for (std::size_t j = 0; j < arcs.size(); ++j)
      total += share[j] * cost[j].eval(x(arcs[j]));
    return total;
  }
};

inline std::vector<LocalObjective> split_costs(const CycleBasis& basis,
                                               const FlowProblem& problem) {
  problem.validate();
  const int m = problem.graph.arc_count();
  if (basis.B.cols() != m)
    throw ShapeMismatch("basis does not match the problem's arc count");
  std::vector<int> owners(static_cast<std::size_t>(m), 0);
  for (int k = 0; k < m; ++k)
    for (int i = 0; i < basis.mu; ++i)
      if (basis.B(i, k) != 0) ++owners[static_cast<std::size_t>(k)];
  std::vector<LocalObjective> out(static_cast<std::size_t>(basis.mu));
  for (int i = 0; i < basis.mu; ++i) {
    LocalObjective& lo = out[static_cast<std::size_t>(i)];
    for (int k = 0; k < m; ++k)
      if (basis.B(i, k) != 0) {
        lo.arcs.push_back(k);
        lo.share.push_back(1.0 / owners[static_cast<std::size_t>(k)]);
        lo.cost.push_back(problem.cost[static_cast<std::size_t>(k)]);
      }
  }
  return out;
}

/// Local copies and duals of one agent. `coordinates` lists the global
/// cycle indices the agent tracks (its own plus each neighbor's), ascending;
/// `y` and `dual` align with it.
struct AgentState {
  int id = 0;
  std::vector<int> coordinates;
  Eigen::VectorXd y;
  Eigen::VectorXd dual;
};

/// Per-cycle consensus weights, scaled to each coordinate's own objective
/// curvature so that differently priced networks need no retuning. Every
/// holder of a coordinate derives the same weight from shared data.
inline Eigen::VectorXd consensus_weights(const CycleBasis& basis,
                                         const FlowProblem& problem,
                                         double scale) {
  const int m = problem.graph.arc_count();
  std::vector<int> owners(static_cast<std::size_t>(m), 0);
  for (int k = 0; k < m; ++k)
    for (int i = 0; i < basis.mu; ++i)
      if (basis.B(i, k) != 0) ++owners[static_cast<std::size_t>(k)];
  Eigen::VectorXd rho(basis.mu);
  for (int i = 0; i < basis.mu; ++i) {
    double curvature = 0.0;
    for (int k = 0; k < m; ++k)
      if (basis.B(i, k) != 0)
        curvature += 2.0 *
                     problem.cost[static_cast<std::size_t>(k)].quadratic /
                     owners[static_cast<std::size_t>(k)];
    rho(i) = scale * curvature;
    if (!(rho(i) > 0.0))
      throw ValidationError("cost",
                            "distributed simulation needs strictly convex "
                            "arc costs");
  }
  return rho;
}

/// A consensus agent: holds the local objective slice, the capacity boxes of
/// its cycle's arcs, and a warm-started QP solver whose matrix never changes
/// across rounds (only the linear term and, on an injection switch, the
/// bounds move).
class Agent {
 public:
  Agent(int id, const CyberLayer& layer, const FlowProblem& problem,
        const Eigen::VectorXd& weights, const SolverParams& local_params) {
    if (weights.size() != layer.agent_count())
      throw ShapeMismatch("one consensus weight per cycle expected");
    if (weights.size() > 0 && !(weights.minCoeff() > 0.0))
      throw ValidationError("consensus_rho", "consensus weights must be positive");
    state_.id = id;
    state_.coordinates.push_back(id);
    for (int j : layer.neighbors[static_cast<std::size_t>(id)])
      state_.coordinates.push_back(j);
    std::sort(state_.coordinates.begin(), state_.coordinates.end());
    const int d = static_cast<int>(state_.coordinates.size());
    state_.y = Eigen::VectorXd::Zero(d);
    state_.dual = Eigen::VectorXd::Zero(d);
    shared_.assign(static_cast<std::size_t>(d), false);
    rho_.resize(d);
    for (int j = 0; j < d; ++j) {
      shared_[static_cast<std::size_t>(j)] =
          !layer.neighbors[static_cast<std::size_t>(state_.coordinates[j])]
               .empty();
      rho_(j) = weights(state_.coordinates[static_cast<std::size_t>(j)]);
    }

    std::vector<LocalObjective> slices = split_costs(layer.basis, problem);
    objective_ = slices[static_cast<std::size_t>(id)];
    for (std::size_t j = 0; j < objective_.arcs.size(); ++j) {
      if (!(objective_.cost[j].quadratic > 0.0))
        throw ValidationError(
            "cost", "distributed simulation needs strictly convex arc costs");
      ArcId k = objective_.arcs[j];
      std::vector<std::pair<int, double>> row;
      for (int c : layer.cycles_of_arc[static_cast<std::size_t>(k)])
        row.push_back({local_index(c), static_cast<double>(layer.basis.B(c, k))});
      rows_.push_back(std::move(row));
      arc_lower_.push_back(problem.lower(k));
      arc_upper_.push_back(problem.upper(k));
    }

    QuadraticBuilder obj(d);
    ConstraintBuilder cons(d);
    for (std::size_t j = 0; j < rows_.size(); ++j) {
      obj.add_affine_term(rows_[j], 0.0,
                          objective_.share[j] * objective_.cost[j].quadratic,
                          objective_.share[j] * objective_.cost[j].linear);
      cons.add_row(rows_[j], -kInf, kInf);
    }
    for (int j = 0; j < d; ++j)
      if (shared_[static_cast<std::size_t>(j)])
        obj.add_affine_term({{j, 1.0}}, 0.0, 0.5 * rho_(j), 0.0);

    QpSpec spec;
    spec.P = obj.P;
    spec.q = obj.q;
    spec.constant = 0.0;
    cons.fill(spec);
    base_q_no_particular_ = obj.q;
    solver_ = std::make_unique<QpSolver>(std::move(spec), local_params);
    set_particular(layer.particular);
  }

  const AgentState& state() const { return state_; }
  int id() const { return state_.id; }
  const LocalObjective& objective() const { return objective_; }
  const std::vector<int>& coordinates() const { return state_.coordinates; }
  bool coordinate_shared(int local) const {
    return shared_[static_cast<std::size_t>(local)];
  }

  int local_index(int cycle) const {
    auto it = std::lower_bound(state_.coordinates.begin(),
                               state_.coordinates.end(), cycle);
    if (it == state_.coordinates.end() || *it != cycle)
      throw Error("agent does not track cycle " + std::to_string(cycle));
    return static_cast<int>(it - state_.coordinates.begin());
  }

  /// New particular solution (injection switch): shifts the linear term and
  /// the capacity boxes, keeps the factorization and the iterate.
  void set_particular(const Eigen::VectorXd& xp) {
    // The bare linear cost is already folded into the base term; only the
    // particular-solution shift moves between phases.
    q_base_ = base_q_no_particular_;
    Eigen::VectorXd lower(static_cast<Eigen::Index>(rows_.size()));
    Eigen::VectorXd upper(static_cast<Eigen::Index>(rows_.size()));
    for (std::size_t j = 0; j < rows_.size(); ++j) {
      double xpk = xp(objective_.arcs[j]);
      for (const auto& [idx, c] : rows_[j])
        q_base_(idx) += objective_.share[j] * 2.0 *
                        objective_.cost[j].quadratic * xpk * c;
      lower(static_cast<Eigen::Index>(j)) = arc_lower_[j] - xpk;
      upper(static_cast<Eigen::Index>(j)) = arc_upper_[j] - xpk;
    }
    particular_.resize(static_cast<Eigen::Index>(objective_.arcs.size()));
    for (std::size_t j = 0; j < objective_.arcs.size(); ++j)
      particular_(static_cast<Eigen::Index>(j)) = xp(objective_.arcs[j]);
    solver_->set_bounds(lower, upper);
  }

  /// One local solve against the given consensus targets (aligned with
  /// `coordinates`). Shared coordinates are pulled toward
  /// target - dual/rho; unshared ones carry no consensus term.
  const Eigen::VectorXd& update(const Eigen::VectorXd& consensus) {
    const int d = static_cast<int>(state_.coordinates.size());
    if (consensus.size() != d)
      throw ShapeMismatch("consensus targets must align with coordinates");
    Eigen::VectorXd q = q_base_;
    for (int j = 0; j < d; ++j)
      if (shared_[static_cast<std::size_t>(j)])
        q(j) -= rho_(j) * consensus(j) - state_.dual(j);
    solver_->set_linear_term(q);
    SolveResult res = solver_->solve();
    if (res.report.status == SolveStatus::Infeasible)
      throw LocalInfeasible("agent " + std::to_string(state_.id) +
                            " has no feasible local flow");
    if (res.report.status != SolveStatus::Optimal)
      throw Error("agent " + std::to_string(state_.id) +
                  " local solve did not converge");
    state_.y = res.x;
    return state_.y;
  }

  void add_dual(int local, double delta) { state_.dual(local) += delta; }

  /// The agent's estimate of the flow on its j-th arc, lifted through its
  /// local copies.
  double arc_flow_estimate(std::size_t j) const {
    double x = particular_(static_cast<Eigen::Index>(j));
    for (const auto& [idx, c] : rows_[j]) x += c * state_.y(idx);
    return x;
  }

  double rho_at(int local) const { return rho_(local); }

 private:
  AgentState state_;
  LocalObjective objective_;
  std::vector<std::vector<std::pair<int, double>>> rows_;
  std::vector<double> arc_lower_, arc_upper_;
  std::vector<bool> shared_;
  Eigen::VectorXd base_q_no_particular_;
  Eigen::VectorXd q_base_;
  Eigen::VectorXd particular_;
  Eigen::VectorXd rho_;
  std::unique_ptr<QpSolver> solver_;
};

/// Spec-mandated entry point: one synchronous local solve.
inline const Eigen::VectorXd& local_subproblem(Agent& agent,
                                               const Eigen::VectorXd& consensus) {
  return agent.update(consensus);
}

struct Message {
  int from = 0;
  int to = 0;
  int coordinate = 0;
  double value = 0.0;
};

/// In-process mailbox enforcing message locality: posts are only accepted
/// between cyber-layer neighbors (or to self). Delivery drains a recipient's
/// inbox ordered by sender index, then coordinate.
class MessageBus {
 public:
  explicit MessageBus(const std::vector<std::vector<int>>& neighbors)
      : neighbors_(neighbors), inbox_(neighbors.size()) {}

  void post(int from, int to, int coordinate, double value) {
    if (from < 0 || to < 0 || from >= size() || to >= size())
      throw Error("message endpoint out of range");
    if (from != to) {
      const auto& nb = neighbors_[static_cast<std::size_t>(from)];
      if (!std::binary_search(nb.begin(), nb.end(), to))
        throw Error("message locality violated: agents " +
                    std::to_string(from) + " and " + std::to_string(to) +
                    " are not neighbors");
    }
    inbox_[static_cast<std::size_t>(to)].push_back(
        Message{from, to, coordinate, value});
    ++posted_;
  }

  std::vector<Message> deliver(int to) {
    auto& box = inbox_[static_cast<std::size_t>(to)];
    std::stable_sort(box.begin(), box.end(),
                     [](const Message& a, const Message& b) {
                       return a.from != b.from ? a.from < b.from
                                               : a.coordinate < b.coordinate;
                     });
    std::vector<Message> out = std::move(box);
    box.clear();
    return out;
  }

  std::size_t posted() const { return posted_; }
  int size() const { return static_cast<int>(neighbors_.size()); }

 private:
  std::vector<std::vector<int>> neighbors_;
  std::vector<std::vector<Message>> inbox_;
  std::size_t posted_ = 0;
};

struct InjectionSwitch {
  int round = 0;
  Eigen::VectorXd injections;
};
using Schedule = std::vector<InjectionSwitch>;

enum class SimStatus { Converged, MaxRounds };

inline const char* to_string(SimStatus s) {
  return s == SimStatus::Converged ? "converged" : "max_rounds";
}

/// Snapshot taken at the end of each synchronous round. `arc_error` holds
/// per-agent per-arc |estimate - reference| where defined, NaN elsewhere;
/// it stays NaN-filled when no reference was supplied.
struct RoundRecord {
  int round = 0;
  int phase = 0;
  bool switched = false;
  Eigen::VectorXd agent_disagreement;
  double max_disagreement = 0.0;
  double consensus_change = 0.0;
  double objective = 0.0;
  Eigen::VectorXd consensus;
  Eigen::VectorXd arc_flow;
  Eigen::MatrixXd arc_error;
};

struct RoundTrace {
  int agent_count = 0;
  int arc_count = 0;
  std::vector<RoundRecord> rounds;
};

struct SimulationResult {
  RoundTrace trace;
  Eigen::VectorXd consensus;
  std::vector<AgentState> agents;
  SimStatus status = SimStatus::MaxRounds;
  int rounds = 0;
  std::size_t messages = 0;
};

/// `consensus_rho` is a dimensionless multiplier on the curvature-matched
/// per-cycle weights computed by consensus_weights; 1 keeps the prox term on
/// the same scale as each agent's own cost.
struct SimulationParams {
  double consensus_rho = 0.25;
  double tolerance = 1e-6;
  int max_rounds = 5000;
  int workers = 1;
  SolverParams local = tight_local_params();

  static SolverParams tight_local_params() {
    SolverParams p;
    p.eps_abs = 1e-9;
    p.eps_rel = 1e-9;
    p.max_iterations = 200000;
    p.polish = true;
    return p;
  }

  void validate() const {
    if (!(consensus_rho > 0.0))
      throw ValidationError("consensus_rho", "must be positive");
    if (!(tolerance > 0.0)) throw ValidationError("tolerance", "must be positive");
    if (max_rounds < 1) throw ValidationError("max_rounds", "must be at least 1");
    if (workers < 1) throw ValidationError("workers", "must be at least 1");
  }
};

namespace detail {

inline void check_phase_feasible(const FlowProblem& problem,
                                 const CyberLayer& layer,
                                 const Eigen::VectorXd& xp, int phase) {
  for (ArcId k : layer.bridge_arcs)
    if (xp(k) < problem.lower(k) - 1e-9 || xp(k) > problem.upper(k) + 1e-9)
      throw LocalInfeasible("bridge arc " + std::to_string(k) +
                            " cannot carry its fixed flow in phase " +
                            std::to_string(phase));
}

}  // namespace detail

/// Synchronous consensus rounds. Every round: (1) all agents solve their
/// local subproblem against the current consensus, in parallel; (2) holders
/// post their copy of each shared coordinate to its owning agent; (3) owners
/// average and broadcast back; (4) every holder updates its dual. Injection
/// switches re-enter the same loop with a fresh particular solution and all
/// iterates kept warm. Convergence requires both the inter-copy disagreement
/// and the consensus movement to fall under the tolerance, and is only
/// declared once no further switches are pending.
inline SimulationResult run(const FlowProblem& problem, const CyberLayer& layer,
                            const ElementarySolutionSet& elems,
                            const SimulationParams& params,
                            const Schedule& schedule = {},
                            const std::vector<Eigen::VectorXd>& references = {}) {
  problem.validate();
  params.validate();
  const int mu = layer.agent_count();
  const int m = problem.graph.arc_count();
  if (layer.basis.B.cols() != m)
    throw ShapeMismatch("cyber layer does not match the problem's arc count");
  for (std::size_t s = 0; s < schedule.size(); ++s) {
    if (schedule[s].round < 1)
      throw ValidationError("schedule", "switch rounds start at 1");
    if (s > 0 && schedule[s].round <= schedule[s - 1].round)
      throw ValidationError("schedule", "switch rounds must be increasing");
    if (schedule[s].injections.size() != problem.graph.node_count())
      throw ValidationError("schedule", "injection vector has the wrong length");
  }

  Eigen::VectorXd xp = particular_solution(elems, problem.injections);
  detail::check_phase_feasible(problem, layer, xp, 0);
  if (!check_capacity_feasibility(problem))
    throw ValidationError("injections", "phase 0 is capacity infeasible");

  std::vector<Agent> agents;
  agents.reserve(static_cast<std::size_t>(mu));
  CyberLayer boot = layer;
  boot.particular = xp;
  Eigen::VectorXd weights =
      consensus_weights(layer.basis, problem, params.consensus_rho);
  for (int i = 0; i < mu; ++i)
    agents.emplace_back(i, boot, problem, weights, params.local);
  MessageBus bus(layer.neighbors);

  SimulationResult result;
  result.trace.agent_count = mu;
  result.trace.arc_count = m;
  Eigen::VectorXd w = Eigen::VectorXd::Zero(mu);
  int phase = 0;
  std::size_t next_switch = 0;
  const double nan = std::numeric_limits<double>::quiet_NaN();

  for (int round = 1; round <= params.max_rounds; ++round) {
    bool switched = false;
    while (next_switch < schedule.size() &&
           schedule[next_switch].round == round) {
      ++phase;
      switched = true;
      FlowProblem shifted = problem;
      shifted.injections = schedule[next_switch].injections;
      shifted.validate();
      if (!check_capacity_feasibility(shifted))
        throw ValidationError("schedule", "phase " + std::to_string(phase) +
                                              " is capacity infeasible");
      xp = particular_solution(elems, schedule[next_switch].injections);
      detail::check_phase_feasible(problem, layer, xp, phase);
      for (Agent& a : agents) a.set_particular(xp);
      ++next_switch;
    }

    // Compute phase: local solves, statically partitioned so results do not
    // depend on the worker count.
    auto solve_range = [&](int lo, int hi) {
      for (int i = lo; i < hi; ++i) {
        Eigen::VectorXd targets(agents[static_cast<std::size_t>(i)]
                                    .coordinates()
                                    .size());
        const auto& coords = agents[static_cast<std::size_t>(i)].coordinates();
        for (std::size_t j = 0; j < coords.size(); ++j)
          targets(static_cast<Eigen::Index>(j)) = w(coords[j]);
        agents[static_cast<std::size_t>(i)].update(targets);
      }
    };
    int workers = std::min(params.workers, std::max(mu, 1));
    if (workers <= 1 || mu <= 1) {
      solve_range(0, mu);
    } else {
      std::vector<std::thread> pool;
      int chunk = (mu + workers - 1) / workers;
      std::exception_ptr first_error;
      std::mutex error_mutex;
      for (int t = 0; t < workers; ++t) {
        int lo = t * chunk, hi = std::min(mu, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back([&, lo, hi] {
          try {
            solve_range(lo, hi);
          } catch (...) {
            std::lock_guard<std::mutex> g(error_mutex);
            if (!first_error) first_error = std::current_exception();
          }
        });
      }
      for (auto& th : pool) th.join();
      if (first_error) std::rethrow_exception(first_error);
    }

    // Exchange phase: holders post shared copies to the owner, ascending
    // agent order.
    for (int i = 0; i < mu; ++i) {
      const Agent& a = agents[static_cast<std::size_t>(i)];
      const auto& coords = a.coordinates();
      for (std::size_t j = 0; j < coords.size(); ++j) {
        int k = coords[j];
        if (k == i || !a.coordinate_shared(static_cast<int>(j))) continue;
        double contribution =
            a.state().y(static_cast<Eigen::Index>(j)) +
            a.state().dual(static_cast<Eigen::Index>(j)) /
                a.rho_at(static_cast<int>(j));
        bus.post(i, k, k, contribution);
      }
    }

    Eigen::VectorXd w_prev = w;
    for (int k = 0; k < mu; ++k) {
      Agent& owner = agents[static_cast<std::size_t>(k)];
      int own_local = owner.local_index(k);
      if (!owner.coordinate_shared(own_local)) {
        w(k) = owner.state().y(own_local);
        continue;
      }
      double sum = owner.state().y(own_local) +
                   owner.state().dual(own_local) / owner.rho_at(own_local);
      int count = 1;
      for (const Message& msg : bus.deliver(k)) {
        sum += msg.value;
        ++count;
      }
      w(k) = sum / count;
    }
    // Broadcast wave, kept separate so owner averages never see broadcast
    // traffic from owners earlier in the delivery order.
    for (int k = 0; k < mu; ++k) {
      if (!agents[static_cast<std::size_t>(k)].coordinate_shared(
              agents[static_cast<std::size_t>(k)].local_index(k)))
        continue;
      for (int j : layer.neighbors[static_cast<std::size_t>(k)])
        bus.post(k, j, k, w(k));
    }
    for (int i = 0; i < mu; ++i) {
      Agent& a = agents[static_cast<std::size_t>(i)];
      for (const Message& msg : bus.deliver(i)) {
        int local = a.local_index(msg.coordinate);
        a.add_dual(local,
                   a.rho_at(local) * (a.state().y(local) - msg.value));
      }
      int own_local = a.local_index(i);
      if (a.coordinate_shared(own_local))
        a.add_dual(own_local,
                   a.rho_at(own_local) * (a.state().y(own_local) - w(i)));
    }

    RoundRecord rec;
    rec.round = round;
    rec.phase = phase;
    rec.switched = switched;
    rec.agent_disagreement = Eigen::VectorXd::Zero(mu);
    for (int i = 0; i < mu; ++i) {
      const Agent& a = agents[static_cast<std::size_t>(i)];
      const auto& coords = a.coordinates();
      double d = 0.0;
      for (std::size_t j = 0; j < coords.size(); ++j)
        d = std::max(d, std::abs(a.state().y(static_cast<Eigen::Index>(j)) -
                                 w(coords[j])));
      rec.agent_disagreement(i) = d;
    }
    rec.max_disagreement =
        mu > 0 ? rec.agent_disagreement.maxCoeff() : 0.0;
    rec.consensus_change =
        mu > 0 ? (w - w_prev).cwiseAbs().maxCoeff() : 0.0;
    rec.consensus = w;
    rec.arc_flow = lift(w, layer.basis, xp);
    rec.objective = 0.0;
    for (int k = 0; k < m; ++k)
      rec.objective +=
          problem.cost[static_cast<std::size_t>(k)].eval(rec.arc_flow(k));
    rec.arc_error = Eigen::MatrixXd::Constant(mu, m, nan);
    if (static_cast<std::size_t>(phase) < references.size() &&
        references[static_cast<std::size_t>(phase)].size() == m) {
      const Eigen::VectorXd& ref = references[static_cast<std::size_t>(phase)];
      for (int i = 0; i < mu; ++i) {
        const Agent& a = agents[static_cast<std::size_t>(i)];
        for (std::size_t j = 0; j < a.objective().arcs.size(); ++j)
          rec.arc_error(i, a.objective().arcs[j]) =
              std::abs(a.arc_flow_estimate(j) - ref(a.objective().arcs[j]));
      }
    }
    result.trace.rounds.push_back(std::move(rec));
    result.rounds = round;

    bool pending = next_switch < schedule.size();
    const RoundRecord& last = result.trace.rounds.back();
    if (!pending && last.max_disagreement <= params.tolerance &&
        last.consensus_change <= params.tolerance) {
      result.status = SimStatus::Converged;
      break;
    }
  }

  result.consensus = w;
  for (const Agent& a : agents) result.agents.push_back(a.state());
  result.messages = bus.posted();
  return result;
}

/// Convenience overload building the layer from the basis.
inline SimulationResult run(const FlowProblem& problem, const CycleBasis& basis,
                            const ElementarySolutionSet& elems,
                            const SimulationParams& params,
                            const Schedule& schedule = {},
                            const std::vector<Eigen::VectorXd>& references = {}) {
  Eigen::VectorXd xp = particular_solution(elems, problem.injections);
  return run(problem, build_cyber_layer(basis, xp), elems, params, schedule,
             references);
}

}  // namespace cycleflow
