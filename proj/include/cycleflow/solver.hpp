#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <queue>
#include <set>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "cycleflow/errors.hpp"
#include "cycleflow/graph.hpp"

namespace cycleflow {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// Quadratic program in the form
///   minimize    1/2 x' P x + q' x + constant
///   subject to  lower <= A x <= upper
/// with P symmetric positive semidefinite. Equality rows use
/// lower == upper.
struct QpSpec {
  Eigen::MatrixXd P;
  Eigen::VectorXd q;
  double constant = 0.0;
  Eigen::MatrixXd A;
  Eigen::VectorXd lower;
  Eigen::VectorXd upper;

  int dimension() const { return static_cast<int>(q.size()); }
  int rows() const { return static_cast<int>(lower.size()); }

  double objective(const Eigen::VectorXd& x) const {
    return 0.5 * x.dot(P * x) + q.dot(x) + constant;
  }
};

struct SolverParams {
  double rho = 1.0;       // dual step size, fixed for the whole solve
  double sigma = 1e-6;    // proximal regularization of the x update
  double alpha = 1.6;     // over-relaxation, must lie in [1, 1.8]
  double eps_abs = 1e-8;
  double eps_rel = 1e-6;
  int max_iterations = 50000;
  bool polish = true;
};

enum class SolveStatus { Optimal, MaxIterations, Infeasible };

inline const char* to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::Optimal: return "optimal";
    case SolveStatus::MaxIterations: return "max_iterations";
    case SolveStatus::Infeasible: return "infeasible";
  }
  return "unknown";
}

struct SolveReport {
  SolveStatus status = SolveStatus::MaxIterations;
  int iterations = 0;
  double objective = 0.0;
  double primal_residual = 0.0;
  double dual_residual = 0.0;
  bool polished = false;
  std::vector<double> primal_history;
  std::vector<double> dual_history;
  std::vector<double> objective_history;
};

struct SolveResult {
  Eigen::VectorXd x;
  SolveReport report;
};

/// Operator-splitting solver for box-constrained quadratic programs. Each
/// iteration alternates an equality-constrained quadratic minimization (one
/// back-substitution against a cached factorization) with a projection onto
/// the constraint box, followed by a scaled dual update. The step size is
/// fixed, so the factored matrix never changes; updating the linear term or
/// the bounds between solves keeps the factorization valid, which makes
/// repeated warm-started solves cheap.
class QpSolver {
 public:
  explicit QpSolver(QpSpec spec, SolverParams params = {})
      : spec_(std::move(spec)), p_(params) {
    if (!(p_.alpha >= 1.0 && p_.alpha <= 1.8))
      throw ValidationError("alpha", "over-relaxation must lie in [1, 1.8]");
    if (!(p_.rho > 0.0) || !(p_.sigma > 0.0))
      throw ValidationError("rho", "step sizes must be positive");
    if (p_.max_iterations < 1)
      throw ValidationError("max_iterations", "must be at least 1");
    const int d = spec_.dimension();
    const int r = spec_.rows();
    if (spec_.P.rows() != d || spec_.P.cols() != d)
      throw ShapeMismatch("P must be square and match q");
    if (spec_.A.rows() != r || (r > 0 && spec_.A.cols() != d))
      throw ShapeMismatch("A must match the bound vectors");
    if (spec_.upper.size() != r)
      throw ShapeMismatch("bound vectors must agree in length");
    for (int i = 0; i < r; ++i)
      if (spec_.lower(i) > spec_.upper(i))
        throw ValidationError("bounds", "lower bound exceeds upper bound");
    if (r == 0) spec_.A = Eigen::MatrixXd::Zero(0, d);
    spec_.P = ((spec_.P + spec_.P.transpose()) * 0.5).eval();
    // Equality rows get a stiffer step; the weights are fixed at
    // construction, never adapted.
    rho_vec_ = Eigen::VectorXd::Constant(r, p_.rho);
    for (int i = 0; i < r; ++i)
      if (spec_.lower(i) == spec_.upper(i)) rho_vec_(i) = p_.rho * 1e3;
    Eigen::MatrixXd m =
        spec_.P + p_.sigma * Eigen::MatrixXd::Identity(d, d) +
        spec_.A.transpose() * rho_vec_.asDiagonal() * spec_.A;
    kkt_.compute(m);
    if (kkt_.info() != Eigen::Success)
      throw Error("failed to factor the iteration matrix");
    reset_state();
  }

  const QpSpec& spec() const { return spec_; }

  void set_linear_term(const Eigen::VectorXd& q) {
    if (q.size() != spec_.q.size())
      throw ShapeMismatch("linear term size changed");
    spec_.q = q;
  }

  void set_bounds(const Eigen::VectorXd& lower, const Eigen::VectorXd& upper) {
    if (lower.size() != spec_.lower.size() ||
        upper.size() != spec_.upper.size())
      throw ShapeMismatch("bound size changed");
    for (int i = 0; i < spec_.rows(); ++i) {
      if (lower(i) > upper(i))
        throw ValidationError("bounds", "lower bound exceeds upper bound");
      if ((lower(i) == upper(i)) != (spec_.lower(i) == spec_.upper(i)))
        throw ValidationError(
            "bounds", "equality pattern must not change between solves");
    }
    spec_.lower = lower;
    spec_.upper = upper;
  }

  void reset_state() {
    x_ = Eigen::VectorXd::Zero(spec_.dimension());
    zc_ = Eigen::VectorXd::Zero(spec_.rows());
    yc_ = Eigen::VectorXd::Zero(spec_.rows());
  }

  /// Runs the splitting iteration from the current internal state (zero
  /// after construction or reset_state, otherwise the last solution, which
  /// gives warm starts for free).
  SolveResult solve() {
    const int d = spec_.dimension();
    const int r = spec_.rows();
    SolveResult res;
    if (d == 0) {
      res.x = Eigen::VectorXd(0);
      res.report.status = SolveStatus::Optimal;
      res.report.objective = spec_.constant;
      return res;
    }
    SolveReport& rep = res.report;
    rep.primal_history.reserve(256);
    rep.dual_history.reserve(256);
    rep.objective_history.reserve(256);

    Eigen::VectorXd ax = Eigen::VectorXd::Zero(r);
    Eigen::VectorXd y_window = yc_;
    double prim = kInf, dual = kInf;
    int it = 0;
    for (it = 1; it <= p_.max_iterations; ++it) {
      Eigen::VectorXd rhs = p_.sigma * x_ - spec_.q;
      if (r > 0)
        rhs.noalias() +=
            spec_.A.transpose() * (rho_vec_.cwiseProduct(zc_) - yc_);
      x_ = kkt_.solve(rhs);
      if (r > 0) {
        ax.noalias() = spec_.A * x_;
        Eigen::VectorXd z_relax = p_.alpha * ax + (1.0 - p_.alpha) * zc_;
        zc_ = (z_relax + yc_.cwiseQuotient(rho_vec_))
                  .cwiseMax(spec_.lower)
                  .cwiseMin(spec_.upper);
        yc_ += rho_vec_.cwiseProduct(z_relax - zc_);
        prim = (ax - zc_).cwiseAbs().maxCoeff();
      } else {
        prim = 0.0;
      }
      Eigen::VectorXd px = spec_.P * x_;
      Eigen::VectorXd aty = r > 0 ? (spec_.A.transpose() * yc_).eval()
                                  : Eigen::VectorXd::Zero(d).eval();
      dual = (px + spec_.q + aty).cwiseAbs().maxCoeff();

      rep.primal_history.push_back(prim);
      rep.dual_history.push_back(dual);
      rep.objective_history.push_back(spec_.objective(x_));

      double eps_prim =
          p_.eps_abs +
          p_.eps_rel * std::max(r > 0 ? ax.cwiseAbs().maxCoeff() : 0.0,
                                r > 0 ? zc_.cwiseAbs().maxCoeff() : 0.0);
      double eps_dual =
          p_.eps_abs +
          p_.eps_rel * std::max({px.cwiseAbs().maxCoeff(),
                                 spec_.q.cwiseAbs().maxCoeff(),
                                 aty.cwiseAbs().maxCoeff()});
      if (prim <= eps_prim && dual <= eps_dual) {
        rep.status = SolveStatus::Optimal;
        break;
      }
      if (r > 0 && it % 50 == 0) {
        if (detect_primal_infeasible(yc_ - y_window)) {
          rep.status = SolveStatus::Infeasible;
          break;
        }
        y_window = yc_;
      }
    }
    rep.iterations = std::min(it, p_.max_iterations);
    rep.primal_residual = prim;
    rep.dual_residual = dual;
    if (rep.status == SolveStatus::Optimal && p_.polish) try_polish(rep);
    rep.objective = spec_.objective(x_);
    res.x = x_;
    return res;
  }

  const Eigen::VectorXd& dual() const { return yc_; }

 private:
  /// OSQP-style certificate: a direction v in which the duals keep drifting
  /// with A' v == 0 and negative support on the box proves the constraint
  /// set empty.
  bool detect_primal_infeasible(const Eigen::VectorXd& dy) const {
    double ninf = dy.cwiseAbs().maxCoeff();
    if (!(ninf > 1e-10)) return false;
    Eigen::VectorXd v = dy / ninf;
    if ((spec_.A.transpose() * v).cwiseAbs().maxCoeff() > 1e-8) return false;
    double support = 0.0;
    for (int i = 0; i < spec_.rows(); ++i) {
      if (v(i) > 1e-10) {
        if (spec_.upper(i) == kInf) return false;
        support += spec_.upper(i) * v(i);
      } else if (v(i) < -1e-10) {
        if (spec_.lower(i) == -kInf) return false;
        support += spec_.lower(i) * v(i);
      }
    }
    return support < -1e-8;
  }

  /// Refines the splitting solution by solving the KKT system of the active
  /// constraints exactly. Kept only when it stays feasible and does not
  /// worsen the objective.
  void try_polish(SolveReport& rep) {
    const int d = spec_.dimension();
    const int r = spec_.rows();
    std::vector<int> active;
    std::vector<double> rhs_val;
    for (int i = 0; i < r; ++i) {
      if (spec_.lower(i) == spec_.upper(i)) {
        active.push_back(i);
        rhs_val.push_back(spec_.lower(i));
      } else if (yc_(i) < -1e-12) {
        active.push_back(i);
        rhs_val.push_back(spec_.lower(i));
      } else if (yc_(i) > 1e-12) {
        active.push_back(i);
        rhs_val.push_back(spec_.upper(i));
      }
    }
    const int na = static_cast<int>(active.size());
    Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(d + na, d + na);
    kkt.topLeftCorner(d, d) = spec_.P;
    Eigen::VectorXd rhs(d + na);
    rhs.head(d) = -spec_.q;
    for (int k = 0; k < na; ++k) {
      kkt.block(d + k, 0, 1, d) = spec_.A.row(active[k]);
      kkt.block(0, d + k, d, 1) = spec_.A.row(active[k]).transpose();
      rhs(d + k) = rhs_val[k];
    }
    Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(kkt);
    Eigen::VectorXd sol = cod.solve(rhs);
    Eigen::VectorXd xp = sol.head(d);
    if (!xp.allFinite()) return;
    if ((kkt * sol - rhs).cwiseAbs().maxCoeff() > 1e-7) return;
    double feas_tol =
        1e-8 * std::max(1.0, xp.cwiseAbs().maxCoeff());
    Eigen::VectorXd axp = r > 0 ? (spec_.A * xp).eval() : Eigen::VectorXd(0);
    for (int i = 0; i < r; ++i)
      if (axp(i) < spec_.lower(i) - feas_tol ||
          axp(i) > spec_.upper(i) + feas_tol)
        return;
    // The iterate may sit slightly outside the box with a spuriously lower
    // objective; first-order sensitivity bounds the honest gap by the dual
    // magnitude times the violation.
    double viol = 0.0;
    Eigen::VectorXd ax_cur =
        r > 0 ? (spec_.A * x_).eval() : Eigen::VectorXd(0);
    for (int i = 0; i < r; ++i) {
      viol = std::max(viol, spec_.lower(i) - ax_cur(i));
      viol = std::max(viol, ax_cur(i) - spec_.upper(i));
    }
    viol = std::max(viol, 0.0);
    double ymax = r > 0 ? yc_.cwiseAbs().maxCoeff() : 0.0;
    double slack = 10.0 * viol * (1.0 + ymax) +
                   1e-9 * (1.0 + std::abs(spec_.objective(x_)));
    if (spec_.objective(xp) > spec_.objective(x_) + slack) return;
    x_ = xp;
    for (int i = 0; i < r; ++i) yc_(i) = 0.0;
    for (int k = 0; k < na; ++k) yc_(active[k]) = sol(d + k);
    zc_ = axp;
    rep.polished = true;
    if (r > 0)
      rep.primal_residual = (axp - axp.cwiseMax(spec_.lower)
                                       .cwiseMin(spec_.upper))
                                .cwiseAbs()
                                .maxCoeff();
    else
      rep.primal_residual = 0.0;
    rep.dual_residual =
        (spec_.P * x_ + spec_.q +
         (r > 0 ? (spec_.A.transpose() * yc_).eval()
                : Eigen::VectorXd::Zero(d).eval()))
            .cwiseAbs()
            .maxCoeff();
  }

  QpSpec spec_;
  SolverParams p_;
  Eigen::VectorXd rho_vec_;
  Eigen::LDLT<Eigen::MatrixXd> kkt_;
  Eigen::VectorXd x_, zc_, yc_;
};

inline SolveResult solve_qp(const QpSpec& spec, const SolverParams& params = {}) {
  QpSolver solver(spec, params);
  return solver.solve();
}

/// Accumulates an objective of the form sum of quad*(r'x + c0)^2 +
/// lin*(r'x + c0) terms into the 1/2 x'Px + q'x + constant convention.
class QuadraticBuilder {
 public:
  explicit QuadraticBuilder(int dim)
      : P(Eigen::MatrixXd::Zero(dim, dim)),
        q(Eigen::VectorXd::Zero(dim)),
        constant(0.0) {}

  void add_affine_term(const std::vector<std::pair<int, double>>& row,
                       double c0, double quad, double lin) {
    for (const auto& [i, ci] : row) {
      for (const auto& [j, cj] : row) P(i, j) += 2.0 * quad * ci * cj;
      q(i) += (2.0 * quad * c0 + lin) * ci;
    }
    constant += quad * c0 * c0 + lin * c0;
  }

  Eigen::MatrixXd P;
  Eigen::VectorXd q;
  double constant;
};

/// Accumulates sparse constraint rows lower <= r'x <= upper.
class ConstraintBuilder {
 public:
  explicit ConstraintBuilder(int dim) : dim_(dim) {}

  void add_row(const std::vector<std::pair<int, double>>& row, double lo,
               double up) {
    rows_.push_back(row);
    lo_.push_back(lo);
    up_.push_back(up);
  }

  void fill(QpSpec& spec) const {
    const int r = static_cast<int>(rows_.size());
    spec.A = Eigen::MatrixXd::Zero(r, dim_);
    spec.lower = Eigen::VectorXd(r);
    spec.upper = Eigen::VectorXd(r);
    for (int i = 0; i < r; ++i) {
      for (const auto& [j, c] : rows_[i]) spec.A(i, j) += c;
      spec.lower(i) = lo_[i];
      spec.upper(i) = up_[i];
    }
  }

  int size() const { return static_cast<int>(rows_.size()); }

 private:
  int dim_;
  std::vector<std::vector<std::pair<int, double>>> rows_;
  std::vector<double> lo_, up_;
};

struct MaxFlowResult {
  double value = 0.0;
  Eigen::VectorXd arc_flow;            // net flow per arc, sign convention of
                                       // the orientation
  std::vector<NodeId> source_side;     // nodes on the source side of a
                                       // minimum cut
  double cut_capacity = 0.0;           // capacity of that cut; equals value
};

/// Edmonds-Karp maximum flow between node sets. Arcs carry flow in both
/// directions, up to upper(k) along the orientation and up to -lower(k)
/// against it, so lower <= 0 <= upper is required. Augmenting paths are
/// breadth-first shortest and scanned in insertion order, which makes the
/// result deterministic.
inline MaxFlowResult max_flow(const OrientedGraph& g,
                              const std::set<NodeId>& sources,
                              const std::set<NodeId>& sinks,
                              const Eigen::VectorXd& lower,
                              const Eigen::VectorXd& upper) {
  const int n = g.node_count();
  const int m = g.arc_count();
  if (lower.size() != m || upper.size() != m)
    throw ShapeMismatch("capacity vectors must match the arc count");
  if (sources.empty() || sinks.empty())
    throw ValidationError("sources", "need at least one source and one sink");
  for (NodeId v : sources)
    if (v < 0 || v >= n || sinks.count(v))
      throw ValidationError("sources", "sources must be valid, disjoint from sinks");
  for (NodeId v : sinks)
    if (v < 0 || v >= n)
      throw ValidationError("sinks", "sink node out of range");
  double total_cap = 0.0;
  for (int k = 0; k < m; ++k) {
    if (!(upper(k) >= 0.0) || !(lower(k) <= 0.0))
      throw ValidationError("capacities",
                            "need lower <= 0 <= upper per arc");
    if (!std::isfinite(upper(k)) || !std::isfinite(lower(k)))
      throw ValidationError("capacities", "capacities must be finite");
    total_cap += upper(k) - lower(k);
  }

  struct REdge {
    int to;
    double cap;
    int rev;
  };
  const int ss = n, tt = n + 1;
  std::vector<std::vector<REdge>> adj(n + 2);
  auto add_edge = [&](int u, int v, double cap) {
    adj[u].push_back({v, cap, static_cast<int>(adj[v].size())});
    adj[v].push_back({u, 0.0, static_cast<int>(adj[u].size()) - 1});
    return std::pair<int, int>(u, static_cast<int>(adj[u].size()) - 1);
  };
  std::vector<std::pair<int, int>> fwd(m), bwd(m);
  for (int k = 0; k < m; ++k) {
    fwd[k] = add_edge(g.arc(k).tail, g.arc(k).head, upper(k));
    bwd[k] = add_edge(g.arc(k).head, g.arc(k).tail, -lower(k));
  }
  const double big = total_cap + 1.0;
  for (NodeId s : sources) add_edge(ss, s, big);
  for (NodeId t : sinks) add_edge(t, tt, big);

  std::vector<double> orig_cap_store;
  for (const auto& list : adj)
    for (const REdge& e : list) orig_cap_store.push_back(e.cap);

  double value = 0.0;
  const double eps = 1e-12;
  std::vector<std::pair<int, int>> pred(n + 2);  // (node, edge index)
  while (true) {
    std::fill(pred.begin(), pred.end(), std::pair<int, int>(-1, -1));
    pred[ss] = {ss, -1};
    std::queue<int> q;
    q.push(ss);
    while (!q.empty() && pred[tt].first == -1) {
      int u = q.front();
      q.pop();
      for (std::size_t i = 0; i < adj[u].size(); ++i) {
        const REdge& e = adj[u][i];
        if (e.cap > eps && pred[e.to].first == -1) {
          pred[e.to] = {u, static_cast<int>(i)};
          q.push(e.to);
        }
      }
    }
    if (pred[tt].first == -1) break;
    double push = kInf;
    for (int v = tt; v != ss;) {
      auto [u, i] = pred[v];
      push = std::min(push, adj[u][static_cast<std::size_t>(i)].cap);
      v = u;
    }
    for (int v = tt; v != ss;) {
      auto [u, i] = pred[v];
      REdge& e = adj[u][static_cast<std::size_t>(i)];
      e.cap -= push;
      adj[e.to][static_cast<std::size_t>(e.rev)].cap += push;
      v = u;
    }
    value += push;
  }

  MaxFlowResult res;
  res.value = value;
  res.arc_flow = Eigen::VectorXd(m);
  for (int k = 0; k < m; ++k) {
    double pushed_fwd = upper(k) - adj[fwd[k].first][fwd[k].second].cap;
    double pushed_bwd = -lower(k) - adj[bwd[k].first][bwd[k].second].cap;
    res.arc_flow(k) = pushed_fwd - pushed_bwd;
  }
  // Minimum cut certificate: the nodes still reachable in the residual
  // network form the source side; the capacity of the arcs leaving it must
  // equal the flow value.
  std::vector<char> reach(n + 2, 0);
  reach[ss] = 1;
  std::vector<int> stack = {ss};
  while (!stack.empty()) {
    int u = stack.back();
    stack.pop_back();
    for (const REdge& e : adj[u])
      if (e.cap > eps && !reach[e.to]) {
        reach[e.to] = 1;
        stack.push_back(e.to);
      }
  }
  std::size_t edge_idx = 0;
  double cut = 0.0;
  for (int u = 0; u < n + 2; ++u)
    for (const REdge& e : adj[u]) {
      if (reach[u] && !reach[e.to]) cut += orig_cap_store[edge_idx];
      ++edge_idx;
    }
  res.cut_capacity = cut;
  for (NodeId v = 0; v < n; ++v)
    if (reach[v]) res.source_side.push_back(v);
  return res;
}

}  // namespace cycleflow
