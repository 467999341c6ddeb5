#pragma once

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include <json.hpp>

#include "cycleflow/admm.hpp"
#include "cycleflow/cycle_basis.hpp"
#include "cycleflow/errors.hpp"
#include "cycleflow/flow_reduction.hpp"
#include "cycleflow/graph.hpp"
#include "cycleflow/opf.hpp"

namespace cycleflow {

using Json = nlohmann::json;

inline constexpr int kFormatVersion = 1;

namespace detail {

inline Json parse_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  try {
    return Json::parse(in);
  } catch (const Json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
}

inline void write_file(const std::string& path, const std::string& body) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << body;
  if (!out) throw IoError("failed writing " + path);
}

inline const Json& field(const Json& j, const char* name) {
  if (!j.is_object() || !j.contains(name))
    throw ValidationError(name, "missing field");
  return j.at(name);
}

inline double number(const Json& j, const char* name) {
  const Json& v = field(j, name);
  if (!v.is_number()) throw ValidationError(name, "must be a number");
  return v.get<double>();
}

inline double number_or(const Json& j, const char* name, double fallback) {
  if (!j.is_object() || !j.contains(name)) return fallback;
  const Json& v = j.at(name);
  if (!v.is_number()) throw ValidationError(name, "must be a number");
  return v.get<double>();
}

inline int integer(const Json& j, const char* name) {
  const Json& v = field(j, name);
  if (!v.is_number_integer()) throw ValidationError(name, "must be an integer");
  return v.get<int>();
}

inline Eigen::VectorXd number_array(const Json& v, const char* name) {
  if (!v.is_array()) throw ValidationError(name, "must be an array");
  Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!v[i].is_number()) throw ValidationError(name, "must hold numbers");
    out(static_cast<Eigen::Index>(i)) = v[i].get<double>();
  }
  return out;
}

inline void check_format(const Json& j, const std::string& path) {
  if (!j.is_object()) throw ValidationError("format", path + ": not an object");
  if (!j.contains("format"))
    throw ValidationError("format", path + ": missing format version");
  if (!j.at("format").is_number_integer() ||
      j.at("format").get<int>() != kFormatVersion)
    throw ValidationError("format", path + ": unsupported format version");
}

inline std::string dump(const Json& j) { return j.dump(2) + "\n"; }

}  // namespace detail

/// FNV-1a, used to freeze fixture files against silent edits.
inline std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

// -------------------------------------------------------------------------
// Graphs. A problem file is a graph file with extra per-arc fields, so
// load_graph accepts both.

inline OrientedGraph graph_from_json(const Json& j) {
  int nodes = detail::integer(j, "nodes");
  const Json& arcs = detail::field(j, "arcs");
  if (!arcs.is_array()) throw ValidationError("arcs", "must be an array");
  std::vector<Arc> list;
  for (const Json& a : arcs) {
    Arc arc;
    arc.tail = detail::integer(a, "tail");
    arc.head = detail::integer(a, "head");
    arc.weight = detail::number_or(a, "weight", 1.0);
    list.push_back(arc);
  }
  return OrientedGraph(nodes, std::move(list));
}

inline Json graph_to_json(const OrientedGraph& g) {
  Json arcs = Json::array();
  for (int k = 0; k < g.arc_count(); ++k) {
    const Arc& a = g.arc(k);
    arcs.push_back({{"tail", a.tail}, {"head", a.head}, {"weight", a.weight}});
  }
  return Json{{"format", kFormatVersion}, {"nodes", g.node_count()},
              {"arcs", std::move(arcs)}};
}

inline OrientedGraph load_graph(const std::string& path) {
  Json j = detail::parse_file(path);
  detail::check_format(j, path);
  return graph_from_json(j);
}

inline void save_graph(const OrientedGraph& g, const std::string& path) {
  detail::write_file(path, detail::dump(graph_to_json(g)));
}

// -------------------------------------------------------------------------
// Flow problems.

inline FlowProblem flow_problem_from_json(const Json& j) {
  OrientedGraph g = graph_from_json(j);
  const Json& arcs = j.at("arcs");
  const int m = g.arc_count();
  Eigen::VectorXd lower(m), upper(m);
  std::vector<QuadCost> cost(static_cast<std::size_t>(m));
  for (int k = 0; k < m; ++k) {
    const Json& a = arcs[static_cast<std::size_t>(k)];
    if (a.contains("capacity")) {
      double c = detail::number(a, "capacity");
      if (!(c >= 0.0)) throw ValidationError("capacity", "must be nonnegative");
      lower(k) = -c;
      upper(k) = c;
    } else {
      lower(k) = detail::number(a, "lower");
      upper(k) = detail::number(a, "upper");
    }
    cost[static_cast<std::size_t>(k)].quadratic =
        detail::number_or(a, "quadratic_cost", 0.0);
    cost[static_cast<std::size_t>(k)].linear =
        detail::number_or(a, "linear_cost", 0.0);
  }
  Eigen::VectorXd f =
      detail::number_array(detail::field(j, "injections"), "injections");
  if (f.size() != g.node_count())
    throw ValidationError("injections", "length must equal the node count");
  if (!injections_balanced(f))
    throw ValidationError("injections", "unbalanced");
  FlowProblem p{std::move(g), std::move(lower), std::move(upper),
                std::move(cost), std::move(f)};
  p.validate();
  return p;
}

inline Json flow_problem_to_json(const FlowProblem& p) {
  Json j = graph_to_json(p.graph);
  j["type"] = "flow";
  for (int k = 0; k < p.graph.arc_count(); ++k) {
    Json& a = j["arcs"][static_cast<std::size_t>(k)];
    a["lower"] = p.lower(k);
    a["upper"] = p.upper(k);
    a["quadratic_cost"] = p.cost[static_cast<std::size_t>(k)].quadratic;
    a["linear_cost"] = p.cost[static_cast<std::size_t>(k)].linear;
  }
  j["injections"] = std::vector<double>(
      p.injections.data(), p.injections.data() + p.injections.size());
  return j;
}

inline void save_flow_problem(const FlowProblem& p, const std::string& path) {
  detail::write_file(path, detail::dump(flow_problem_to_json(p)));
}

// -------------------------------------------------------------------------
// OPF problems.

inline OpfProblem opf_problem_from_json(const Json& j) {
  OrientedGraph g = graph_from_json(j);
  const int n = g.node_count();
  const int m = g.arc_count();
  OpfProblem p;
  p.graph = std::move(g);
  p.susceptance.resize(m);
  p.line_limit.resize(m);
  const Json& arcs = j.at("arcs");
  for (int k = 0; k < m; ++k) {
    const Json& a = arcs[static_cast<std::size_t>(k)];
    p.susceptance(k) = detail::number(a, "susceptance");
    p.line_limit(k) = detail::number(a, "limit");
  }
  p.generators.min_output = Eigen::VectorXd::Zero(n);
  p.generators.max_output = Eigen::VectorXd::Zero(n);
  p.generators.cost.assign(static_cast<std::size_t>(n), QuadCost{});
  for (const Json& gen : detail::field(j, "generators")) {
    int v = detail::integer(gen, "node");
    if (v < 0 || v >= n) throw ValidationError("generators", "node out of range");
    p.generators.min_output(v) = detail::number(gen, "min");
    p.generators.max_output(v) = detail::number(gen, "max");
    p.generators.cost[static_cast<std::size_t>(v)] =
        QuadCost{detail::number_or(gen, "quadratic_cost", 0.0),
                 detail::number_or(gen, "linear_cost", 0.0)};
  }
  p.storage.level_min = Eigen::VectorXd::Zero(n);
  p.storage.level_max = Eigen::VectorXd::Zero(n);
  p.storage.charge_min = Eigen::VectorXd::Zero(n);
  p.storage.charge_max = Eigen::VectorXd::Zero(n);
  p.storage.initial_level = Eigen::VectorXd::Zero(n);
  p.storage.retention = Eigen::VectorXd::Ones(n);
  if (j.contains("storage"))
    for (const Json& st : j.at("storage")) {
      int v = detail::integer(st, "node");
      if (v < 0 || v >= n) throw ValidationError("storage", "node out of range");
      p.storage.level_min(v) = detail::number(st, "level_min");
      p.storage.level_max(v) = detail::number(st, "level_max");
      p.storage.charge_min(v) = detail::number(st, "charge_min");
      p.storage.charge_max(v) = detail::number(st, "charge_max");
      p.storage.initial_level(v) = detail::number(st, "initial");
      p.storage.retention(v) = detail::number_or(st, "retention", 1.0);
    }
  p.horizon = detail::integer(j, "horizon");
  const Json& loads = detail::field(j, "loads");
  if (!loads.is_array() || static_cast<int>(loads.size()) != p.horizon)
    throw HorizonMismatch("loads must list one array per period");
  p.loads.resize(n, p.horizon);
  for (int t = 0; t < p.horizon; ++t) {
    Eigen::VectorXd col = detail::number_array(loads[static_cast<std::size_t>(t)],
                                               "loads");
    if (col.size() != n)
      throw ValidationError("loads", "period " + std::to_string(t) +
                                         " has the wrong length");
    p.loads.col(t) = col;
  }
  if (j.contains("terminal_level"))
    p.terminal_level = detail::number_array(j.at("terminal_level"),
                                            "terminal_level");
  p.validate();
  return p;
}

inline Json opf_problem_to_json(const OpfProblem& p) {
  Json j = graph_to_json(p.graph);
  j["type"] = "opf";
  for (int k = 0; k < p.graph.arc_count(); ++k) {
    Json& a = j["arcs"][static_cast<std::size_t>(k)];
    a["susceptance"] = p.susceptance(k);
    a["limit"] = p.line_limit(k);
  }
  Json gens = Json::array();
  for (NodeId v = 0; v < p.graph.node_count(); ++v) {
    const QuadCost& c = p.generators.cost[static_cast<std::size_t>(v)];
    if (p.generators.min_output(v) == 0.0 && p.generators.max_output(v) == 0.0 &&
        c.quadratic == 0.0 && c.linear == 0.0)
      continue;
    gens.push_back({{"node", v},
                    {"min", p.generators.min_output(v)},
                    {"max", p.generators.max_output(v)},
                    {"quadratic_cost", c.quadratic},
                    {"linear_cost", c.linear}});
  }
  j["generators"] = std::move(gens);
  Json sto = Json::array();
  for (NodeId v = 0; v < p.graph.node_count(); ++v) {
    if (p.storage.level_min(v) == 0.0 && p.storage.level_max(v) == 0.0 &&
        p.storage.charge_min(v) == 0.0 && p.storage.charge_max(v) == 0.0 &&
        p.storage.initial_level(v) == 0.0)
      continue;
    sto.push_back({{"node", v},
                   {"level_min", p.storage.level_min(v)},
                   {"level_max", p.storage.level_max(v)},
                   {"charge_min", p.storage.charge_min(v)},
                   {"charge_max", p.storage.charge_max(v)},
                   {"initial", p.storage.initial_level(v)},
                   {"retention", p.storage.retention(v)}});
  }
  j["storage"] = std::move(sto);
  j["horizon"] = p.horizon;
  Json loads = Json::array();
  for (int t = 0; t < p.horizon; ++t)
    loads.push_back(std::vector<double>(p.loads.col(t).data(),
                                        p.loads.col(t).data() +
                                            p.loads.rows()));
  j["loads"] = std::move(loads);
  if (p.terminal_level)
    j["terminal_level"] = std::vector<double>(
        p.terminal_level->data(),
        p.terminal_level->data() + p.terminal_level->size());
  return j;
}

inline void save_opf_problem(const OpfProblem& p, const std::string& path) {
  detail::write_file(path, detail::dump(opf_problem_to_json(p)));
}

/// Problem files carry a "type" field; plain flow files may omit it.
inline std::variant<FlowProblem, OpfProblem> load_problem(
    const std::string& path) {
  Json j = detail::parse_file(path);
  detail::check_format(j, path);
  std::string type = "flow";
  if (j.contains("type")) {
    if (!j.at("type").is_string())
      throw ValidationError("type", "must be a string");
    type = j.at("type").get<std::string>();
  }
  if (type == "flow") return flow_problem_from_json(j);
  if (type == "opf") return opf_problem_from_json(j);
  throw ValidationError("type", "unknown problem type '" + type + "'");
}

inline FlowProblem load_flow_problem(const std::string& path) {
  auto p = load_problem(path);
  if (!std::holds_alternative<FlowProblem>(p))
    throw ValidationError("type", path + " is not a flow problem");
  return std::get<FlowProblem>(std::move(p));
}

inline OpfProblem load_opf_problem(const std::string& path) {
  auto p = load_problem(path);
  if (!std::holds_alternative<OpfProblem>(p))
    throw ValidationError("type", path + " is not an OPF problem");
  return std::get<OpfProblem>(std::move(p));
}

// -------------------------------------------------------------------------
// Cycle bases.

inline Json basis_to_json(const CycleBasis& basis) {
  Json cycles = Json::array();
  for (const OrientedCycle& c : basis.cycles) {
    Json entries = Json::array();
    for (ArcId k : c.arc_ids) entries.push_back(c.entries(k));
    Json jc{{"arcs", c.arc_ids}, {"entries", std::move(entries)},
            {"weight", c.weight}};
    if (c.defining_arc) jc["defining_arc"] = *c.defining_arc;
    cycles.push_back(std::move(jc));
  }
  return Json{{"format", kFormatVersion},
              {"arc_count", static_cast<int>(basis.B.cols())},
              {"mu", basis.mu},
              {"source",
               basis.source == BasisSource::SpanningTree ? "tree" : "horton"},
              {"cycles", std::move(cycles)}};
}

inline CycleBasis basis_from_json(const Json& j) {
  const int m = detail::integer(j, "arc_count");
  if (m < 0) throw ValidationError("arc_count", "must be nonnegative");
  const Json& jc = detail::field(j, "cycles");
  if (!jc.is_array()) throw ValidationError("cycles", "must be an array");
  CycleBasis basis;
  basis.mu = static_cast<int>(jc.size());
  std::string source = "tree";
  if (j.contains("source")) source = j.at("source").get<std::string>();
  basis.source = source == "horton" ? BasisSource::Horton
                                    : BasisSource::SpanningTree;
  basis.B = Eigen::MatrixXi::Zero(basis.mu, m);
  for (int i = 0; i < basis.mu; ++i) {
    const Json& c = jc[static_cast<std::size_t>(i)];
    const Json& arcs = detail::field(c, "arcs");
    const Json& entries = detail::field(c, "entries");
    if (!arcs.is_array() || !entries.is_array() ||
        arcs.size() != entries.size())
      throw ValidationError("cycles", "arcs and entries must align");
    OrientedCycle cyc;
    cyc.entries = Eigen::VectorXi::Zero(m);
    ArcId prev = -1;
    for (std::size_t t = 0; t < arcs.size(); ++t) {
      if (!arcs[t].is_number_integer())
        throw ValidationError("cycles", "arc ids must be integers");
      ArcId k = arcs[t].get<int>();
      if (k < 0 || k >= m) throw ValidationError("cycles", "arc id out of range");
      if (k <= prev)
        throw ValidationError("cycles", "arc ids must be strictly ascending");
      prev = k;
      int e = entries[t].get<int>();
      if (e != 1 && e != -1)
        throw ValidationError("cycles", "entries must be +1 or -1");
      cyc.arc_ids.push_back(k);
      cyc.entries(k) = e;
      basis.B(i, k) = e;
    }
    if (cyc.arc_ids.empty())
      throw ValidationError("cycles", "a cycle cannot be empty");
    if (c.contains("defining_arc"))
      cyc.defining_arc = c.at("defining_arc").get<int>();
    cyc.weight = detail::number_or(c, "weight", 0.0);
    basis.cycles.push_back(std::move(cyc));
  }
  return basis;
}

inline CycleBasis load_basis(const std::string& path) {
  Json j = detail::parse_file(path);
  detail::check_format(j, path);
  return basis_from_json(j);
}

inline void save_basis(const CycleBasis& basis, const std::string& path) {
  detail::write_file(path, detail::dump(basis_to_json(basis)));
}

// -------------------------------------------------------------------------
// Solutions and references.

inline Json flow_solution_to_json(const FlowSolution& sol) {
  Json j{{"format", kFormatVersion},
         {"type", "flow_solution"},
         {"status", to_string(sol.report.status)},
         {"objective", sol.report.objective},
         {"iterations", sol.report.iterations},
         {"flows", std::vector<double>(sol.x.data(), sol.x.data() + sol.x.size())}};
  if (sol.z)
    j["z"] = std::vector<double>(sol.z->data(), sol.z->data() + sol.z->size());
  return j;
}

inline void save_flow_solution(const FlowSolution& sol,
                               const std::string& path) {
  detail::write_file(path, detail::dump(flow_solution_to_json(sol)));
}

/// Reference flows for the simulator, one vector per phase. Accepts either
/// a solution file (one phase) or {"references": [[...], ...]}.
inline std::vector<Eigen::VectorXd> load_references(const std::string& path) {
  Json j = detail::parse_file(path);
  detail::check_format(j, path);
  std::vector<Eigen::VectorXd> refs;
  if (j.contains("references")) {
    const Json& r = j.at("references");
    if (!r.is_array()) throw ValidationError("references", "must be an array");
    for (const Json& one : r)
      refs.push_back(detail::number_array(one, "references"));
  } else if (j.contains("flows")) {
    refs.push_back(detail::number_array(j.at("flows"), "flows"));
  } else {
    throw ValidationError("references", "no flows found in " + path);
  }
  return refs;
}

// -------------------------------------------------------------------------
// Schedules.

inline Schedule schedule_from_json(const Json& j) {
  const Json* list = nullptr;
  if (j.is_array()) {
    list = &j;
  } else if (j.is_object() && j.contains("switches")) {
    list = &j.at("switches");
  } else {
    throw ValidationError("schedule", "expected an array or a switches field");
  }
  Schedule out;
  for (const Json& s : *list) {
    InjectionSwitch sw;
    sw.round = detail::integer(s, "round");
    sw.injections =
        detail::number_array(detail::field(s, "injections"), "injections");
    out.push_back(std::move(sw));
  }
  return out;
}

/// Bare arrays are accepted alongside the versioned wrapper.
inline Schedule load_schedule(const std::string& path) {
  Json j = detail::parse_file(path);
  if (j.is_object()) detail::check_format(j, path);
  return schedule_from_json(j);
}

inline Json schedule_to_json(const Schedule& schedule) {
  Json switches = Json::array();
  for (const InjectionSwitch& sw : schedule)
    switches.push_back(
        {{"round", sw.round},
         {"injections",
          std::vector<double>(sw.injections.data(),
                              sw.injections.data() + sw.injections.size())}});
  return Json{{"format", kFormatVersion}, {"switches", std::move(switches)}};
}

inline void save_schedule(const Schedule& schedule, const std::string& path) {
  detail::write_file(path, detail::dump(schedule_to_json(schedule)));
}

// -------------------------------------------------------------------------
// CSV traces.

namespace detail {

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace detail

/// One row per agent per round. Error columns are empty where the agent does
/// not track the arc or no reference was supplied.
inline void emit_trace(const RoundTrace& trace, const std::string& path) {
  if (trace.rounds.empty()) throw IoError("trace is empty");
  std::ostringstream out;
  out << "round,agent,phase,switched,disagreement,objective";
  for (int k = 0; k < trace.arc_count; ++k) out << ",err_" << k;
  out << "\n";
  for (const RoundRecord& rec : trace.rounds) {
    for (int i = 0; i < trace.agent_count; ++i) {
      out << rec.round << ',' << i << ',' << rec.phase << ','
          << (rec.switched ? 1 : 0) << ','
          << detail::format_double(rec.agent_disagreement(i)) << ','
          << detail::format_double(rec.objective);
      for (int k = 0; k < trace.arc_count; ++k) {
        out << ',';
        double e = rec.arc_error(i, k);
        if (!std::isnan(e)) out << detail::format_double(e);
      }
      out << "\n";
    }
  }
  detail::write_file(path, out.str());
}

/// Per-iteration solver history for external plotting.
inline void emit_solver_trace(const SolveReport& report,
                              const std::string& path) {
  if (report.primal_history.empty()) throw IoError("solver trace is empty");
  std::ostringstream out;
  out << "iteration,primal_res,dual_res,objective\n";
  for (std::size_t i = 0; i < report.primal_history.size(); ++i)
    out << (i + 1) << ',' << detail::format_double(report.primal_history[i])
        << ',' << detail::format_double(report.dual_history[i]) << ','
        << detail::format_double(report.objective_history[i]) << "\n";
  detail::write_file(path, out.str());
}

}  // namespace cycleflow
