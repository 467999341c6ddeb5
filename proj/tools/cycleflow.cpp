#include <cstdlib>
#include <iostream>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include <CLI11.hpp>

#include "cycleflow/io.hpp"

namespace cf = cycleflow;

namespace {

// Node and arc labels are 1-based in everything printed for humans; file
// contents stay 0-based.
int label(int index) { return index + 1; }

cf::CycleBasis make_basis(const cf::OrientedGraph& g,
                          const std::string& method) {
  if (method == "tree") return cf::fundamental_basis(g);
  if (method == "horton") return cf::horton_basis(g);
  throw cf::ValidationError("method", "expected 'tree' or 'horton'");
}

cf::ElementarySolutionSet elems_for(const cf::OrientedGraph& g,
                                    int reference_label) {
  if (reference_label < 1 || reference_label > g.node_count())
    throw cf::ValidationError("reference", "node label out of range");
  return cf::elementary_solutions(g, reference_label - 1);
}

void print_flows(const cf::OrientedGraph& g, const Eigen::VectorXd& x) {
  for (int k = 0; k < g.arc_count(); ++k) {
    const cf::Arc& a = g.arc(k);
    std::cout << "arc " << label(k) << " (" << label(a.tail) << " -> "
              << label(a.head) << "): " << x(k) << "\n";
  }
}

int run_basis(const std::string& path, const std::string& method,
              const std::string& out) {
  cf::OrientedGraph g = cf::load_graph(path);
  cf::CycleBasis basis = make_basis(g, method);
  if (out.empty())
    std::cout << cf::detail::dump(cf::basis_to_json(basis));
  else
    cf::save_basis(basis, out);
  std::cerr << "mu = " << basis.mu << ", total weight = "
            << basis.total_weight() << "\n";
  return 0;
}

int run_reduce(const std::string& path, const std::string& basis_path,
               const std::string& out, int reference_label) {
  cf::FlowProblem p = cf::load_flow_problem(path);
  cf::CycleBasis basis = cf::load_basis(basis_path);
  auto elems = elems_for(p.graph, reference_label);
  Eigen::VectorXd xp = cf::particular_solution(elems, p.injections);
  cf::ReducedFlowProblem rp = cf::reduce(p, basis, xp);

  cf::Json j{{"format", cf::kFormatVersion},
             {"type", "reduced_flow"},
             {"mu", rp.basis.mu},
             {"arc_count", p.graph.arc_count()},
             {"basis", cf::basis_to_json(rp.basis)},
             {"particular", std::vector<double>(rp.xp.data(),
                                                rp.xp.data() + rp.xp.size())},
             {"lower", std::vector<double>(rp.lower.data(),
                                           rp.lower.data() + rp.lower.size())},
             {"upper", std::vector<double>(rp.upper.data(),
                                           rp.upper.data() + rp.upper.size())},
             {"injections",
              std::vector<double>(rp.injections.data(),
                                  rp.injections.data() + rp.injections.size())}};
  cf::Json cost = cf::Json::array();
  for (const cf::QuadCost& c : rp.cost)
    cost.push_back({{"quadratic", c.quadratic}, {"linear", c.linear}});
  j["cost"] = std::move(cost);
  cf::detail::write_file(out, cf::detail::dump(j));
  std::cerr << p.graph.arc_count() << " arc variables reduced to "
            << rp.basis.mu << "\n";
  return 0;
}

int run_solve(const std::string& path, const std::string& basis_path,
              const std::string& trace, const std::string& out,
              int reference_label) {
  cf::FlowProblem p = cf::load_flow_problem(path);
  cf::SolverParams params;
  cf::FlowSolution sol;
  if (basis_path.empty()) {
    sol = cf::solve_flow(p, params);
  } else {
    cf::CycleBasis basis = cf::load_basis(basis_path);
    auto elems = elems_for(p.graph, reference_label);
    Eigen::VectorXd xp = cf::particular_solution(elems, p.injections);
    sol = cf::solve_reduced_flow(cf::reduce(p, basis, xp), params);
  }
  if (!trace.empty()) cf::emit_solver_trace(sol.report, trace);
  if (!out.empty()) cf::save_flow_solution(sol, out);
  std::cout << "status: " << cf::to_string(sol.report.status) << "\n"
            << "objective: " << sol.report.objective << "\n"
            << "iterations: " << sol.report.iterations << "\n";
  if (sol.report.status == cf::SolveStatus::Optimal)
    print_flows(p.graph, sol.x);
  if (sol.report.status == cf::SolveStatus::MaxIterations) return 2;
  if (sol.report.status == cf::SolveStatus::Infeasible) return 1;
  return 0;
}

int run_maxflow(const std::string& path, const std::vector<int>& source_labels,
                const std::vector<int>& sink_labels) {
  cf::FlowProblem p = cf::load_flow_problem(path);
  std::set<cf::NodeId> sources, sinks;
  for (int s : source_labels) sources.insert(s - 1);
  for (int s : sink_labels) sinks.insert(s - 1);
  cf::MaxFlowResult res = cf::max_flow(p.graph, sources, sinks, p.lower,
                                       p.upper);
  std::cout << "max flow: " << res.value << "\n"
            << "cut capacity: " << res.cut_capacity << "\n"
            << "source side:";
  for (cf::NodeId v : res.source_side) std::cout << ' ' << label(v);
  std::cout << "\n";
  print_flows(p.graph, res.arc_flow);
  return 0;
}

int run_opf(const std::string& path, const std::string& out,
            int reference_label) {
  cf::OpfProblem p = cf::load_opf_problem(path);
  cf::CycleBasis basis = cf::fundamental_basis(p.graph);
  auto elems = elems_for(p.graph, reference_label);
  cf::ReducedOpfProblem r = cf::reduce_opf(p, basis, elems);
  cf::OpfSolution sol = cf::solve_opf(r);
  cf::OpfResiduals res = cf::validate_opf_solution(p, sol);

  std::cout << "status: " << cf::to_string(sol.report.status) << "\n"
            << "objective (per period): "
            << cf::opf_objective(p, sol.generation) << "\n"
            << "residuals: conservation " << res.conservation
            << ", storage " << res.storage_dynamics << ", dc " << res.dc
            << ", bounds " << res.bounds << ", balance " << res.balance
            << "\n";

  if (!out.empty()) {
    auto matrix = [](const Eigen::MatrixXd& m) {
      cf::Json rows = cf::Json::array();
      for (Eigen::Index i = 0; i < m.rows(); ++i) {
        std::vector<double> row(static_cast<std::size_t>(m.cols()));
        for (Eigen::Index t = 0; t < m.cols(); ++t)
          row[static_cast<std::size_t>(t)] = m(i, t);
        rows.push_back(std::move(row));
      }
      return rows;
    };
    cf::Json j{{"format", cf::kFormatVersion},
               {"type", "opf_solution"},
               {"status", cf::to_string(sol.report.status)},
               {"objective", cf::opf_objective(p, sol.generation)},
               {"flows", matrix(sol.flows)},
               {"generation", matrix(sol.generation)},
               {"charge", matrix(sol.charge)},
               {"theta", matrix(sol.theta)},
               {"levels", matrix(sol.levels)},
               {"residuals",
                {{"conservation", res.conservation},
                 {"storage_dynamics", res.storage_dynamics},
                 {"dc", res.dc},
                 {"bounds", res.bounds},
                 {"balance", res.balance}}}};
    cf::detail::write_file(out, cf::detail::dump(j));
  }
  if (sol.report.status == cf::SolveStatus::MaxIterations) return 2;
  if (sol.report.status == cf::SolveStatus::Infeasible) return 1;
  return 0;
}

int run_simulate(const std::string& path, const std::string& basis_path,
                 const std::string& schedule_path, const std::string& trace,
                 const std::string& reference_path, int reference_label,
                 double rho, double tolerance, int rounds, int workers) {
  cf::FlowProblem p = cf::load_flow_problem(path);
  cf::CycleBasis basis = cf::load_basis(basis_path);
  auto elems = elems_for(p.graph, reference_label);
  cf::Schedule schedule;
  if (!schedule_path.empty()) schedule = cf::load_schedule(schedule_path);
  std::vector<Eigen::VectorXd> references;
  if (!reference_path.empty())
    references = cf::load_references(reference_path);

  cf::SimulationParams params;
  params.consensus_rho = rho;
  params.tolerance = tolerance;
  params.max_rounds = rounds;
  params.workers = workers;
  cf::SimulationResult res =
      cf::run(p, basis, elems, params, schedule, references);
  cf::emit_trace(res.trace, trace);

  std::cout << "status: " << cf::to_string(res.status) << "\n"
            << "rounds: " << res.rounds << "\n"
            << "messages: " << res.messages << "\n"
            << "max disagreement: "
            << res.trace.rounds.back().max_disagreement << "\n";
  return res.status == cf::SimStatus::Converged ? 0 : 2;
}

int run_validate(const std::string& path) {
  cf::Json j = cf::detail::parse_file(path);
  if (j.is_array()) {
    cf::Schedule s = cf::schedule_from_json(j);
    std::cout << "OK: schedule with " << s.size() << " switches\n";
    return 0;
  }
  cf::detail::check_format(j, path);
  if (j.contains("cycles")) {
    cf::CycleBasis basis = cf::basis_from_json(j);
    std::cout << "OK: cycle basis with mu = " << basis.mu << "\n";
  } else if (j.contains("switches")) {
    cf::Schedule s = cf::schedule_from_json(j);
    std::cout << "OK: schedule with " << s.size() << " switches\n";
  } else if (j.contains("injections") || j.contains("horizon")) {
    auto p = cf::load_problem(path);
    if (std::holds_alternative<cf::FlowProblem>(p)) {
      const auto& fp = std::get<cf::FlowProblem>(p);
      std::cout << "OK: flow problem with " << fp.graph.node_count()
                << " nodes, " << fp.graph.arc_count() << " arcs\n";
    } else {
      const auto& op = std::get<cf::OpfProblem>(p);
      std::cout << "OK: OPF problem with " << op.graph.node_count()
                << " nodes, " << op.graph.arc_count() << " arcs, horizon "
                << op.horizon << "\n";
    }
  } else if (j.contains("flows") || j.contains("references")) {
    auto refs = cf::load_references(path);
    std::cout << "OK: " << refs.size() << " reference flow vectors\n";
  } else {
    cf::OrientedGraph g = cf::graph_from_json(j);
    std::cout << "OK: graph with " << g.node_count() << " nodes, "
              << g.arc_count() << " arcs\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cycle-space reduction toolkit for network flow problems"};
  app.require_subcommand(1);

  std::string input, basis_path, schedule_path, trace_path, out, ref_path;
  std::string method = "tree";
  int reference_label = 1;
  std::vector<int> source_labels, sink_labels;
  double rho = 0.25, tolerance = 1e-6;
  int rounds = 5000, workers = 1;

  auto* basis_cmd =
      app.add_subcommand("basis", "build a cycle basis for a graph");
  basis_cmd->add_option("graph", input, "graph or problem JSON file")
      ->required();
  basis_cmd->add_option("--method", method,
                        "basis construction: tree or horton");
  basis_cmd->add_option("--out", out, "write the basis here, not stdout");

  auto* reduce_cmd = app.add_subcommand(
      "reduce", "project a flow problem onto the cycle space");
  reduce_cmd->add_option("problem", input, "flow problem JSON file")
      ->required();
  reduce_cmd->add_option("--basis", basis_path, "cycle basis JSON file")
      ->required();
  reduce_cmd->add_option("--out", out, "output file")->required();
  reduce_cmd->add_option("--reference", reference_label,
                         "path-tracing reference node (1-based)");

  auto* solve_cmd =
      app.add_subcommand("solve", "minimize the flow cost on the network");
  solve_cmd->add_option("problem", input, "flow problem JSON file")
      ->required();
  solve_cmd->add_option("--reduced", basis_path,
                        "solve in cycle space using this basis file");
  solve_cmd->add_option("--trace", trace_path,
                        "per-iteration solver CSV trace");
  solve_cmd->add_option("--out", out, "write the solution JSON here");
  solve_cmd->add_option("--reference", reference_label,
                        "path-tracing reference node (1-based)");

  auto* maxflow_cmd = app.add_subcommand(
      "maxflow", "maximum flow between node sets under the arc bounds");
  maxflow_cmd->add_option("problem", input, "flow problem JSON file")
      ->required();
  maxflow_cmd->add_option("--sources", source_labels,
                          "source node labels (1-based)")
      ->required()
      ->delimiter(',');
  maxflow_cmd->add_option("--sinks", sink_labels,
                          "sink node labels (1-based)")
      ->required()
      ->delimiter(',');

  auto* opf_cmd = app.add_subcommand(
      "opf", "multi-period DC optimal power flow with storage");
  opf_cmd->add_option("problem", input, "OPF problem JSON file")->required();
  opf_cmd->add_option("--out", out, "write the trajectory JSON here");
  opf_cmd->add_option("--reference", reference_label,
                      "angle and path-tracing reference node (1-based)");

  auto* sim_cmd = app.add_subcommand(
      "simulate", "distributed consensus rounds on the cycle agents");
  sim_cmd->add_option("problem", input, "flow problem JSON file")->required();
  sim_cmd->add_option("--basis", basis_path, "cycle basis JSON file")
      ->required();
  sim_cmd->add_option("--schedule", schedule_path,
                      "injection switch schedule JSON");
  sim_cmd->add_option("--trace", trace_path, "per-round CSV trace")
      ->required();
  sim_cmd->add_option("--reference", ref_path,
                      "centralized reference flows for error columns");
  sim_cmd->add_option("--reference-node", reference_label,
                      "path-tracing reference node (1-based)");
  sim_cmd->add_option("--rho", rho, "consensus weight scale");
  sim_cmd->add_option("--tolerance", tolerance, "convergence tolerance");
  sim_cmd->add_option("--rounds", rounds, "round budget");
  sim_cmd->add_option("--workers", workers, "local solve threads");

  auto* validate_cmd =
      app.add_subcommand("validate", "check a JSON input file");
  validate_cmd->add_option("file", input, "any cycleflow JSON file")
      ->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (basis_cmd->parsed()) return run_basis(input, method, out);
    if (reduce_cmd->parsed())
      return run_reduce(input, basis_path, out, reference_label);
    if (solve_cmd->parsed())
      return run_solve(input, basis_path, trace_path, out, reference_label);
    if (maxflow_cmd->parsed())
      return run_maxflow(input, source_labels, sink_labels);
    if (opf_cmd->parsed()) return run_opf(input, out, reference_label);
    if (sim_cmd->parsed())
      return run_simulate(input, basis_path, schedule_path, trace_path,
                          ref_path, reference_label, rho, tolerance, rounds,
                          workers);
    if (validate_cmd->parsed()) return run_validate(input);
  } catch (const cf::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
