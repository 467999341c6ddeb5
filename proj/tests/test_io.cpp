#include <catch2/catch_amalgamated.hpp>

#include <sys/wait.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "cycleflow/io.hpp"
#include "support/random.hpp"

using namespace cycleflow;

namespace {

std::string fixture(const char* name) {
  return std::string(CYCLEFLOW_FIXTURE_DIR) + "/" + name;
}

std::string scratch(const char* name) {
  namespace fs = std::filesystem;
  fs::path dir = fs::temp_directory_path() / "cycleflow_io_tests";
  fs::create_directories(dir);
  return (dir / name).string();
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

void spit(const std::string& path, const std::string& body) {
  std::ofstream out(path, std::ios::binary);
  out << body;
  REQUIRE(out.good());
}

struct CliResult {
  int exit_code = -1;
  std::string out;
};

CliResult run_cli(const std::string& args) {
  std::string cmd = std::string(CYCLEFLOW_CLI_PATH) + " " + args + " 2>&1";
  FILE* pipe = ::popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  CliResult res;
  char buf[4096];
  std::size_t got;
  while ((got = std::fread(buf, 1, sizeof buf, pipe)) > 0)
    res.out.append(buf, got);
  int status = ::pclose(pipe);
  res.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return res;
}

bool same_cost(const QuadCost& a, const QuadCost& b) {
  return a.quadratic == b.quadratic && a.linear == b.linear;
}

}  // namespace

TEST_CASE("a minimal problem file loads with both bound forms", "[io]") {
  std::string path = scratch("mini_problem.json");
  spit(path, R"({
    "format": 1,
    "nodes": 3,
    "arcs": [
      {"tail": 0, "head": 1, "capacity": 2.5, "quadratic_cost": 1.0},
      {"tail": 1, "head": 2, "lower": -1.0, "upper": 4.0, "linear_cost": 0.5},
      {"tail": 0, "head": 2, "capacity": 3.0}
    ],
    "injections": [1.0, 0.0, -1.0]
  })");
  FlowProblem p = load_flow_problem(path);
  REQUIRE(p.graph.node_count() == 3);
  REQUIRE(p.graph.arc_count() == 3);
  REQUIRE(p.lower(0) == -2.5);
  REQUIRE(p.upper(0) == 2.5);
  REQUIRE(p.lower(1) == -1.0);
  REQUIRE(p.upper(1) == 4.0);
  REQUIRE(p.cost[0].quadratic == 1.0);
  REQUIRE(p.cost[0].linear == 0.0);
  REQUIRE(p.cost[1].linear == 0.5);
  REQUIRE(p.injections(0) == 1.0);
  REQUIRE(p.injections(2) == -1.0);
}

TEST_CASE("field errors name the offending field", "[io]") {
  auto expect_field = [](const std::string& body, const std::string& field) {
    std::string path = scratch("bad_field.json");
    spit(path, body);
    try {
      load_flow_problem(path);
      FAIL("expected a validation error");
    } catch (const ValidationError& e) {
      REQUIRE(e.field() == field);
    }
  };

  expect_field(R"({"format":1,"nodes":2,
                  "arcs":[{"tail":0,"head":1,"capacity":1}],
                  "injections":[1.0,0.0]})",
               "injections");
  expect_field(R"({"format":1,"nodes":2,
                  "arcs":[{"tail":0,"head":1,"capacity":1}],
                  "injections":[1.0,-0.5,-0.5]})",
               "injections");
  expect_field(R"({"format":1,"nodes":2,
                  "arcs":[{"tail":0,"head":1,"capacity":-2}],
                  "injections":[0.0,0.0]})",
               "capacity");
  expect_field(R"({"format":1,
                  "arcs":[{"tail":0,"head":1,"capacity":1}],
                  "injections":[0.0,0.0]})",
               "nodes");
  expect_field(R"({"format":1,"nodes":2,
                  "arcs":[{"tail":0,"head":1}],
                  "injections":[0.0,0.0]})",
               "lower");

  std::string unbalanced = scratch("unbalanced.json");
  spit(unbalanced, R"({"format":1,"nodes":2,
                      "arcs":[{"tail":0,"head":1,"capacity":1}],
                      "injections":[1.0,0.0]})");
  REQUIRE_THROWS_WITH(load_flow_problem(unbalanced),
                      "injections: unbalanced");
}

TEST_CASE("bundled grid fixtures are frozen by checksum", "[io][fixture]") {
  OrientedGraph ieee30 = load_graph(fixture("ieee30_graph.json"));
  REQUIRE(ieee30.node_count() == 30);
  REQUIRE(ieee30.arc_count() == 41);
  REQUIRE(fnv1a64(slurp(fixture("ieee30_graph.json"))) ==
          0x961aaca5dca902bfull);

  FlowProblem net18 = load_flow_problem(fixture("net18_problem.json"));
  REQUIRE(net18.graph.node_count() == 11);
  REQUIRE(net18.graph.arc_count() == 18);
  REQUIRE(fnv1a64(slurp(fixture("net18_problem.json"))) ==
          0xcc2d62e792c7ebc9ull);
}

TEST_CASE("graph files round-trip exactly", "[io][random]") {
  auto rng = testsupport::test_rng(60);
  for (int trial = 0; trial < 20; ++trial) {
    OrientedGraph g = testsupport::random_connected_graph(rng, 2, 10, 8);
    std::string path = scratch("graph_roundtrip.json");
    save_graph(g, path);
    OrientedGraph back = load_graph(path);
    REQUIRE(back.node_count() == g.node_count());
    REQUIRE(back.arc_count() == g.arc_count());
    for (int k = 0; k < g.arc_count(); ++k) {
      REQUIRE(back.arc(k).tail == g.arc(k).tail);
      REQUIRE(back.arc(k).head == g.arc(k).head);
      REQUIRE(back.arc(k).weight == g.arc(k).weight);
    }
  }
}

TEST_CASE("a missing arc weight defaults to one", "[io]") {
  std::string path = scratch("weightless.json");
  spit(path, R"({"format":1,"nodes":2,"arcs":[{"tail":0,"head":1}]})");
  OrientedGraph g = load_graph(path);
  REQUIRE(g.arc(0).weight == 1.0);
}

TEST_CASE("flow problem files round-trip exactly", "[io][random]") {
  auto rng = testsupport::test_rng(61);
  for (int trial = 0; trial < 20; ++trial) {
    OrientedGraph g = testsupport::random_connected_graph(rng, 3, 9, 6);
    FlowProblem p = testsupport::random_flow_problem(rng, g, trial % 2 == 1);
    std::string path = scratch("flow_roundtrip.json");
    save_flow_problem(p, path);
    FlowProblem back = load_flow_problem(path);
    REQUIRE(back.lower == p.lower);
    REQUIRE(back.upper == p.upper);
    REQUIRE(back.injections == p.injections);
    for (std::size_t k = 0; k < p.cost.size(); ++k)
      REQUIRE(same_cost(back.cost[k], p.cost[k]));
  }
}

TEST_CASE("OPF problem files round-trip exactly", "[io][random]") {
  auto rng = testsupport::test_rng(62);
  for (int trial = 0; trial < 20; ++trial) {
    OpfProblem p = testsupport::random_opf_problem(rng);
    if (trial % 3 == 0)
      p.terminal_level = p.storage.initial_level;
    std::string path = scratch("opf_roundtrip.json");
    save_opf_problem(p, path);
    OpfProblem back = load_opf_problem(path);
    REQUIRE(back.horizon == p.horizon);
    REQUIRE(back.susceptance == p.susceptance);
    REQUIRE(back.line_limit == p.line_limit);
    REQUIRE(back.loads == p.loads);
    REQUIRE(back.generators.min_output == p.generators.min_output);
    REQUIRE(back.generators.max_output == p.generators.max_output);
    for (std::size_t v = 0; v < p.generators.cost.size(); ++v)
      REQUIRE(same_cost(back.generators.cost[v], p.generators.cost[v]));
    REQUIRE(back.storage.level_min == p.storage.level_min);
    REQUIRE(back.storage.level_max == p.storage.level_max);
    REQUIRE(back.storage.charge_min == p.storage.charge_min);
    REQUIRE(back.storage.charge_max == p.storage.charge_max);
    REQUIRE(back.storage.initial_level == p.storage.initial_level);
    REQUIRE(back.storage.retention == p.storage.retention);
    REQUIRE(back.terminal_level.has_value() == p.terminal_level.has_value());
    if (p.terminal_level)
      REQUIRE(*back.terminal_level == *p.terminal_level);
  }
}

TEST_CASE("basis files round-trip exactly", "[io][random]") {
  auto rng = testsupport::test_rng(63);
  for (int trial = 0; trial < 20; ++trial) {
    OrientedGraph g = testsupport::random_connected_graph(rng, 3, 9, 6);
    CycleBasis basis =
        trial % 2 == 0 ? fundamental_basis(g) : horton_basis(g);
    std::string path = scratch("basis_roundtrip.json");
    save_basis(basis, path);
    CycleBasis back = load_basis(path);
    REQUIRE(back.mu == basis.mu);
    REQUIRE(back.source == basis.source);
    REQUIRE(back.B == basis.B);
    for (int i = 0; i < basis.mu; ++i) {
      const OrientedCycle& a = back.cycles[static_cast<std::size_t>(i)];
      const OrientedCycle& b = basis.cycles[static_cast<std::size_t>(i)];
      REQUIRE(a.arc_ids == b.arc_ids);
      REQUIRE(a.entries == b.entries);
      REQUIRE(a.weight == b.weight);
      REQUIRE(a.defining_arc == b.defining_arc);
    }
  }
}

TEST_CASE("schedules round-trip and accept bare arrays", "[io]") {
  Schedule s;
  s.push_back({50, Eigen::VectorXd::LinSpaced(4, -1.5, 1.5)});
  s.push_back({120, Eigen::VectorXd::Zero(4)});
  std::string path = scratch("schedule_roundtrip.json");
  save_schedule(s, path);
  Schedule back = load_schedule(path);
  REQUIRE(back.size() == 2);
  REQUIRE(back[0].round == 50);
  REQUIRE(back[1].round == 120);
  REQUIRE(back[0].injections == s[0].injections);
  REQUIRE(back[1].injections == s[1].injections);

  std::string bare = scratch("schedule_bare.json");
  spit(bare, R"([{"round": 3, "injections": [1.0, -1.0]}])");
  Schedule plain = load_schedule(bare);
  REQUIRE(plain.size() == 1);
  REQUIRE(plain[0].round == 3);
  REQUIRE(plain[0].injections(0) == 1.0);

  std::string wrong = scratch("schedule_wrong.json");
  spit(wrong, R"({"format": 1, "rounds": []})");
  REQUIRE_THROWS_AS(load_schedule(wrong), ValidationError);
}

TEST_CASE("solution files feed back as references", "[io]") {
  FlowProblem p = load_flow_problem(fixture("triangle_problem.json"));
  FlowSolution sol = solve_flow(p, {});
  REQUIRE(sol.report.status == SolveStatus::Optimal);
  std::string path = scratch("solution.json");
  save_flow_solution(sol, path);

  std::vector<Eigen::VectorXd> refs = load_references(path);
  REQUIRE(refs.size() == 1);
  REQUIRE(refs[0].size() == sol.x.size());
  REQUIRE((refs[0] - sol.x).cwiseAbs().maxCoeff() == 0.0);

  std::string multi = scratch("references.json");
  spit(multi, R"({"format":1,"references":[[1.0,2.0],[3.0,4.0]]})");
  std::vector<Eigen::VectorXd> phases = load_references(multi);
  REQUIRE(phases.size() == 2);
  REQUIRE(phases[1](1) == 4.0);

  std::string none = scratch("no_flows.json");
  spit(none, R"({"format":1,"status":"optimal"})");
  REQUIRE_THROWS_AS(load_references(none), ValidationError);
}

TEST_CASE("round traces print one row per agent per round", "[io]") {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  RoundTrace trace;
  trace.agent_count = 2;
  trace.arc_count = 3;

  RoundRecord r1;
  r1.round = 1;
  r1.phase = 0;
  r1.switched = false;
  r1.agent_disagreement = Eigen::VectorXd(2);
  r1.agent_disagreement << 0.25, 0.125;
  r1.objective = 1.5;
  r1.arc_error = Eigen::MatrixXd::Constant(2, 3, nan);
  r1.arc_error(0, 0) = 0.5;
  trace.rounds.push_back(r1);

  RoundRecord r2 = r1;
  r2.round = 2;
  r2.phase = 1;
  r2.switched = true;
  r2.agent_disagreement << 0.0625, 0.03125;
  r2.objective = 2.0;
  trace.rounds.push_back(r2);

  std::string path = scratch("trace.csv");
  emit_trace(trace, path);
  REQUIRE(slurp(path) ==
          "round,agent,phase,switched,disagreement,objective,err_0,err_1,err_2\n"
          "1,0,0,0,0.25,1.5,0.5,,\n"
          "1,1,0,0,0.125,1.5,,,\n"
          "2,0,1,1,0.0625,2,0.5,,\n"
          "2,1,1,1,0.03125,2,,,\n");
}

TEST_CASE("empty traces are an error, not an empty file", "[io]") {
  std::string path = scratch("never_written.csv");
  std::filesystem::remove(path);
  RoundTrace empty;
  REQUIRE_THROWS_AS(emit_trace(empty, path), IoError);
  REQUIRE_FALSE(std::filesystem::exists(path));

  SolveReport blank;
  REQUIRE_THROWS_AS(emit_solver_trace(blank, path), IoError);
  REQUIRE_FALSE(std::filesystem::exists(path));
}

TEST_CASE("solver traces list residuals per iteration", "[io]") {
  SolveReport report;
  report.primal_history = {0.5, 0.25};
  report.dual_history = {0.125, 0.0625};
  report.objective_history = {3.0, 2.5};
  std::string path = scratch("solver_trace.csv");
  emit_solver_trace(report, path);
  REQUIRE(slurp(path) ==
          "iteration,primal_res,dual_res,objective\n"
          "1,0.5,0.125,3\n"
          "2,0.25,0.0625,2.5\n");
}

TEST_CASE("format versions are enforced", "[io]") {
  std::string missing = scratch("no_format.json");
  spit(missing, R"({"nodes":2,"arcs":[]})");
  try {
    load_graph(missing);
    FAIL("expected a format error");
  } catch (const ValidationError& e) {
    REQUIRE(e.field() == "format");
  }

  std::string future = scratch("future_format.json");
  spit(future, R"({"format":2,"nodes":2,"arcs":[]})");
  REQUIRE_THROWS_AS(load_graph(future), ValidationError);

  std::string scalar = scratch("scalar.json");
  spit(scalar, "3\n");
  REQUIRE_THROWS_AS(load_graph(scalar), ValidationError);
}

TEST_CASE("malformed files raise parse or io errors", "[io]") {
  std::string garbage = scratch("garbage.json");
  spit(garbage, "{nodes: not json");
  REQUIRE_THROWS_AS(load_graph(garbage), ParseError);
  REQUIRE_THROWS_AS(load_graph(scratch("does_not_exist.json")), IoError);
}

TEST_CASE("problem files dispatch on their type", "[io][fixture]") {
  auto opf = load_problem(fixture("storage_demo.json"));
  REQUIRE(std::holds_alternative<OpfProblem>(opf));
  auto flow = load_problem(fixture("triangle_problem.json"));
  REQUIRE(std::holds_alternative<FlowProblem>(flow));

  REQUIRE_THROWS_AS(load_flow_problem(fixture("storage_demo.json")),
                    ValidationError);
  REQUIRE_THROWS_AS(load_opf_problem(fixture("triangle_problem.json")),
                    ValidationError);

  std::string odd = scratch("odd_type.json");
  spit(odd, R"({"format":1,"type":"socp","nodes":2,"arcs":[]})");
  REQUIRE_THROWS_AS(load_problem(odd), ValidationError);
}

TEST_CASE("basis files are validated structurally", "[io]") {
  auto reject = [](const char* cycles) {
    std::string path = scratch("bad_basis.json");
    spit(path, std::string(R"({"format":1,"arc_count":3,"cycles":)") +
                   cycles + "}");
    REQUIRE_THROWS_AS(load_basis(path), ValidationError);
  };
  reject(R"([{"arcs":[1,0],"entries":[1,1]}])");        // not ascending
  reject(R"([{"arcs":[0,1],"entries":[1,2]}])");        // entry not a sign
  reject(R"([{"arcs":[0,3],"entries":[1,1]}])");        // arc out of range
  reject(R"([{"arcs":[],"entries":[]}])");              // empty cycle
  reject(R"([{"arcs":[0,1],"entries":[1]}])");          // misaligned
}

TEST_CASE("the command line wires every subcommand", "[io][cli]") {
  std::string tri_graph = fixture("triangle_graph.json");
  std::string net18 = fixture("net18_problem.json");

  CliResult help = run_cli("--help");
  REQUIRE(help.exit_code == 0);
  for (const char* name :
       {"basis", "reduce", "solve", "maxflow", "opf", "simulate", "validate"})
    REQUIRE(help.out.find(name) != std::string::npos);

  CliResult basis = run_cli("basis " + tri_graph);
  REQUIRE(basis.exit_code == 0);
  REQUIRE(basis.out.find("\"mu\": 1") != std::string::npos);

  std::string bad = scratch("cli_bad.json");
  spit(bad, R"({"format":1,"nodes":2,
               "arcs":[{"tail":0,"head":1,"capacity":1}],
               "injections":[1.0,0.0]})");
  CliResult invalid = run_cli("validate " + bad);
  REQUIRE(invalid.exit_code == 1);
  REQUIRE(invalid.out.find("injections") != std::string::npos);

  CliResult ok = run_cli("validate " + net18);
  REQUIRE(ok.exit_code == 0);
  REQUIRE(ok.out.find("11 nodes") != std::string::npos);

  std::string basis_out = scratch("cli_net18_basis.json");
  REQUIRE(run_cli("basis " + net18 + " --method horton --out " + basis_out)
              .exit_code == 0);

  std::string reduced_out = scratch("cli_net18_reduced.json");
  CliResult reduced =
      run_cli("reduce " + net18 + " --basis " + basis_out + " --out " +
              reduced_out);
  REQUIRE(reduced.exit_code == 0);
  REQUIRE(slurp(reduced_out).find("reduced_flow") != std::string::npos);

  std::string full_sol = scratch("cli_full_sol.json");
  std::string red_sol = scratch("cli_red_sol.json");
  std::string solver_csv = scratch("cli_solver_trace.csv");
  REQUIRE(run_cli("solve " + net18 + " --out " + full_sol).exit_code == 0);
  REQUIRE(run_cli("solve " + net18 + " --reduced " + basis_out + " --out " +
                  red_sol + " --trace " + solver_csv)
              .exit_code == 0);
  double full_obj = detail::parse_file(full_sol).at("objective").get<double>();
  double red_obj = detail::parse_file(red_sol).at("objective").get<double>();
  REQUIRE(std::abs(full_obj - red_obj) <=
          1e-6 * std::max(1.0, std::abs(full_obj)));
  REQUIRE(slurp(solver_csv).rfind("iteration,primal_res,dual_res,objective",
                                  0) == 0);

  CliResult cut = run_cli("maxflow " + net18 + " --sources 1,4 --sinks 9,11");
  REQUIRE(cut.exit_code == 0);
  REQUIRE(cut.out.find("max flow: 82") != std::string::npos);

  CliResult opf = run_cli("opf " + fixture("storage_demo.json"));
  REQUIRE(opf.exit_code == 0);
  REQUIRE(opf.out.find("status: optimal") != std::string::npos);

  std::string tri_basis = scratch("cli_tri_basis.json");
  std::string tri_sol = scratch("cli_tri_sol.json");
  std::string sim_csv = scratch("cli_sim_trace.csv");
  REQUIRE(run_cli("basis " + fixture("triangle_problem.json") + " --out " +
                  tri_basis)
              .exit_code == 0);
  REQUIRE(run_cli("solve " + fixture("triangle_problem.json") + " --out " +
                  tri_sol)
              .exit_code == 0);
  CliResult sim = run_cli("simulate " + fixture("triangle_problem.json") +
                          " --basis " + tri_basis + " --trace " + sim_csv +
                          " --reference " + tri_sol);
  REQUIRE(sim.exit_code == 0);
  REQUIRE(sim.out.find("status: converged") != std::string::npos);
  REQUIRE(slurp(sim_csv).rfind("round,agent,phase,switched", 0) == 0);

  REQUIRE(run_cli("frobnicate").exit_code != 0);
}
