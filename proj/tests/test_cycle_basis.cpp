#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <set>
#include <vector>

#include "cycleflow/cycle_basis.hpp"
#include "cycleflow/exact.hpp"
#include "cycleflow/graph.hpp"
#include "cycleflow/io.hpp"
#include "support/oracles.hpp"
#include "support/random.hpp"

using namespace cycleflow;

namespace {

OrientedGraph triangle() { return OrientedGraph(3, {{0, 1}, {1, 2}, {0, 2}}); }

OrientedGraph two_triangles() {
  return OrientedGraph(4, {{0, 1}, {1, 2}, {0, 2}, {1, 3}, {2, 3}});
}

std::string fixture(const char* name) {
  return std::string(CYCLEFLOW_FIXTURE_DIR) + "/" + name;
}

// GF(2) span containment: every row of a reduces to zero against b's rows.
bool gf2_span_contains(const Eigen::MatrixXi& b, const Eigen::MatrixXi& a) {
  exact::Gf2Eliminator elim;
  for (int i = 0; i < b.rows(); ++i) elim.add(exact::make_bit_row(b.row(i)));
  for (int i = 0; i < a.rows(); ++i) {
    exact::Gf2Eliminator probe = elim;
    if (probe.add(exact::make_bit_row(a.row(i)))) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("triangle fundamental cycle", "[basis]") {
  OrientedGraph g = triangle();
  SpanningTree t = spanning_tree(g, 1);  // tree arcs {0, 1}
  CycleBasis basis = fundamental_basis(g, t);
  REQUIRE(basis.mu == 1);
  Eigen::VectorXi want(3);
  want << -1, -1, 1;
  REQUIRE(basis.B.row(0).transpose() == want);
  REQUIRE(basis.cycles[0].defining_arc == ArcId{2});
  REQUIRE((build_incidence(g) * basis.B.transpose()).isZero());
}

TEST_CASE("a tree has an empty basis", "[basis]") {
  OrientedGraph g(4, {{0, 1}, {1, 2}, {1, 3}});
  CycleBasis basis = fundamental_basis(g);
  REQUIRE(basis.mu == 0);
  REQUIRE(basis.B.rows() == 0);
  REQUIRE(basis.cycles.empty());
}

TEST_CASE("bundled 30-node network has 12 cycles", "[basis][fixture]") {
  OrientedGraph g = load_graph(fixture("ieee30_graph.json"));
  CycleBasis tree = fundamental_basis(g);
  CycleBasis horton = horton_basis(g);
  REQUIRE(tree.mu == 12);
  REQUIRE(horton.mu == 12);
  IncidenceMatrix inc = build_incidence(g);
  REQUIRE(verify_basis(tree, inc).ok());
  REQUIRE(verify_basis(horton, inc).ok());
  REQUIRE(horton.total_weight() <= tree.total_weight());
  REQUIRE(horton.total_weight() == 56.0);
}

TEST_CASE("minimum-weight basis of the triangle", "[basis]") {
  CycleBasis basis = horton_basis(triangle());
  REQUIRE(basis.mu == 1);
  REQUIRE(basis.cycles[0].weight == 3.0);
  REQUIRE(basis.cycles[0].arc_ids == std::vector<ArcId>{0, 1, 2});
}

TEST_CASE("minimum-weight basis avoids the long outer cycle", "[basis]") {
  OrientedGraph g = two_triangles();
  CycleBasis basis = horton_basis(g);
  REQUIRE(basis.mu == 2);
  for (const OrientedCycle& c : basis.cycles) {
    CHECK(c.weight == 3.0);
    CHECK(c.arc_ids.size() == 3);
  }
  // Cross-check against the full cycle inventory: two of weight 3, one of 4.
  auto all = testsupport::enumerate_simple_cycles(g);
  REQUIRE(all.size() == 3);
  std::multiset<double> weights;
  for (const auto& [arcs, w] : all) weights.insert(w);
  REQUIRE(weights == std::multiset<double>{3.0, 3.0, 4.0});
}

TEST_CASE("certificates catch corrupted bases", "[basis]") {
  OrientedGraph g = two_triangles();
  IncidenceMatrix inc = build_incidence(g);
  CycleBasis basis = fundamental_basis(g);
  REQUIRE(verify_basis(basis, inc).ok());

  CycleBasis duplicated = basis;
  duplicated.B.row(1) = duplicated.B.row(0);
  duplicated.cycles[1] = duplicated.cycles[0];
  BasisCertificate cert = verify_basis(duplicated, inc);
  CHECK_FALSE(cert.rank_ok);

  CycleBasis flipped = basis;
  // Flip the sign of one shared-arc entry; orthogonality must break.
  for (int k = 0; k < flipped.B.cols(); ++k)
    if (flipped.B(0, k) != 0 && flipped.B(1, k) != 0) {
      flipped.B(0, k) = -flipped.B(0, k);
      break;
    }
  CHECK_FALSE(verify_basis(flipped, inc).orthogonality);

  CycleBasis narrow = basis;
  narrow.B = basis.B.leftCols(3).eval();
  REQUIRE_THROWS_AS(verify_basis(narrow, inc), ShapeMismatch);
}

TEST_CASE("both constructors certify on random graphs", "[basis][random]") {
  auto rng = testsupport::test_rng(10);
  for (int trial = 0; trial < 60; ++trial) {
    OrientedGraph g = testsupport::random_connected_graph(rng, 2, 10, 10);
    IncidenceMatrix inc = build_incidence(g);
    const int mu = g.arc_count() - g.node_count() + 1;

    CycleBasis tree = fundamental_basis(g);
    CycleBasis horton = horton_basis(g);
    for (const CycleBasis* b : {&tree, &horton}) {
      REQUIRE(b->mu == mu);
      REQUIRE(verify_basis(*b, inc).ok());
      for (int i = 0; i < b->B.rows(); ++i) {
        int nonzero = 0;
        for (int k = 0; k < b->B.cols(); ++k)
          if (b->B(i, k) != 0) ++nonzero;
        REQUIRE(nonzero >= 2);
      }
    }
    REQUIRE(horton.total_weight() <= tree.total_weight());
    // Same cycle space: mutual containment of the GF(2) row spans.
    REQUIRE(gf2_span_contains(tree.B, horton.B));
    REQUIRE(gf2_span_contains(horton.B, tree.B));
  }
}

TEST_CASE("simple graphs never yield two-arc cycles", "[basis][random]") {
  auto rng = testsupport::test_rng(11);
  for (int trial = 0; trial < 30; ++trial) {
    OrientedGraph g =
        testsupport::random_connected_graph(rng, 3, 10, 8, false);
    for (const OrientedCycle& c : horton_basis(g).cycles)
      REQUIRE(c.arc_ids.size() >= 3);
  }
}

TEST_CASE("basis construction is repeatable", "[basis]") {
  OrientedGraph g = load_graph(fixture("net18_problem.json"));
  CycleBasis a = horton_basis(g);
  CycleBasis b = horton_basis(g);
  REQUIRE(a.B == b.B);
  REQUIRE(a.total_weight() == 27.0);
  REQUIRE(fundamental_basis(g).total_weight() == 39.0);
}

TEST_CASE("rejects trees from a different graph", "[basis]") {
  OrientedGraph g = two_triangles();
  OrientedGraph other(3, {{0, 1}, {1, 2}});
  SpanningTree t = spanning_tree(other, 0);
  REQUIRE_THROWS_AS(fundamental_basis(g, t), InvalidTree);
}
