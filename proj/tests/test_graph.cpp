#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <functional>
#include <sstream>
#include <vector>

#include "dagvi/graph.hpp"

using namespace dagvi;

namespace {

// independent cycle check via DFS coloring, used as a second opinion on the
// source-elimination implementation
bool dfs_acyclic(const AdjacencyMatrix& a) {
  const int d = a.dim();
  std::vector<int> color(d, 0);  // 0 white, 1 on stack, 2 done
  std::function<bool(int)> visit = [&](int v) {
    color[v] = 1;
    for (int j = 0; j < d; ++j) {
      if (!a.edge(v, j)) continue;
      if (color[j] == 1) return false;
      if (color[j] == 0 && !visit(j)) return false;
    }
    color[v] = 2;
    return true;
  };
  for (int v = 0; v < d; ++v)
    if (color[v] == 0 && !visit(v)) return false;
  return true;
}

AdjacencyMatrix chain3() {
  AdjacencyMatrix a(3);
  a.set_edge(0, 1);
  a.set_edge(1, 2);
  return a;
}

}  // namespace

TEST_CASE("adjacency matrix basics") {
  AdjacencyMatrix a(3);
  CHECK(a.dim() == 3);
  CHECK(a.edge_count() == 0);
  a.set_edge(0, 2);
  CHECK(a.edge(0, 2));
  CHECK_FALSE(a.edge(2, 0));
  CHECK(a.edge_count() == 1);
  CHECK_THROWS_AS(a.set_edge(1, 1), std::invalid_argument);
  CHECK(a.parents(2) == std::vector<int>{0});
  CHECK(a.parent_mask(2) == 0b001u);

  CHECK_THROWS_AS(AdjacencyMatrix::from_rows({{0, 1}, {0}}), std::invalid_argument);
  CHECK_THROWS_AS(AdjacencyMatrix::from_rows({{0, 2}, {0, 0}}), std::invalid_argument);
  CHECK_THROWS_AS(AdjacencyMatrix::from_rows({{1, 0}, {0, 0}}), std::invalid_argument);
  const auto b = AdjacencyMatrix::from_rows({{0, 1}, {0, 0}});
  CHECK(b.edge(0, 1));
}

TEST_CASE("linearization order and round trip") {
  AdjacencyMatrix a(2);
  a.set_edge(0, 1);
  CHECK(linearize(a) == std::vector<std::uint8_t>{1, 0});
  CHECK(linearize(AdjacencyMatrix(2)) == std::vector<std::uint8_t>{0, 0});

  // row-major off-diagonal positions
  CHECK(position_of(3, 0) == std::pair<int, int>{0, 1});
  CHECK(position_of(3, 1) == std::pair<int, int>{0, 2});
  CHECK(position_of(3, 2) == std::pair<int, int>{1, 0});
  CHECK(position_of(3, 5) == std::pair<int, int>{2, 1});

  for (std::uint64_t code = 0; code < num_graph_codes(3); ++code) {
    const AdjacencyMatrix g = graph_from_index(3, code);
    CHECK(delinearize(3, linearize(g)) == g);
    CHECK(graph_index(g).code == code);
  }
}

TEST_CASE("acyclicity: examples and exhaustive counts") {
  CHECK(is_acyclic(AdjacencyMatrix(4)));
  AdjacencyMatrix two_cycle(2);
  two_cycle.set_edge(0, 1);
  two_cycle.set_edge(1, 0);
  CHECK_FALSE(is_acyclic(two_cycle));

  int count3 = 0;
  for (std::uint64_t code = 0; code < num_graph_codes(3); ++code) {
    const AdjacencyMatrix g = graph_from_index(3, code);
    const bool acyc = is_acyclic(g);
    CHECK(acyc == dfs_acyclic(g));
    count3 += acyc;
  }
  CHECK(count3 == 25);

  int count4 = 0;
  for (std::uint64_t code = 0; code < num_graph_codes(4); ++code) {
    const AdjacencyMatrix g = graph_from_index(4, code);
    const bool acyc = is_acyclic(g);
    CHECK(acyc == dfs_acyclic(g));
    count4 += acyc;
  }
  CHECK(count4 == 543);
}

TEST_CASE("dag penalty matches closed forms") {
  CHECK(dag_penalty(AdjacencyMatrix(3)) == 0.0);

  AdjacencyMatrix chain(2);
  chain.set_edge(0, 1);
  CHECK(dag_penalty(chain) == 0.0);

  AdjacencyMatrix two_cycle(2);
  two_cycle.set_edge(0, 1);
  two_cycle.set_edge(1, 0);
  // exchange matrix has eigenvalues +-1
  CHECK_THAT(dag_penalty(two_cycle),
             Catch::Matchers::WithinAbs(std::exp(1.0) + std::exp(-1.0) - 2.0, 1e-12));

  // single directed 6-cycle: tr exp = 6 sum_r 1/(6r)!
  AdjacencyMatrix cyc6(6);
  for (int i = 0; i < 6; ++i) cyc6.set_edge(i, (i + 1) % 6);
  double ref6 = 0.0;
  for (double fact = 1.0, r = 0;; ++r) {
    ref6 += 6.0 / fact;
    if (6.0 / fact < 1e-30) break;
    for (int s = 1; s <= 6; ++s) fact *= 6 * r + s;
  }
  CHECK_THAT(dag_penalty(cyc6), Catch::Matchers::WithinAbs(ref6 - 6.0, 1e-12));

  // complete digraph K_d: A = J - I, eigenvalues d-1 once and -1 (d-1) times
  for (int d : {8, 32}) {
    AdjacencyMatrix full(d);
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j)
        if (i != j) full.set_edge(i, j);
    const double ref = std::exp(static_cast<double>(d - 1)) + (d - 1) * std::exp(-1.0) - d;
    CHECK_THAT(dag_penalty(full), Catch::Matchers::WithinRel(ref, 1e-10));
  }
}

TEST_CASE("dag penalty is zero exactly on DAGs up to d = 4") {
  for (int d : {2, 3, 4}) {
    for (std::uint64_t code = 0; code < num_graph_codes(d); ++code) {
      const AdjacencyMatrix g = graph_from_index(d, code);
      const double pen = dag_penalty(g);
      if (is_acyclic(g)) {
        CHECK(pen == 0.0);
      } else {
        CHECK(pen > 1e-8);
      }
    }
  }
}

TEST_CASE("shd convention and metric axioms") {
  AdjacencyMatrix fwd(2), bwd(2), empty2(2);
  fwd.set_edge(0, 1);
  bwd.set_edge(1, 0);
  CHECK(shd(fwd, fwd) == 0);
  CHECK(shd(fwd, bwd) == 1);

  AdjacencyMatrix two_edges(3);
  two_edges.set_edge(0, 1);
  two_edges.set_edge(1, 2);
  CHECK(shd(AdjacencyMatrix(3), two_edges) == 2);

  AdjacencyMatrix both(2);
  both.set_edge(0, 1);
  both.set_edge(1, 0);
  CHECK(shd(empty2, both) == 2);
  CHECK(shd(fwd, both) == 1);

  CHECK_THROWS_AS(shd(AdjacencyMatrix(2), AdjacencyMatrix(3)), DimensionMismatchError);

  const int n = static_cast<int>(num_graph_codes(3));
  std::vector<std::vector<int>> dist(n, std::vector<int>(n));
  std::vector<AdjacencyMatrix> graphs;
  graphs.reserve(n);
  for (int c = 0; c < n; ++c) graphs.push_back(graph_from_index(3, c));
  for (int x = 0; x < n; ++x)
    for (int y = 0; y < n; ++y) dist[x][y] = shd(graphs[x], graphs[y]);
  for (int x = 0; x < n; ++x) {
    REQUIRE(dist[x][x] == 0);
    for (int y = 0; y < n; ++y) {
      REQUIRE(dist[x][y] == dist[y][x]);
      REQUIRE((dist[x][y] == 0) == (x == y));
    }
  }
  for (int x = 0; x < n; ++x)
    for (int y = 0; y < n; ++y)
      for (int z = 0; z < n; ++z) REQUIRE(dist[x][z] <= dist[x][y] + dist[y][z]);
}

TEST_CASE("topological order") {
  CHECK(topological_order(chain3()) == std::vector<int>{0, 1, 2});

  const auto o1 = topological_order(AdjacencyMatrix(3));
  const auto o2 = topological_order(AdjacencyMatrix(3));
  CHECK(o1 == o2);  // deterministic for a fixed input

  AdjacencyMatrix two_cycle(2);
  two_cycle.set_edge(0, 1);
  two_cycle.set_edge(1, 0);
  CHECK_THROWS_AS(topological_order(two_cycle), CyclicGraphError);

  int successes = 0;
  for (std::uint64_t code = 0; code < num_graph_codes(3); ++code) {
    const AdjacencyMatrix g = graph_from_index(3, code);
    try {
      const auto order = topological_order(g);
      ++successes;
      std::vector<int> rank(3);
      for (int r = 0; r < 3; ++r) rank[order[r]] = r;
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
          if (g.edge(i, j)) REQUIRE(rank[i] < rank[j]);
    } catch (const CyclicGraphError&) {
      REQUIRE_FALSE(is_acyclic(g));
    }
  }
  CHECK(successes == 25);
}

TEST_CASE("skeletons, v-structures, markov equivalence") {
  AdjacencyMatrix chain = chain3();
  AdjacencyMatrix reversed(3);
  reversed.set_edge(2, 1);
  reversed.set_edge(1, 0);
  AdjacencyMatrix fork(3);
  fork.set_edge(1, 0);
  fork.set_edge(1, 2);
  AdjacencyMatrix collider(3);
  collider.set_edge(0, 1);
  collider.set_edge(2, 1);

  CHECK(markov_equivalent(chain, reversed));
  CHECK(markov_equivalent(chain, fork));
  CHECK_FALSE(markov_equivalent(chain, collider));
  CHECK(same_skeleton(chain, collider));
  CHECK(v_structures(collider) == std::set<std::tuple<int, int, int>>{{0, 2, 1}});
  CHECK(v_structures(chain).empty());

  // adjacent parents do not form a v-structure
  AdjacencyMatrix shielded(3);
  shielded.set_edge(0, 1);
  shielded.set_edge(2, 1);
  shielded.set_edge(0, 2);
  CHECK(v_structures(shielded).empty());
}

TEST_CASE("serialization round trips") {
  AdjacencyMatrix a(3);
  a.set_edge(0, 2);
  a.set_edge(1, 2);

  const auto j = adjacency_to_json(a);
  CHECK(adjacency_from_json(j) == a);
  CHECK(j.dump() == "[[0,0,1],[0,0,1],[0,0,0]]");

  std::ostringstream os;
  write_edge_list(a, os);
  CHECK(os.str() == "1 3\n2 3\n");
  std::istringstream is(os.str());
  CHECK(read_edge_list(3, is) == a);

  std::istringstream bad("1 9\n");
  CHECK_THROWS_AS(read_edge_list(3, bad), std::invalid_argument);
}
