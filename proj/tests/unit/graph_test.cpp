#include <doctest.h>

#include <algorithm>
#include <random>

#include "dgcn/error.hpp"
#include "dgcn/graph.hpp"
#include "dgcn/synthetic.hpp"
#include "dgcn/topology.hpp"
#include "oracle.hpp"

using namespace dgcn;

namespace {

DataGraph bare(std::size_t n, std::vector<Edge> pairs) {
  DataGraph g;
  g.n = n;
  g.edges = make_undirected_edges(n, pairs);
  g.features = Matrix::Zero(static_cast<Eigen::Index>(n), 1);
  return g;
}

DataGraph path(std::size_t n) {
  std::vector<Edge> pairs;
  for (std::size_t i = 1; i < n; ++i) pairs.push_back({static_cast<int>(i - 1), static_cast<int>(i), 1.0});
  return normalize_shift(bare(n, pairs), ShiftKind::sym_renorm);
}

}  // namespace

TEST_CASE("self-loop renormalization of an edgeless graph is the identity") {
  const DataGraph g = normalize_shift(bare(4, {}), ShiftKind::sym_renorm);
  CHECK(Matrix(g.shift).isApprox(Matrix::Identity(4, 4), 0.0));
}

TEST_CASE("identity shift ignores the edges") {
  const DataGraph g = normalize_shift(bare(3, {{0, 1, 1.0}, {1, 2, 2.0}}), ShiftKind::identity);
  CHECK(Matrix(g.shift) == Matrix::Identity(3, 3));
}

TEST_CASE("single edge renormalizes to the half matrix") {
  const DataGraph g = normalize_shift(bare(2, {{0, 1, 1.0}}), ShiftKind::sym_renorm);
  Matrix expect(2, 2);
  expect << 0.5, 0.5, 0.5, 0.5;
  CHECK((Matrix(g.shift) - expect).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("isolated node is rejected by degree normalizations and named") {
  const DataGraph g = bare(3, {{0, 1, 1.0}});
  for (ShiftKind k : {ShiftKind::row_stochastic, ShiftKind::laplacian}) {
    try {
      normalize_shift(g, k);
      FAIL("expected a validation error");
    } catch (const ValidationError& e) {
      CHECK(std::string(e.what()).find("node 2") != std::string::npos);
    }
  }
}

TEST_CASE("shift operators keep their structural properties on random graphs") {
  std::mt19937_64 rng(7);
  for (int rep = 0; rep < 20; ++rep) {
    const DataGraph sym = oracle::random_graph(15, 2, 3, rng);
    const Matrix s = Matrix(sym.shift);
    CHECK((s - s.transpose()).cwiseAbs().maxCoeff() <= 1e-15);
    const DataGraph rs = normalize_shift(sym, ShiftKind::row_stochastic);
    const Vector sums = Matrix(rs.shift).rowwise().sum();
    CHECK((sums.array() - 1.0).abs().maxCoeff() <= 1e-12);
    const DataGraph lap = normalize_shift(sym, ShiftKind::laplacian);
    const Matrix l = Matrix(lap.shift);
    CHECK((l - l.transpose()).cwiseAbs().maxCoeff() <= 1e-15);
    CHECK(Eigen::SelfAdjointEigenSolver<Matrix>(l).eigenvalues().minCoeff() > -1e-12);
  }
}

TEST_CASE("directed or duplicated edge input is rejected") {
  CHECK_THROWS_AS(make_undirected_edges(3, {{0, 1, 1.0}, {1, 0, 2.0}}), ValidationError);
  CHECK_THROWS_AS(make_undirected_edges(3, {{0, 1, 1.0}, {0, 1, 1.0}}), ValidationError);
  CHECK_THROWS_AS(make_undirected_edges(3, {{0, 3, 1.0}}), ValidationError);
  CHECK(make_undirected_edges(3, {{0, 1, 1.0}, {1, 0, 1.0}}).size() == 2);
}

TEST_CASE("training nodes must carry labels") {
  DataGraph g = bare(3, {{0, 1, 1.0}});
  g.classes = {0, -1, 1};
  g.train_mask = {1};
  CHECK_THROWS_AS(g.validate(), ValidationError);
  g.train_mask = {0, 2};
  CHECK_NOTHROW(g.validate());
}

TEST_CASE("one agent owns everything") {
  const DataGraph g = path(6);
  const Partition p = partition_bfs(g, 1, 3);
  CHECK(std::all_of(p.assign.begin(), p.assign.end(), [](int a) { return a == 0; }));
  CHECK(p.boundary(0, 0) == static_cast<int>(g.edges.size()));
  CHECK_FALSE(p.forbidden(0, 0));
}

TEST_CASE("one node per agent on a path") {
  const DataGraph g = path(8);
  const Partition p = partition_bfs(g, 8, 11);
  std::vector<int> sorted = p.assign;
  std::sort(sorted.begin(), sorted.end());
  for (int i = 0; i < 8; ++i) CHECK(sorted[static_cast<std::size_t>(i)] == i);
  for (int k = 0; k < 8; ++k)
    for (int z = 0; z < 8; ++z) {
      if (k == z || p.boundary(k, z) == 0) continue;
      const int a = static_cast<int>(std::find(p.assign.begin(), p.assign.end(), k) - p.assign.begin());
      const int b = static_cast<int>(std::find(p.assign.begin(), p.assign.end(), z) - p.assign.begin());
      CHECK(std::abs(a - b) == 1);
    }
}

TEST_CASE("partitioning is deterministic for a seed and rejects bad agent counts") {
  std::mt19937_64 rng(3);
  const DataGraph g = oracle::random_graph(40, 2, 3, rng);
  const Partition a = partition_bfs(g, 5, 99);
  const Partition b = partition_bfs(g, 5, 99);
  CHECK(a.assign == b.assign);
  CHECK(a.seeds == b.seeds);
  CHECK_THROWS_AS(partition_bfs(g, 0, 1), ValidationError);
  CHECK_THROWS_AS(partition_bfs(g, 41, 1), ValidationError);
}

TEST_CASE("unreached components are dealt round-robin") {
  // two components; a single agent can only grow inside one of them
  DataGraph g = normalize_shift(bare(6, {{0, 1, 1.0}, {1, 2, 1.0}, {3, 4, 1.0}, {4, 5, 1.0}}), ShiftKind::sym_renorm);
  const Partition p = partition_bfs_from(g, {0, 1}, 5);
  for (int i : {3, 4, 5}) CHECK(p.assign[static_cast<std::size_t>(i)] >= 0);
  CHECK(p.assign[3] == 0);
  CHECK(p.assign[4] == 1);
  CHECK(p.assign[5] == 0);
}

TEST_CASE("boundary rows count each agent's outgoing stored edges") {
  std::mt19937_64 rng(5);
  for (int rep = 0; rep < 10; ++rep) {
    const DataGraph g = oracle::random_graph(30, 2, 3, rng);
    const Partition p = partition_bfs(g, 4, static_cast<std::uint64_t>(rep));
    for (std::size_t k = 0; k < p.m; ++k) {
      int from_k = 0;
      for (const auto& e : g.edges) from_k += p.assign[static_cast<std::size_t>(e.src)] == static_cast<int>(k);
      CHECK(p.boundary.row(static_cast<Eigen::Index>(k)).sum() == from_k);
    }
    CHECK(p.boundary == p.boundary.transpose());
  }
}

TEST_CASE("forbidden pairs are exactly the off-diagonal zeros of the boundary, also after pruning") {
  std::mt19937_64 rng(8);
  const DataGraph g = oracle::random_graph(40, 2, 3, rng, ShiftKind::sym_renorm, 0.1);
  const Partition p = partition_bfs(g, 6, 2);
  auto check = [](const Partition& q) {
    for (Eigen::Index k = 0; k < q.boundary.rows(); ++k)
      for (Eigen::Index z = 0; z < q.boundary.cols(); ++z)
        CHECK(q.forbidden(k, z) == (k != z && q.boundary(k, z) == 0));
  };
  check(p);
  check(prune_to_comm(g, p, ring_pairs(6)).partition);
  check(prune_to_comm(g, p, {}).partition);
}

TEST_CASE("pruning to a complete topology changes nothing") {
  std::mt19937_64 rng(9);
  const DataGraph g = oracle::random_graph(30, 2, 3, rng);
  const Partition p = partition_bfs(g, 5, 1);
  const PruneResult r = prune_to_comm(g, p, complete_pairs(5));
  CHECK(r.survival_fraction == 1.0);
  CHECK(r.graph.edges == g.edges);
  CHECK(Matrix(r.graph.shift) == Matrix(g.shift));
}

TEST_CASE("isolated agents keep only their internal edges") {
  std::mt19937_64 rng(10);
  const DataGraph g = oracle::random_graph(30, 2, 3, rng);
  const Partition p = partition_bfs(g, 4, 1);
  const PruneResult r = prune_to_comm(g, p, {});
  for (const auto& e : r.graph.edges)
    CHECK(p.assign[static_cast<std::size_t>(e.src)] == p.assign[static_cast<std::size_t>(e.dst)]);
  std::size_t internal = 0;
  for (const auto& e : g.edges)
    internal += e.src <= e.dst && p.assign[static_cast<std::size_t>(e.src)] == p.assign[static_cast<std::size_t>(e.dst)];
  CHECK(r.surviving_edges == internal);
  CHECK(r.graph.shift_kind == g.shift_kind);
}

TEST_CASE("pruning is idempotent") {
  std::mt19937_64 rng(12);
  const DataGraph g = oracle::random_graph(40, 2, 3, rng);
  const Partition p = partition_bfs(g, 6, 4);
  const AgentPairSet links = line_pairs(6);
  const PruneResult once = prune_to_comm(g, p, links);
  const PruneResult twice = prune_to_comm(once.graph, once.partition, links);
  CHECK(twice.graph.edges == once.graph.edges);
  CHECK(Matrix(twice.graph.shift) == Matrix(once.graph.shift));
  CHECK(twice.partition.boundary == once.partition.boundary);
  CHECK(twice.survival_fraction == 1.0);
}

TEST_CASE("asymmetric link sets are rejected") {
  const DataGraph g = path(4);
  const Partition p = partition_bfs(g, 2, 0);
  CHECK_THROWS_AS(prune_to_comm(g, p, {{0, 1}}), ValidationError);
}

TEST_CASE("line topology keeps no more data edges than the ring, and the ring fewer than the full graph") {
  SyntheticSpec spec;
  spec.nodes = 400;
  spec.seed = 3;
  const DataGraph g = normalize_shift(generate_synthetic(spec).graph, ShiftKind::sym_renorm);
  const Partition p = partition_bfs(g, 8, 3);
  const double ring = prune_to_comm(g, p, ring_pairs(8)).survival_fraction;
  const double line = prune_to_comm(g, p, line_pairs(8)).survival_fraction;
  const double full = prune_to_comm(g, p, complete_pairs(8)).survival_fraction;
  CHECK(ring < full);
  CHECK(line <= ring);
  CHECK(line > 0.0);
}

TEST_CASE("seeded growth recovers disconnected clusters") {
  SyntheticSpec spec;
  spec.nodes = 200;
  spec.classes = 4;
  spec.clusters = 4;
  spec.p_in = 0.15;
  spec.p_out = 0.0;
  spec.seed = 21;
  const SyntheticData data = generate_synthetic(spec);
  const DataGraph g = normalize_shift(data.graph, ShiftKind::sym_renorm);
  std::vector<int> seeds;
  for (int c = 0; c < 4; ++c)
    seeds.push_back(static_cast<int>(std::find(data.groups.begin(), data.groups.end(), c) - data.groups.begin()));
  const Partition p = partition_bfs_from(g, seeds, 1);
  for (std::size_t i = 0; i < g.n; ++i) CHECK(p.assign[i] == data.groups[i]);
}
