#include "dgcn/graph.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include "dgcn/error.hpp"

namespace dgcn {

std::string to_string(ShiftKind kind) {
  switch (kind) {
    case ShiftKind::sym_renorm: return "sym_renorm";
    case ShiftKind::row_stochastic: return "row_stochastic";
    case ShiftKind::laplacian: return "laplacian";
    case ShiftKind::identity: return "identity";
  }
  return "unknown";
}

ShiftKind shift_kind_from_string(const std::string& name) {
  if (name == "sym_renorm") return ShiftKind::sym_renorm;
  if (name == "row_stochastic") return ShiftKind::row_stochastic;
  if (name == "laplacian") return ShiftKind::laplacian;
  if (name == "identity") return ShiftKind::identity;
  throw ValidationError("unknown shift kind '" + name + "'");
}

bool DataGraph::is_labeled(int node) const {
  if (is_classification()) return classes[static_cast<std::size_t>(node)] >= 0;
  return targets.rows() == static_cast<Eigen::Index>(n) && targets.row(node).allFinite();
}

std::size_t DataGraph::num_classes() const {
  int top = -1;
  for (int c : classes) top = std::max(top, c);
  return static_cast<std::size_t>(top + 1);
}

std::size_t DataGraph::undirected_edge_count() const {
  std::size_t count = 0;
  for (const auto& e : edges)
    if (e.src <= e.dst) ++count;
  return count;
}

std::vector<int> DataGraph::evaluation_nodes() const {
  if (!test_mask.empty()) return test_mask;
  std::vector<char> in_train(n, 0);
  for (int i : train_mask) in_train[static_cast<std::size_t>(i)] = 1;
  std::vector<int> out;
  for (std::size_t i = 0; i < n; ++i)
    if (!in_train[i] && is_labeled(static_cast<int>(i))) out.push_back(static_cast<int>(i));
  return out;
}

void DataGraph::validate() const {
  auto fail = [](const std::string& msg) { throw ValidationError("data graph: " + msg); };
  if (features.rows() != static_cast<Eigen::Index>(n))
    fail("feature rows " + std::to_string(features.rows()) + " != node count " + std::to_string(n));
  if (!classes.empty() && classes.size() != n) fail("class vector length does not match node count");
  if (targets.size() > 0 && targets.rows() != static_cast<Eigen::Index>(n))
    fail("target rows do not match node count");
  for (const auto& e : edges) {
    if (e.src < 0 || e.dst < 0 || static_cast<std::size_t>(e.src) >= n ||
        static_cast<std::size_t>(e.dst) >= n)
      fail("edge (" + std::to_string(e.src) + ", " + std::to_string(e.dst) + ") has an endpoint outside [0, " +
           std::to_string(n) + ")");
    if (!(e.weight >= 0.0) || !std::isfinite(e.weight))
      fail("edge (" + std::to_string(e.src) + ", " + std::to_string(e.dst) + ") has invalid weight");
  }
  if (!std::is_sorted(edges.begin(), edges.end(), [](const Edge& a, const Edge& b) {
        return std::pair(a.src, a.dst) < std::pair(b.src, b.dst);
      }))
    fail("edge list is not sorted");
  for (std::size_t k = 1; k < edges.size(); ++k)
    if (edges[k].src == edges[k - 1].src && edges[k].dst == edges[k - 1].dst)
      fail("duplicate edge (" + std::to_string(edges[k].src) + ", " + std::to_string(edges[k].dst) + ")");
  for (const auto& e : edges) {
    auto it = std::lower_bound(edges.begin(), edges.end(), std::pair(e.dst, e.src),
                               [](const Edge& a, const std::pair<int, int>& key) {
                                 return std::pair(a.src, a.dst) < key;
                               });
    if (it == edges.end() || it->src != e.dst || it->dst != e.src || it->weight != e.weight)
      fail("directed edge (" + std::to_string(e.src) + ", " + std::to_string(e.dst) +
           ") has no matching reverse edge; only undirected graphs are supported");
  }
  for (int i : train_mask) {
    if (i < 0 || static_cast<std::size_t>(i) >= n) fail("train node " + std::to_string(i) + " out of range");
    if (!is_labeled(i)) fail("train node " + std::to_string(i) + " has no label");
  }
  for (int i : test_mask)
    if (i < 0 || static_cast<std::size_t>(i) >= n) fail("test node " + std::to_string(i) + " out of range");
  if (shift_kind && (shift.rows() != static_cast<Eigen::Index>(n) || shift.cols() != static_cast<Eigen::Index>(n)))
    fail("shift operator is not n x n");
}

std::vector<Edge> make_undirected_edges(std::size_t n, const std::vector<Edge>& pairs) {
  std::map<std::pair<int, int>, double> table;
  std::set<std::pair<int, int>> seen;
  for (const auto& e : pairs) {
    if (e.src < 0 || e.dst < 0 || static_cast<std::size_t>(e.src) >= n || static_cast<std::size_t>(e.dst) >= n)
      throw ValidationError("edge (" + std::to_string(e.src) + ", " + std::to_string(e.dst) +
                            ") has an endpoint outside [0, " + std::to_string(n) + ")");
    if (!(e.weight >= 0.0) || !std::isfinite(e.weight))
      throw ValidationError("edge (" + std::to_string(e.src) + ", " + std::to_string(e.dst) +
                            ") has a negative or non-finite weight");
    if (!seen.emplace(e.src, e.dst).second)
      throw ValidationError("duplicate edge (" + std::to_string(e.src) + ", " + std::to_string(e.dst) + ")");
    auto key = std::minmax(e.src, e.dst);
    auto [it, inserted] = table.emplace(std::pair(key.first, key.second), e.weight);
    if (!inserted && it->second != e.weight)
      throw ValidationError("edge (" + std::to_string(e.src) + ", " + std::to_string(e.dst) +
                            ") appears with two different weights; directed graphs are not supported");
  }
  std::vector<Edge> out;
  out.reserve(table.size() * 2);
  for (const auto& [key, w] : table) {
    out.push_back({key.first, key.second, w});
    if (key.first != key.second) out.push_back({key.second, key.first, w});
  }
  std::sort(out.begin(), out.end(),
            [](const Edge& a, const Edge& b) { return std::pair(a.src, a.dst) < std::pair(b.src, b.dst); });
  return out;
}

DataGraph normalize_shift(DataGraph graph, ShiftKind kind) {
  const std::size_t n = graph.n;
  std::vector<Eigen::Triplet<double>> trip;
  const bool self_loops = kind == ShiftKind::sym_renorm;

  std::vector<double> degree(n, self_loops ? 1.0 : 0.0);
  for (const auto& e : graph.edges) degree[static_cast<std::size_t>(e.src)] += e.weight;

  if (kind != ShiftKind::identity && kind != ShiftKind::sym_renorm) {
    for (std::size_t i = 0; i < n; ++i)
      if (!(degree[i] > 0.0))
        throw ValidationError("node " + std::to_string(i) + " has zero degree; shift kind " + to_string(kind) +
                              " requires positive degree");
  }

  switch (kind) {
    case ShiftKind::identity:
      for (std::size_t i = 0; i < n; ++i) trip.emplace_back(i, i, 1.0);
      break;
    case ShiftKind::sym_renorm: {
      std::vector<char> has_loop(n, 0);
      for (const auto& e : graph.edges) {
        double w = e.weight;
        if (e.src == e.dst) {
          w += 1.0;
          has_loop[static_cast<std::size_t>(e.src)] = 1;
        }
        trip.emplace_back(e.src, e.dst,
                          w / std::sqrt(degree[static_cast<std::size_t>(e.src)] * degree[static_cast<std::size_t>(e.dst)]));
      }
      for (std::size_t i = 0; i < n; ++i)
        if (!has_loop[i]) trip.emplace_back(i, i, 1.0 / degree[i]);
      break;
    }
    case ShiftKind::row_stochastic:
      for (const auto& e : graph.edges)
        trip.emplace_back(e.src, e.dst, e.weight / degree[static_cast<std::size_t>(e.src)]);
      break;
    case ShiftKind::laplacian: {
      std::vector<char> has_loop(n, 0);
      for (const auto& e : graph.edges) {
        double w = -e.weight / std::sqrt(degree[static_cast<std::size_t>(e.src)] * degree[static_cast<std::size_t>(e.dst)]);
        if (e.src == e.dst) {
          w += 1.0;
          has_loop[static_cast<std::size_t>(e.src)] = 1;
        }
        trip.emplace_back(e.src, e.dst, w);
      }
      for (std::size_t i = 0; i < n; ++i)
        if (!has_loop[i]) trip.emplace_back(i, i, 1.0);
      break;
    }
  }

  graph.shift = SparseMatrix(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  graph.shift.setFromTriplets(trip.begin(), trip.end());
  graph.shift.makeCompressed();
  graph.shift_kind = kind;
  return graph;
}

std::vector<int> Partition::local_index() const {
  std::vector<int> out(assign.size(), -1);
  for (const auto& nodes : agent_nodes)
    for (std::size_t r = 0; r < nodes.size(); ++r) out[static_cast<std::size_t>(nodes[r])] = static_cast<int>(r);
  return out;
}

Partition make_partition(const DataGraph& graph, std::vector<int> assign, std::size_t m) {
  if (m == 0) throw ValidationError("agent count must be positive");
  if (assign.size() != graph.n) throw ValidationError("assignment length does not match node count");
  Partition p;
  p.m = m;
  p.assign = std::move(assign);
  p.agent_nodes.assign(m, {});
  p.agent_train.assign(m, {});
  for (std::size_t i = 0; i < graph.n; ++i) {
    const int a = p.assign[i];
    if (a < 0 || static_cast<std::size_t>(a) >= m)
      throw ValidationError("node " + std::to_string(i) + " assigned to agent " + std::to_string(a) +
                            " outside [0, " + std::to_string(m) + ")");
    p.agent_nodes[static_cast<std::size_t>(a)].push_back(static_cast<int>(i));
  }
  for (int i : graph.train_mask) p.agent_train[static_cast<std::size_t>(p.assign[static_cast<std::size_t>(i)])].push_back(i);
  for (auto& t : p.agent_train) std::sort(t.begin(), t.end());

  const auto mi = static_cast<Eigen::Index>(m);
  p.boundary = IntMatrix::Zero(mi, mi);
  for (const auto& e : graph.edges)
    ++p.boundary(p.assign[static_cast<std::size_t>(e.src)], p.assign[static_cast<std::size_t>(e.dst)]);
  p.forbidden = BoolMatrix::Constant(mi, mi, false);
  for (Eigen::Index k = 0; k < mi; ++k)
    for (Eigen::Index z = 0; z < mi; ++z) p.forbidden(k, z) = k != z && p.boundary(k, z) == 0;
  return p;
}

namespace {
Partition grow_partition(const DataGraph& graph, std::vector<int> seeds, std::mt19937_64& rng);
}  // namespace

Partition partition_bfs(const DataGraph& graph, std::size_t m, std::uint64_t rng_seed) {
  const std::size_t n = graph.n;
  if (n == 0) throw ValidationError("cannot partition an empty graph");
  if (m == 0 || m > n)
    throw ValidationError("agent count " + std::to_string(m) + " must lie in [1, " + std::to_string(n) + "]");

  std::mt19937_64 rng(rng_seed);
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<int> seeds(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(m));
  return grow_partition(graph, std::move(seeds), rng);
}

Partition partition_bfs_from(const DataGraph& graph, std::vector<int> seeds, std::uint64_t rng_seed) {
  const std::size_t n = graph.n;
  if (seeds.empty() || seeds.size() > n)
    throw ValidationError("seed count " + std::to_string(seeds.size()) + " must lie in [1, " + std::to_string(n) + "]");
  std::set<int> distinct;
  for (int s : seeds) {
    if (s < 0 || static_cast<std::size_t>(s) >= n) throw ValidationError("seed node " + std::to_string(s) + " out of range");
    if (!distinct.insert(s).second) throw ValidationError("seed node " + std::to_string(s) + " repeated");
  }
  std::mt19937_64 rng(rng_seed);
  return grow_partition(graph, std::move(seeds), rng);
}

namespace {

Partition grow_partition(const DataGraph& graph, std::vector<int> seeds, std::mt19937_64& rng) {
  const std::size_t n = graph.n;
  const std::size_t m = seeds.size();
  // adjacency ranges inside the sorted edge list
  std::vector<std::size_t> first(n + 1, 0);
  for (const auto& e : graph.edges) ++first[static_cast<std::size_t>(e.src) + 1];
  std::partial_sum(first.begin(), first.end(), first.begin());

  std::vector<int> assign(n, -1);
  std::vector<std::vector<int>> frontier(m);
  for (std::size_t k = 0; k < m; ++k) {
    assign[static_cast<std::size_t>(seeds[k])] = static_cast<int>(k);
    frontier[k] = {seeds[k]};
  }

  bool growing = true;
  while (growing) {
    // every agent claims the unassigned neighbours of its current frontier
    std::map<int, std::vector<int>> claims;
    for (std::size_t k = 0; k < m; ++k) {
      for (int u : frontier[k]) {
        for (std::size_t e = first[static_cast<std::size_t>(u)]; e < first[static_cast<std::size_t>(u) + 1]; ++e) {
          const int v = graph.edges[e].dst;
          if (assign[static_cast<std::size_t>(v)] != -1) continue;
          auto& c = claims[v];
          if (c.empty() || c.back() != static_cast<int>(k)) c.push_back(static_cast<int>(k));
        }
      }
    }
    for (auto& f : frontier) f.clear();
    growing = !claims.empty();
    for (auto& [node, claimants] : claims) {
      std::uniform_int_distribution<std::size_t> pick(0, claimants.size() - 1);
      const int winner = claimants[pick(rng)];
      assign[static_cast<std::size_t>(node)] = winner;
      frontier[static_cast<std::size_t>(winner)].push_back(node);
    }
    for (auto& f : frontier) std::shuffle(f.begin(), f.end(), rng);
  }

  std::size_t next = 0;
  for (std::size_t i = 0; i < n; ++i)
    if (assign[i] == -1) assign[i] = static_cast<int>(next++ % m);

  Partition p = make_partition(graph, std::move(assign), m);
  p.seeds = std::move(seeds);
  return p;
}

}  // namespace

AgentPairSet required_pairs(const Partition& partition) {
  AgentPairSet out;
  const auto m = static_cast<int>(partition.m);
  for (int k = 0; k < m; ++k)
    for (int z = 0; z < m; ++z)
      if (k != z && (partition.boundary(k, z) > 0 || partition.boundary(z, k) > 0)) out.emplace(k, z);
  return out;
}

PruneResult prune_to_comm(const DataGraph& graph, const Partition& partition, const AgentPairSet& comm_edges) {
  for (const auto& [k, z] : comm_edges)
    if (!comm_edges.count({z, k}))
      throw ValidationError("communication edge set is not symmetric: (" + std::to_string(k) + ", " +
                            std::to_string(z) + ") has no reverse");
  if (partition.assign.size() != graph.n) throw ValidationError("partition does not match graph");

  PruneResult result;
  result.graph = graph;
  result.graph.edges.clear();
  for (const auto& e : graph.edges) {
    const int a = partition.assign[static_cast<std::size_t>(e.src)];
    const int b = partition.assign[static_cast<std::size_t>(e.dst)];
    if (a == b || comm_edges.count({a, b})) result.graph.edges.push_back(e);
  }
  result.original_edges = graph.undirected_edge_count();
  result.surviving_edges = result.graph.undirected_edge_count();
  result.survival_fraction = result.original_edges == 0
                                 ? 1.0
                                 : static_cast<double>(result.surviving_edges) / static_cast<double>(result.original_edges);
  if (graph.shift_kind) result.graph = normalize_shift(std::move(result.graph), *graph.shift_kind);
  result.partition = make_partition(result.graph, partition.assign, partition.m);
  result.partition.seeds = partition.seeds;
  return result;
}

}  // namespace dgcn
