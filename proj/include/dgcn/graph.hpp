#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/SparseCore>

namespace dgcn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using SparseMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;
using IntMatrix = Eigen::MatrixXi;
using BoolMatrix = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>;

/// Unordered agent pairs (k, z) with k != z, stored in both orientations.
using AgentPairSet = std::set<std::pair<int, int>>;

enum class ShiftKind { sym_renorm, row_stochastic, laplacian, identity };

std::string to_string(ShiftKind kind);
ShiftKind shift_kind_from_string(const std::string& name);

struct Edge {
  int src = 0;
  int dst = 0;
  double weight = 1.0;

  friend bool operator==(const Edge&, const Edge&) = default;
};

/// Node-attributed undirected graph. `edges` holds every edge in both
/// directions (self-loops once), sorted by (src, dst).
struct DataGraph {
  std::size_t n = 0;
  std::vector<Edge> edges;
  Matrix features;
  /// Class label per node, -1 when unlabeled. Empty for regression data.
  std::vector<int> classes;
  /// Real-valued targets (n x q), NaN rows for unlabeled nodes. Empty for
  /// classification data.
  Matrix targets;
  std::vector<int> train_mask;
  /// Evaluation nodes. When empty, labeled nodes outside train_mask are used.
  std::vector<int> test_mask;
  SparseMatrix shift;
  std::optional<ShiftKind> shift_kind;

  bool is_classification() const { return !classes.empty(); }
  bool is_labeled(int node) const;
  std::size_t num_classes() const;
  std::size_t feature_dim() const { return static_cast<std::size_t>(features.cols()); }
  /// Unique undirected edges, self-loops included.
  std::size_t undirected_edge_count() const;
  std::vector<int> evaluation_nodes() const;

  /// Throws ValidationError when any structural invariant is broken.
  void validate() const;
};

/// Builds the symmetric edge list from undirected pairs. A pair listed in
/// both orientations must carry the same weight; anything else is rejected
/// as directed input.
std::vector<Edge> make_undirected_edges(std::size_t n, const std::vector<Edge>& pairs);

DataGraph normalize_shift(DataGraph graph, ShiftKind kind);

struct Partition {
  std::size_t m = 0;
  std::vector<int> assign;
  std::vector<std::vector<int>> agent_nodes;
  std::vector<std::vector<int>> agent_train;
  /// B(k, z): stored directed edges (i, j) with a(i) = k and a(j) = z.
  IntMatrix boundary;
  /// A(k, z) = 1 iff B(k, z) = 0 and k != z.
  BoolMatrix forbidden;
  /// BFS seed nodes (empty for partitions built from an explicit assignment).
  std::vector<int> seeds;

  /// Local row index of each node inside its agent's node list.
  std::vector<int> local_index() const;
};

Partition make_partition(const DataGraph& graph, std::vector<int> assign, std::size_t m);

/// Randomized multi-source BFS growth from m uniformly drawn seeds.
Partition partition_bfs(const DataGraph& graph, std::size_t m, std::uint64_t rng_seed);
/// The same growth from caller-chosen seed nodes, one agent per seed.
Partition partition_bfs_from(const DataGraph& graph, std::vector<int> seeds, std::uint64_t rng_seed);

/// Agent pairs with at least one data edge between them.
AgentPairSet required_pairs(const Partition& partition);

struct PruneResult {
  DataGraph graph;
  Partition partition;
  std::size_t original_edges = 0;
  std::size_t surviving_edges = 0;
  double survival_fraction = 1.0;
};

/// Drops every cross-agent data edge whose agent pair is not in comm_edges and
/// re-normalizes the shift with the graph's original kind.
PruneResult prune_to_comm(const DataGraph& graph, const Partition& partition,
                          const AgentPairSet& comm_edges);

}  // namespace dgcn
