#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "dgcn/gcn.hpp"
#include "dgcn/graph.hpp"
#include "dgcn/optim.hpp"
#include "dgcn/record.hpp"
#include "dgcn/topology.hpp"

namespace dgcn {

enum class Direction { forward, backward, consensus };

struct RoundTag {
  std::size_t iteration = 0;
  std::size_t layer = 0;
  std::size_t hop = 0;
  Direction direction = Direction::forward;
};

/// Partial sums shipped from one agent to another in a single round. Each
/// payload row is one data-edge contribution D_ij * v destined to `targets[r]`.
struct MessageBatch {
  RoundTag round;
  int from = 0;
  int to = 0;
  std::vector<int> targets;  // global node ids owned by `to`
  Matrix payload;            // targets.size() x width
};

/// Scalar and batch counters. `pair_forward(k, z)` counts forward scalars
/// received by k from z.
struct MessageLog {
  std::size_t forward_batches = 0;
  std::size_t forward_scalars = 0;
  std::size_t backward_batches = 0;
  std::size_t backward_scalars = 0;
  std::size_t consensus_batches = 0;
  std::size_t consensus_scalars = 0;
  Eigen::Matrix<std::size_t, Eigen::Dynamic, Eigen::Dynamic> pair_forward;
  /// When set, every batch header (without payload) is retained.
  bool keep_headers = false;
  std::vector<MessageBatch> headers;

  void record(const MessageBatch& batch);
};

enum class ExecutionMode { sequential, parallel };

/// Runs fn(k) for every agent; in parallel mode each agent gets its own
/// thread and the call returns only after all finish (a round barrier).
void for_each_agent(ExecutionMode mode, std::size_t m, const std::function<void(std::size_t)>& fn);

/// Static per-agent view of the data graph: its own rows plus the shift
/// entries incident to its nodes.
struct AgentView {
  struct Entry {
    int target = 0;  // local row index inside the receiving agent
    int source = 0;  // local row index inside this agent
    double value = 0.0;
  };
  struct Outbox {
    int to = 0;
    std::vector<int> targets_global;
    std::vector<Entry> entries;
  };

  int id = 0;
  std::vector<int> nodes;        // global ids, ascending
  std::vector<int> train;        // global ids
  std::vector<int> train_local;  // local rows of `train`
  Matrix features;
  std::vector<Entry> local_forward;  // D_ij with i, j both local: target i, source j
  std::vector<Entry> local_adjoint;  // same entries transposed: target j, source i
  std::vector<Outbox> forward_out;   // by receiving agent, ascending
  std::vector<Outbox> adjoint_out;
};

/// Setup-time constants and views shared by the simulated agents.
struct AgentNetwork {
  std::size_t n = 0;
  std::size_t m = 0;
  std::vector<int> assign;
  std::vector<int> local_index;
  std::vector<AgentView> agents;
  AgentPairSet channels;
  /// |T_D|, distributed once at setup for loss normalization.
  std::size_t total_train = 0;
  /// Max absolute row sum of D, used by Chebyshev layers.
  double chebyshev_scale = 1.0;
};

/// Builds the agent views. Every cross-agent shift entry (i, j) needs the
/// channel (a(j) -> a(i)); a missing one raises ProtocolError naming the edge.
AgentNetwork build_agent_network(const DataGraph& graph, const Partition& partition, const AgentPairSet& channels);

struct AgentLayerCache {
  Matrix input;
  Matrix pre;
  Matrix output;
  Matrix dropout_mask;
};

struct AgentState {
  int id = 0;
  ParamBank params;
  OptimizerState optimizer;
  std::vector<AgentLayerCache> cache;
  std::uint64_t cache_fingerprint = 0;
  std::uint64_t cache_token = 0;
  std::mt19937_64 dropout_rng;
};

/// Identically shaped agents; each draws i.i.d. Gaussian weights from a
/// subseed of (seed, agent id), or copies `shared` for all agents.
std::vector<AgentState> init_agents(const ModelSpec& spec, std::size_t m, double stddev, std::uint64_t seed,
                                    const ParamBank* shared = nullptr);

struct DistOptions {
  ExecutionMode mode = ExecutionMode::sequential;
  double dropout = 0.0;
  std::size_t iteration = 0;
  MessageLog* log = nullptr;
};

/// Message-passing forward pass. Returns per-agent output rows (in the
/// order of AgentView::nodes) and fills each agent's cache.
std::vector<Matrix> dist_forward(std::vector<AgentState>& agents, const AgentNetwork& net, const ModelSpec& spec,
                                 const DistOptions& options = {});

/// dL/d(outputs) rows for each agent's own training nodes, scaled by 1/|T_D|.
std::vector<Matrix> local_loss_grads(const std::vector<Matrix>& outputs, const AgentNetwork& net,
                                     const DataGraph& graph, LossKind kind);

/// Sum over agents of their local training losses, divided by |T_D|.
double distributed_loss(const std::vector<Matrix>& outputs, const AgentNetwork& net, const DataGraph& graph,
                        LossKind kind);

/// Reverse message rounds along transposed data edges; returns the exact
/// gradient of the global loss with respect to each agent's parameters.
std::vector<ParamBank> dist_backward(std::vector<AgentState>& agents, const AgentNetwork& net, const ModelSpec& spec,
                                     const std::vector<Matrix>& loss_grads, const DistOptions& options = {});

/// Reassembles per-agent rows into an n x width matrix.
Matrix gather_rows(const AgentNetwork& net, const std::vector<Matrix>& per_agent);

/// w_k <- sum_z C(k, z) psi_z over the nonzero pattern of C, applied only when
/// `period` is set and t % period == 0. Returns whether mixing happened.
bool consensus_step(std::vector<AgentState>& agents, std::vector<Vector>& psi, const Matrix& c,
                    const AgentPairSet& channels, std::size_t t, std::optional<std::size_t> period,
                    MessageLog* log = nullptr);

struct DistConfig {
  ScheduleSpec schedule;
  OptimizerConfig optimizer;
  std::size_t iterations = 100;
  double init_std = 1e-3;
  std::uint64_t seed = 0;
  /// All agents start from the same draw (or from `initial` when given).
  bool identical_init = false;
  std::optional<ParamBank> initial;
  /// Unset means no consensus at all.
  std::optional<std::size_t> consensus_period = 1;
  LossKind loss = LossKind::cross_entropy;
  std::size_t eval_every = 10;
  bool track_stationarity = true;
  double dropout = 0.0;
  ExecutionMode mode = ExecutionMode::sequential;
  /// Communication links; defaults to the support of C.
  std::optional<AgentPairSet> channels;
};

struct DistResult {
  std::vector<AgentState> agents;
  std::vector<TrainRecord> records;
  /// Set when training aborted on a non-finite loss; records stop there.
  std::optional<std::string> failure;
  /// Stacked parameters before each step, when requested.
  std::vector<std::vector<Vector>> trajectory;
};

/// Predict, local step, and consensus for `iterations` rounds.
DistResult train_distributed(const DataGraph& graph, const Partition& partition, const MixingMatrix& mixing,
                             const ModelSpec& spec, const DistConfig& config, bool keep_trajectory = false);

}  // namespace dgcn
