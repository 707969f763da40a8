#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dgcn/distributed.hpp"
#include "dgcn/gcn.hpp"
#include "dgcn/graph.hpp"
#include "dgcn/synthetic.hpp"
#include "dgcn/topology.hpp"

namespace dgcn {

namespace fs = std::filesystem;

enum class PartitionSource { bfs, groups, file };
/// matching: links exactly where agents share data edges. drop: matching
/// with a share of links removed at random (kept connected).
enum class TopologyKind { matching, complete, ring, line, drop };
/// admm: the sparsity-promoting design, falling back to Metropolis weights
/// on the available links when the spectral bound cannot be met without
/// unavailable ones. average: C = 11^T / m (ignores the topology).
enum class MixingKind { admm, metropolis, average, file };

std::string to_string(PartitionSource s);
std::string to_string(TopologyKind k);
std::string to_string(MixingKind k);

struct ExperimentConfig {
  std::optional<fs::path> dataset_dir;
  std::optional<SyntheticSpec> synthetic;
  ShiftKind shift = ShiftKind::sym_renorm;

  std::vector<std::size_t> hidden = {16};
  std::size_t order = 1;
  Basis basis = Basis::monomial;

  std::size_t agents = 10;
  PartitionSource partition = PartitionSource::bfs;
  std::uint64_t partition_seed = 0;
  std::optional<fs::path> partition_file;

  TopologyKind topology = TopologyKind::matching;
  double drop_fraction = 0.0;
  std::uint64_t topology_seed = 0;

  MixingKind mixing = MixingKind::admm;
  double gamma = 0.5;
  double admm_rho = 1.0;
  std::optional<fs::path> mixing_file;

  OptimizerConfig optimizer;
  ScheduleSpec schedule;
  std::size_t iterations = 300;
  /// 0 disables consensus.
  std::size_t consensus_period = 1;
  std::size_t repetitions = 1;
  std::size_t eval_every = 10;
  std::uint64_t seed = 0;
  double init_std = 1e-3;
  double dropout = 0.0;
  bool track_stationarity = false;
  bool distributed = true;
  bool baselines = true;
  ExecutionMode mode = ExecutionMode::sequential;
  fs::path output_dir;

  void validate() const;
};

ExperimentConfig config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ExperimentConfig& c);

/// Everything a repetition needs besides its seed.
struct Prepared {
  DataGraph graph;        // normalized, pruned to the topology
  Partition partition;
  AgentPairSet links;     // communication graph
  MixingMatrix mixing;
  ModelSpec model;
  LossKind loss = LossKind::cross_entropy;
  double survival_fraction = 1.0;
  bool mixing_fallback = false;
  nlohmann::json notes;
};

DataGraph load_or_generate(const ExperimentConfig& config, std::vector<int>* groups = nullptr);
Prepared prepare(const ExperimentConfig& config);

struct RepetitionResult {
  std::uint64_t seed = 0;
  std::vector<TrainRecord> distributed;  // empty when the config skips it
  std::vector<TrainRecord> gcn;
  std::vector<TrainRecord> nn;
  std::optional<std::string> failure;
};

struct ExperimentResult {
  Prepared prepared;
  std::vector<RepetitionResult> runs;
  nlohmann::json summary;
};

/// Runs every repetition (distinct init seeds) and, when output_dir is set,
/// writes runs/<method>_rep<r>.jsonl, aggregate.csv, summary.json,
/// loss.svg, metric.svg and metadata.json (the only file with a timestamp).
ExperimentResult run_experiment(const ExperimentConfig& config);

/// Mean and sample standard deviation per iteration over repetitions.
struct AggregateRow {
  std::string method;
  std::size_t iteration = 0;
  std::size_t count = 0;
  double loss_mean = 0.0, loss_std = 0.0;
  std::optional<double> metric_mean, metric_std;
  double residual_mean = 0.0, residual_std = 0.0;
};

std::vector<AggregateRow> aggregate(const std::string& method, const std::vector<std::vector<TrainRecord>>& runs);
void write_aggregate_csv(const fs::path& path, const std::vector<AggregateRow>& rows);
std::vector<AggregateRow> read_aggregate_csv(const fs::path& path);

/// Rebuilds aggregate.csv, summary.json and the plots from runs/*.jsonl.
nlohmann::json report(const fs::path& output_dir);

enum class SweepKind { connectivity, order, period, optimizer };
SweepKind sweep_kind_from_string(const std::string& s);

struct SweepEntry {
  std::string label;
  ExperimentResult result;
};

/// connectivity: matching, drop 25/50/75%, ring, line (survival table).
/// order: linear, order-1, order-2 (Chebyshev).
/// period: consensus every 1, 10 iterations, and never.
/// optimizer: gd, momentum, adam.
/// Each entry writes into output_dir/<label>; a sweep.csv collects finals.
std::vector<SweepEntry> run_sweep(const ExperimentConfig& base, SweepKind kind);

/// Final test metric (accuracy or mse) of a record series, averaged over runs.
double final_metric(const std::vector<std::vector<TrainRecord>>& runs);

}  // namespace dgcn
