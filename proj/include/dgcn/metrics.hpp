#pragma once

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dgcn/gcn.hpp"
#include "dgcn/graph.hpp"
#include "dgcn/record.hpp"

namespace dgcn {

/// Blockwise mean of the agents' parameter vectors.
Vector block_mean(std::span<const Vector> blocks);

/// ||w - Pi_S w|| for the stacked vector w = [w_1; ...; w_m].
double consensus_residual(std::span<const Vector> blocks);

double max_pairwise_distance(std::span<const Vector> blocks);

/// g = grad L(w_S)^T Pi_S grad L(w_S) at the consensus point w_S built from
/// the blockwise mean. Uses the centralized backward pass: with equal agent
/// blocks, sum_k grad_k L equals the centralized gradient, so g = ||grad||^2 / m.
double stationarity(const DataGraph& graph, const ModelSpec& spec, std::span<const Vector> blocks, LossKind loss);

/// Fraction of argmax-correct rows over `nodes`; ties go to the lowest class.
double accuracy(const Matrix& outputs, const std::vector<int>& classes, std::span<const int> nodes);

/// Squared error per node averaged over nodes and output columns.
double mean_squared_error(const Matrix& outputs, const Matrix& targets, std::span<const int> nodes);

struct MessageCounts {
  std::size_t forward = 0;
  std::size_t backward = 0;
  std::size_t consensus = 0;
};

/// Scalars one training iteration must exchange: every order-P layer ships
/// P rounds of sum_{k != z} B(k, z) * out_dim values each way, and consensus
/// sends p scalars over both directions of every link.
MessageCounts expected_message_counts(const Partition& partition, const ModelSpec& spec, std::size_t links);

nlohmann::json to_json(const TrainRecord& record);
TrainRecord record_from_json(const nlohmann::json& j);

void write_jsonl(std::ostream& out, const std::vector<TrainRecord>& records);
std::vector<TrainRecord> read_jsonl(std::istream& in);
void write_records_csv(std::ostream& out, const std::vector<TrainRecord>& records);

/// Final and best values of a record series.
nlohmann::json summarize(const std::vector<TrainRecord>& records);

}  // namespace dgcn
