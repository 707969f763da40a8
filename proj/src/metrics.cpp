#include "dgcn/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <string>

#include "dgcn/error.hpp"

namespace dgcn {

Vector block_mean(std::span<const Vector> blocks) {
  if (blocks.empty()) throw ValidationError("at least one agent is required");
  Vector mean = Vector::Zero(blocks.front().size());
  for (const auto& b : blocks) {
    if (b.size() != mean.size()) throw ValidationError("agent parameter vectors differ in length");
    mean += b;
  }
  return mean / static_cast<double>(blocks.size());
}

double consensus_residual(std::span<const Vector> blocks) {
  const Vector mean = block_mean(blocks);
  double sq = 0.0;
  for (const auto& b : blocks) sq += (b - mean).squaredNorm();
  return std::sqrt(sq);
}

double max_pairwise_distance(std::span<const Vector> blocks) {
  double best = 0.0;
  for (std::size_t a = 0; a < blocks.size(); ++a)
    for (std::size_t b = a + 1; b < blocks.size(); ++b) best = std::max(best, (blocks[a] - blocks[b]).norm());
  return best;
}

double stationarity(const DataGraph& graph, const ModelSpec& spec, std::span<const Vector> blocks, LossKind loss) {
  const ParamBank mean = ParamBank::unflatten(spec, block_mean(blocks));
  const ForwardResult fwd = gc_forward(graph.shift, graph.features, spec, mean);
  const Matrix g_out = masked_loss_grad(fwd.outputs, graph, graph.train_mask, loss);
  const Vector grad = gc_backward(graph.shift, fwd.cache, spec, mean, g_out).flatten();
  return grad.squaredNorm() / static_cast<double>(blocks.size());
}

double accuracy(const Matrix& outputs, const std::vector<int>& classes, std::span<const int> nodes) {
  if (nodes.empty()) throw ValidationError("evaluation mask is empty");
  std::size_t correct = 0;
  for (int i : nodes) {
    Eigen::Index best = 0;
    outputs.row(i).maxCoeff(&best);  // first maximum wins ties
    if (best == classes[static_cast<std::size_t>(i)]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(nodes.size());
}

double mean_squared_error(const Matrix& outputs, const Matrix& targets, std::span<const int> nodes) {
  if (nodes.empty()) throw ValidationError("evaluation mask is empty");
  double total = 0.0;
  for (int i : nodes) total += (outputs.row(i) - targets.row(i)).squaredNorm() / static_cast<double>(outputs.cols());
  return total / static_cast<double>(nodes.size());
}

MessageCounts expected_message_counts(const Partition& partition, const ModelSpec& spec, std::size_t links) {
  std::size_t cross = 0;
  for (Eigen::Index k = 0; k < partition.boundary.rows(); ++k)
    for (Eigen::Index z = 0; z < partition.boundary.cols(); ++z)
      if (k != z) cross += static_cast<std::size_t>(partition.boundary(k, z));
  MessageCounts counts;
  for (const auto& layer : spec.layers) counts.forward += layer.order * cross * layer.out_dim;
  counts.backward = counts.forward;
  counts.consensus = 2 * links * spec.parameter_count();
  return counts;
}

namespace {

template <class T>
void put_optional(nlohmann::json& j, const char* key, const std::optional<T>& v) {
  j[key] = v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

template <class T>
std::optional<T> get_optional(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<T>();
}

}  // namespace

nlohmann::json to_json(const TrainRecord& r) {
  nlohmann::json j;
  j["iteration"] = r.iteration;
  j["train_loss"] = r.train_loss;
  put_optional(j, "test_accuracy", r.test_accuracy);
  put_optional(j, "test_mse", r.test_mse);
  j["consensus_residual"] = r.consensus_residual;
  j["max_pairwise_distance"] = r.max_pairwise_distance;
  put_optional(j, "stationarity", r.stationarity);
  put_optional(j, "stationarity_best", r.stationarity_best);
  j["messages_forward"] = r.messages_forward;
  j["messages_backward"] = r.messages_backward;
  j["messages_consensus"] = r.messages_consensus;
  j["eta"] = r.eta;
  return j;
}

TrainRecord record_from_json(const nlohmann::json& j) {
  TrainRecord r;
  r.iteration = j.at("iteration").get<std::size_t>();
  r.train_loss = j.at("train_loss").get<double>();
  r.test_accuracy = get_optional<double>(j, "test_accuracy");
  r.test_mse = get_optional<double>(j, "test_mse");
  r.consensus_residual = j.value("consensus_residual", 0.0);
  r.max_pairwise_distance = j.value("max_pairwise_distance", 0.0);
  r.stationarity = get_optional<double>(j, "stationarity");
  r.stationarity_best = get_optional<double>(j, "stationarity_best");
  r.messages_forward = j.value("messages_forward", std::size_t{0});
  r.messages_backward = j.value("messages_backward", std::size_t{0});
  r.messages_consensus = j.value("messages_consensus", std::size_t{0});
  r.eta = j.value("eta", 0.0);
  return r;
}

void write_jsonl(std::ostream& out, const std::vector<TrainRecord>& records) {
  for (const auto& r : records) out << to_json(r).dump() << '\n';
}

std::vector<TrainRecord> read_jsonl(std::istream& in) {
  std::vector<TrainRecord> records;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.empty()) continue;
    try {
      records.push_back(record_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError("record line " + std::to_string(number) + ": " + e.what());
    }
  }
  return records;
}

void write_records_csv(std::ostream& out, const std::vector<TrainRecord>& records) {
  out << "iteration,train_loss,test_accuracy,test_mse,consensus_residual,max_pairwise_distance,stationarity,"
         "stationarity_best,messages_forward,messages_backward,messages_consensus,eta\n";
  const auto old = out.precision(17);
  for (const auto& r : records) {
    out << r.iteration << ',' << r.train_loss << ',';
    if (r.test_accuracy) out << *r.test_accuracy;
    out << ',';
    if (r.test_mse) out << *r.test_mse;
    out << ',' << r.consensus_residual << ',' << r.max_pairwise_distance << ',';
    if (r.stationarity) out << *r.stationarity;
    out << ',';
    if (r.stationarity_best) out << *r.stationarity_best;
    out << ',' << r.messages_forward << ',' << r.messages_backward << ',' << r.messages_consensus << ',' << r.eta
        << '\n';
  }
  out.precision(old);
}

nlohmann::json summarize(const std::vector<TrainRecord>& records) {
  nlohmann::json s;
  s["iterations"] = records.empty() ? 0 : records.back().iteration;
  if (records.empty()) return s;
  const auto& last = records.back();
  s["final"] = to_json(last);
  double best_loss = last.train_loss;
  std::optional<double> best_acc, best_mse;
  for (const auto& r : records) {
    best_loss = std::min(best_loss, r.train_loss);
    if (r.test_accuracy) best_acc = std::max(best_acc.value_or(0.0), *r.test_accuracy);
    if (r.test_mse) best_mse = best_mse ? std::min(*best_mse, *r.test_mse) : *r.test_mse;
  }
  s["best_train_loss"] = best_loss;
  put_optional(s, "best_test_accuracy", best_acc);
  put_optional(s, "best_test_mse", best_mse);
  return s;
}

}  // namespace dgcn
