#include "dgcn/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <ctime>
#include <iomanip>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "dgcn/error.hpp"
#include "dgcn/io.hpp"
#include "dgcn/metrics.hpp"
#include "dgcn/svg.hpp"

namespace dgcn {

std::string to_string(PartitionSource s) {
  switch (s) {
    case PartitionSource::bfs: return "bfs";
    case PartitionSource::groups: return "groups";
    case PartitionSource::file: return "file";
  }
  return "unknown";
}

std::string to_string(TopologyKind k) {
  switch (k) {
    case TopologyKind::matching: return "matching";
    case TopologyKind::complete: return "complete";
    case TopologyKind::ring: return "ring";
    case TopologyKind::line: return "line";
    case TopologyKind::drop: return "drop";
  }
  return "unknown";
}

std::string to_string(MixingKind k) {
  switch (k) {
    case MixingKind::admm: return "admm";
    case MixingKind::metropolis: return "metropolis";
    case MixingKind::average: return "average";
    case MixingKind::file: return "file";
  }
  return "unknown";
}

namespace {

template <class E>
E parse_enum(const std::string& key, const std::string& value, std::initializer_list<E> all) {
  for (E e : all)
    if (to_string(e) == value) return e;
  throw ValidationError("config key '" + key + "': unknown value '" + value + "'");
}

template <class T>
T get(const nlohmann::json& j, const std::string& key) {
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ValidationError("config key '" + key + "' has the wrong type");
  }
}

void check_keys(const nlohmann::json& j, const std::set<std::string>& known, const std::string& where) {
  if (!j.is_object()) throw ValidationError(where + " must be an object");
  for (const auto& [key, value] : j.items())
    if (!known.count(key)) throw ValidationError(where + ": unknown key '" + key + "'");
}

SyntheticSpec synthetic_from_json(const nlohmann::json& j) {
  static const std::set<std::string> known = {
      "kind", "seed", "require_connected", "nodes", "classes", "clusters", "p_in", "p_out", "feature_dim",
      "class_separation", "feature_noise", "label_fraction", "grid_rows", "grid_cols", "spacing", "jitter",
      "bandwidth", "threshold", "window", "steps", "train_share", "hops", "carry", "rectify", "process_noise", "observation_noise",
      "stations"};
  check_keys(j, known, "synthetic");
  SyntheticSpec s;
  if (j.contains("kind")) s.kind = synthetic_kind_from_string(get<std::string>(j, "kind"));
#define DGCN_FIELD(name) \
  if (j.contains(#name)) s.name = get<decltype(s.name)>(j, #name);
  DGCN_FIELD(seed) DGCN_FIELD(require_connected) DGCN_FIELD(nodes) DGCN_FIELD(classes) DGCN_FIELD(clusters) DGCN_FIELD(p_in)
  DGCN_FIELD(p_out) DGCN_FIELD(feature_dim) DGCN_FIELD(class_separation) DGCN_FIELD(feature_noise)
  DGCN_FIELD(label_fraction) DGCN_FIELD(grid_rows) DGCN_FIELD(grid_cols) DGCN_FIELD(spacing) DGCN_FIELD(jitter)
  DGCN_FIELD(bandwidth) DGCN_FIELD(threshold) DGCN_FIELD(window) DGCN_FIELD(steps) DGCN_FIELD(train_share)
  DGCN_FIELD(hops) DGCN_FIELD(carry) DGCN_FIELD(rectify) DGCN_FIELD(process_noise)
  DGCN_FIELD(observation_noise) DGCN_FIELD(stations)
#undef DGCN_FIELD
  return s;
}

nlohmann::json synthetic_to_json(const SyntheticSpec& s) {
  return {{"kind", to_string(s.kind)},
          {"seed", s.seed},
          {"require_connected", s.require_connected},
          {"nodes", s.nodes},
          {"classes", s.classes},
          {"clusters", s.clusters},
          {"p_in", s.p_in},
          {"p_out", s.p_out},
          {"feature_dim", s.feature_dim},
          {"class_separation", s.class_separation},
          {"feature_noise", s.feature_noise},
          {"label_fraction", s.label_fraction},
          {"grid_rows", s.grid_rows},
          {"grid_cols", s.grid_cols},
          {"spacing", s.spacing},
          {"jitter", s.jitter},
          {"bandwidth", s.bandwidth},
          {"threshold", s.threshold},
          {"window", s.window},
          {"steps", s.steps},
          {"train_share", s.train_share},
          {"hops", s.hops},
          {"carry", s.carry},
          {"rectify", s.rectify},
          {"process_noise", s.process_noise},
          {"observation_noise", s.observation_noise},
          {"stations", s.stations}};
}

}  // namespace

void ExperimentConfig::validate() const {
  if (dataset_dir.has_value() == synthetic.has_value())
    throw ValidationError("exactly one of 'dataset' and 'synthetic' must be given");
  if (dataset_dir && !fs::is_directory(*dataset_dir))
    throw ValidationError("dataset directory " + dataset_dir->string() + " does not exist");
  if (partition == PartitionSource::file && (!partition_file || !fs::exists(*partition_file)))
    throw ValidationError("partition source 'file' needs an existing partition_file");
  if (mixing == MixingKind::file && (!mixing_file || !fs::exists(*mixing_file)))
    throw ValidationError("mixing source 'file' needs an existing mixing_file");
  if (partition == PartitionSource::bfs && agents == 0) throw ValidationError("agents must be positive");
  if (order == 0) throw ValidationError("order must be at least 1");
  if (repetitions == 0) throw ValidationError("repetitions must be at least 1");
  if (!(schedule.eta0 > 0.0)) throw ValidationError("eta0 must be positive");
  if (!(schedule.tau > 0.0)) throw ValidationError("tau must be positive");
  if (!(gamma > 0.0 && gamma < 1.0)) throw ValidationError("gamma must lie in (0, 1)");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ValidationError("dropout must lie in [0, 1)");
  if (!(drop_fraction >= 0.0 && drop_fraction <= 1.0)) throw ValidationError("drop_fraction must lie in [0, 1]");
  if (!distributed && !baselines) throw ValidationError("nothing to run: both 'distributed' and 'baselines' are off");
}

ExperimentConfig config_from_json(const nlohmann::json& j) {
  static const std::set<std::string> known = {
      "dataset", "synthetic", "shift", "hidden", "order", "basis", "agents", "partition", "partition_seed",
      "partition_file", "topology", "drop_fraction", "topology_seed", "mixing", "gamma", "admm_rho",
      "mixing_file", "optimizer", "momentum", "beta1", "beta2", "epsilon", "schedule", "eta0", "tau",
      "iterations", "consensus_period", "repetitions", "eval_every", "seed", "init_std", "dropout",
      "track_stationarity", "distributed", "baselines", "mode", "output_dir"};
  check_keys(j, known, "config");
  ExperimentConfig c;
  if (j.contains("dataset")) c.dataset_dir = get<std::string>(j, "dataset");
  if (j.contains("synthetic")) c.synthetic = synthetic_from_json(j.at("synthetic"));
  if (j.contains("shift")) c.shift = shift_kind_from_string(get<std::string>(j, "shift"));
  if (j.contains("hidden")) c.hidden = get<std::vector<std::size_t>>(j, "hidden");
  if (j.contains("order")) c.order = get<std::size_t>(j, "order");
  if (j.contains("basis")) c.basis = basis_from_string(get<std::string>(j, "basis"));
  if (j.contains("agents")) c.agents = get<std::size_t>(j, "agents");
  if (j.contains("partition"))
    c.partition = parse_enum("partition", get<std::string>(j, "partition"),
                             {PartitionSource::bfs, PartitionSource::groups, PartitionSource::file});
  if (j.contains("partition_seed")) c.partition_seed = get<std::uint64_t>(j, "partition_seed");
  if (j.contains("partition_file")) c.partition_file = get<std::string>(j, "partition_file");
  if (j.contains("topology"))
    c.topology = parse_enum("topology", get<std::string>(j, "topology"),
                            {TopologyKind::matching, TopologyKind::complete, TopologyKind::ring, TopologyKind::line,
                             TopologyKind::drop});
  if (j.contains("drop_fraction")) c.drop_fraction = get<double>(j, "drop_fraction");
  if (j.contains("topology_seed")) c.topology_seed = get<std::uint64_t>(j, "topology_seed");
  if (j.contains("mixing"))
    c.mixing = parse_enum("mixing", get<std::string>(j, "mixing"),
                          {MixingKind::admm, MixingKind::metropolis, MixingKind::average, MixingKind::file});
  if (j.contains("gamma")) c.gamma = get<double>(j, "gamma");
  if (j.contains("admm_rho")) c.admm_rho = get<double>(j, "admm_rho");
  if (j.contains("mixing_file")) c.mixing_file = get<std::string>(j, "mixing_file");
  if (j.contains("optimizer")) c.optimizer.kind = optimizer_from_string(get<std::string>(j, "optimizer"));
  if (j.contains("momentum")) c.optimizer.momentum = get<double>(j, "momentum");
  if (j.contains("beta1")) c.optimizer.beta1 = get<double>(j, "beta1");
  if (j.contains("beta2")) c.optimizer.beta2 = get<double>(j, "beta2");
  if (j.contains("epsilon")) c.optimizer.epsilon = get<double>(j, "epsilon");
  if (j.contains("schedule")) c.schedule.kind = schedule_from_string(get<std::string>(j, "schedule"));
  if (j.contains("eta0")) c.schedule.eta0 = get<double>(j, "eta0");
  if (j.contains("tau")) c.schedule.tau = get<double>(j, "tau");
  if (j.contains("iterations")) c.iterations = get<std::size_t>(j, "iterations");
  if (j.contains("consensus_period")) c.consensus_period = get<std::size_t>(j, "consensus_period");
  if (j.contains("repetitions")) c.repetitions = get<std::size_t>(j, "repetitions");
  if (j.contains("eval_every")) c.eval_every = get<std::size_t>(j, "eval_every");
  if (j.contains("seed")) c.seed = get<std::uint64_t>(j, "seed");
  if (j.contains("init_std")) c.init_std = get<double>(j, "init_std");
  if (j.contains("dropout")) c.dropout = get<double>(j, "dropout");
  if (j.contains("track_stationarity")) c.track_stationarity = get<bool>(j, "track_stationarity");
  if (j.contains("distributed")) c.distributed = get<bool>(j, "distributed");
  if (j.contains("baselines")) c.baselines = get<bool>(j, "baselines");
  if (j.contains("mode")) {
    const auto mode = get<std::string>(j, "mode");
    if (mode != "sequential" && mode != "parallel") throw ValidationError("config key 'mode': unknown value '" + mode + "'");
    c.mode = mode == "parallel" ? ExecutionMode::parallel : ExecutionMode::sequential;
  }
  if (j.contains("output_dir")) c.output_dir = get<std::string>(j, "output_dir");
  return c;
}

nlohmann::json to_json(const ExperimentConfig& c) {
  nlohmann::json j;
  if (c.dataset_dir) j["dataset"] = c.dataset_dir->string();
  if (c.synthetic) j["synthetic"] = synthetic_to_json(*c.synthetic);
  j["shift"] = to_string(c.shift);
  j["hidden"] = c.hidden;
  j["order"] = c.order;
  j["basis"] = to_string(c.basis);
  j["agents"] = c.agents;
  j["partition"] = to_string(c.partition);
  j["partition_seed"] = c.partition_seed;
  if (c.partition_file) j["partition_file"] = c.partition_file->string();
  j["topology"] = to_string(c.topology);
  j["drop_fraction"] = c.drop_fraction;
  j["topology_seed"] = c.topology_seed;
  j["mixing"] = to_string(c.mixing);
  j["gamma"] = c.gamma;
  j["admm_rho"] = c.admm_rho;
  if (c.mixing_file) j["mixing_file"] = c.mixing_file->string();
  j["optimizer"] = to_string(c.optimizer.kind);
  j["momentum"] = c.optimizer.momentum;
  j["beta1"] = c.optimizer.beta1;
  j["beta2"] = c.optimizer.beta2;
  j["epsilon"] = c.optimizer.epsilon;
  j["schedule"] = to_string(c.schedule.kind);
  j["eta0"] = c.schedule.eta0;
  j["tau"] = c.schedule.tau;
  j["iterations"] = c.iterations;
  j["consensus_period"] = c.consensus_period;
  j["repetitions"] = c.repetitions;
  j["eval_every"] = c.eval_every;
  j["seed"] = c.seed;
  j["init_std"] = c.init_std;
  j["dropout"] = c.dropout;
  j["track_stationarity"] = c.track_stationarity;
  j["distributed"] = c.distributed;
  j["baselines"] = c.baselines;
  j["mode"] = c.mode == ExecutionMode::parallel ? "parallel" : "sequential";
  j["output_dir"] = c.output_dir.string();
  return j;
}

DataGraph load_or_generate(const ExperimentConfig& config, std::vector<int>* groups) {
  if (config.dataset_dir) {
    if (groups) groups->clear();
    return load_dataset(*config.dataset_dir);
  }
  if (!config.synthetic) throw ValidationError("no dataset configured");
  SyntheticData data = generate_synthetic(*config.synthetic);
  if (groups) *groups = std::move(data.groups);
  return std::move(data.graph);
}

Prepared prepare(const ExperimentConfig& config) {
  config.validate();
  Prepared p;
  std::vector<int> groups;
  DataGraph graph = normalize_shift(load_or_generate(config, &groups), config.shift);

  Partition partition;
  switch (config.partition) {
    case PartitionSource::bfs:
      partition = partition_bfs(graph, config.agents, config.partition_seed);
      break;
    case PartitionSource::groups: {
      if (groups.empty()) throw ValidationError("partition source 'groups' needs a synthetic dataset");
      const int top = *std::max_element(groups.begin(), groups.end());
      partition = make_partition(graph, groups, static_cast<std::size_t>(top + 1));
      break;
    }
    case PartitionSource::file: {
      std::vector<int> assign = read_assignment(*config.partition_file);
      const int top = assign.empty() ? 0 : *std::max_element(assign.begin(), assign.end());
      partition = make_partition(graph, std::move(assign), static_cast<std::size_t>(top + 1));
      break;
    }
  }
  const std::size_t m = partition.m;

  AgentPairSet links;
  switch (config.topology) {
    case TopologyKind::matching: links = required_pairs(partition); break;
    case TopologyKind::complete: links = complete_pairs(m); break;
    case TopologyKind::ring: links = ring_pairs(m); break;
    case TopologyKind::line: links = line_pairs(m); break;
    case TopologyKind::drop:
      links = drop_pairs_connected(required_pairs(partition), m, config.drop_fraction, config.topology_seed);
      break;
  }
  if (config.mixing == MixingKind::average) links = complete_pairs(m);

  PruneResult pruned = prune_to_comm(graph, partition, links);
  p.graph = std::move(pruned.graph);
  p.partition = std::move(pruned.partition);
  p.survival_fraction = pruned.survival_fraction;
  p.links = links;
  p.notes["survival_fraction"] = p.survival_fraction;
  p.notes["surviving_edges"] = pruned.surviving_edges;
  p.notes["original_edges"] = pruned.original_edges;
  p.notes["links"] = links.size() / 2;
  p.notes["agents"] = m;

  auto within_links = [&](const Matrix& c) {
    for (Eigen::Index k = 0; k < c.rows(); ++k)
      for (Eigen::Index z = 0; z < c.cols(); ++z)
        if (k != z && c(k, z) != 0.0 && !links.count({static_cast<int>(k), static_cast<int>(z)})) return false;
    return true;
  };

  switch (config.mixing) {
    case MixingKind::average:
      p.mixing.entries = Matrix::Constant(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(m), 1.0 / static_cast<double>(m));
      p.mixing.gamma = 1.0;
      break;
    case MixingKind::metropolis:
      p.mixing = metropolis_weights(links, m);
      break;
    case MixingKind::file: {
      const Matrix c = read_matrix_csv(*config.mixing_file);
      if (static_cast<std::size_t>(c.rows()) != m)
        throw ValidationError("mixing matrix has " + std::to_string(c.rows()) + " rows for " + std::to_string(m) + " agents");
      const double gamma = 1.0 - deflated_spectral_radius(c);
      validate_mixing(c, gamma, &links);
      p.mixing = {c, gamma};
      break;
    }
    case MixingKind::admm: {
      if (m == 1) {
        p.mixing = {Matrix::Ones(1, 1), config.gamma};
        break;
      }
      BoolMatrix forbidden = p.partition.forbidden;
      for (Eigen::Index k = 0; k < forbidden.rows(); ++k)
        for (Eigen::Index z = 0; z < forbidden.cols(); ++z)
          if (k != z && !links.count({static_cast<int>(k), static_cast<int>(z)})) forbidden(k, z) = true;
      AdmmOptions opts;
      opts.gamma = config.gamma;
      opts.rho = config.admm_rho;
      opts.seed = config.topology_seed;
      AdmmResult admm = design_mixing_admm(forbidden, opts);
      p.notes["admm_iterations"] = admm.state.iteration;
      p.notes["admm_converged"] = admm.state.converged;
      if (admm.forbidden_in_use.empty() && within_links(admm.mixing.entries)) {
        p.mixing = std::move(admm.mixing);
      } else {
        p.mixing = metropolis_weights(links, m);
        p.mixing_fallback = true;
      }
      break;
    }
  }
  p.notes["mixing"] = to_string(config.mixing);
  p.notes["mixing_fallback"] = p.mixing_fallback;
  p.notes["mixing_zero_fraction"] = zero_fraction(p.mixing.entries);
  p.notes["spectral_radius"] = deflated_spectral_radius(p.mixing.entries);

  const bool classify = p.graph.is_classification();
  const std::size_t out_dim = classify ? p.graph.num_classes() : static_cast<std::size_t>(p.graph.targets.cols());
  p.model = make_model(p.graph.feature_dim(), config.hidden, out_dim, config.order,
                       classify ? Activation::softmax : Activation::identity, config.basis);
  p.loss = classify ? LossKind::cross_entropy : LossKind::mse;
  p.notes["parameters"] = p.model.parameter_count();
  return p;
}

std::vector<AggregateRow> aggregate(const std::string& method, const std::vector<std::vector<TrainRecord>>& runs) {
  std::vector<AggregateRow> rows;
  if (runs.empty()) return rows;
  std::size_t len = runs.front().size();
  for (const auto& r : runs) len = std::min(len, r.size());
  auto stats = [](const std::vector<double>& v, double& mean, double& sd) {
    mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double sq = 0.0;
    for (double x : v) sq += (x - mean) * (x - mean);
    sd = v.size() > 1 ? std::sqrt(sq / static_cast<double>(v.size() - 1)) : 0.0;
  };
  for (std::size_t i = 0; i < len; ++i) {
    AggregateRow row;
    row.method = method;
    row.iteration = runs.front()[i].iteration;
    row.count = runs.size();
    std::vector<double> loss, metric, residual;
    for (const auto& r : runs) {
      loss.push_back(r[i].train_loss);
      residual.push_back(r[i].consensus_residual);
      if (r[i].test_accuracy) metric.push_back(*r[i].test_accuracy);
      else if (r[i].test_mse) metric.push_back(*r[i].test_mse);
    }
    stats(loss, row.loss_mean, row.loss_std);
    stats(residual, row.residual_mean, row.residual_std);
    if (metric.size() == runs.size()) {
      double mean = 0, sd = 0;
      stats(metric, mean, sd);
      row.metric_mean = mean;
      row.metric_std = sd;
    }
    rows.push_back(row);
  }
  return rows;
}

void write_aggregate_csv(const fs::path& path, const std::vector<AggregateRow>& rows) {
  std::ostringstream out;
  out.precision(17);
  out << "method,iteration,runs,loss_mean,loss_std,metric_mean,metric_std,residual_mean,residual_std\n";
  for (const auto& r : rows) {
    out << r.method << ',' << r.iteration << ',' << r.count << ',' << r.loss_mean << ',' << r.loss_std << ',';
    if (r.metric_mean) out << *r.metric_mean;
    out << ',';
    if (r.metric_std) out << *r.metric_std;
    out << ',' << r.residual_mean << ',' << r.residual_std << '\n';
  }
  write_text(path, out.str());
}

std::vector<AggregateRow> read_aggregate_csv(const fs::path& path) {
  std::istringstream in(read_text(path));
  std::string line;
  std::getline(in, line);
  std::vector<AggregateRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> c;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) c.push_back(cell);
    if (!line.empty() && line.back() == ',') c.emplace_back();
    if (c.size() != 9) throw ValidationError(path.filename().string() + ": malformed row '" + line + "'");
    AggregateRow r;
    r.method = c[0];
    r.iteration = std::stoull(c[1]);
    r.count = std::stoull(c[2]);
    r.loss_mean = std::stod(c[3]);
    r.loss_std = std::stod(c[4]);
    if (!c[5].empty()) r.metric_mean = std::stod(c[5]);
    if (!c[6].empty()) r.metric_std = std::stod(c[6]);
    r.residual_mean = std::stod(c[7]);
    r.residual_std = std::stod(c[8]);
    rows.push_back(r);
  }
  return rows;
}

double final_metric(const std::vector<std::vector<TrainRecord>>& runs) {
  double total = 0.0;
  std::size_t count = 0;
  for (const auto& r : runs) {
    if (r.empty()) continue;
    const auto& last = r.back();
    if (last.test_accuracy) total += *last.test_accuracy, ++count;
    else if (last.test_mse) total += *last.test_mse, ++count;
  }
  if (count == 0) throw ValidationError("no run has a final test metric");
  return total / static_cast<double>(count);
}

namespace {

const char* kMethods[] = {"distributed", "gcn", "nn"};

nlohmann::json summarize_methods(const std::map<std::string, std::vector<std::vector<TrainRecord>>>& by_method) {
  nlohmann::json out = nlohmann::json::object();
  for (const auto& [method, runs] : by_method) {
    if (runs.empty()) continue;
    const auto rows = aggregate(method, runs);
    if (rows.empty()) continue;
    const auto& last = rows.back();
    nlohmann::json s;
    s["runs"] = runs.size();
    s["final_iteration"] = last.iteration;
    s["final_loss_mean"] = last.loss_mean;
    s["final_loss_std"] = last.loss_std;
    if (last.metric_mean) {
      s["final_metric_mean"] = *last.metric_mean;
      s["final_metric_std"] = *last.metric_std;
    }
    s["final_residual_mean"] = last.residual_mean;
    out[method] = s;
  }
  return out;
}

void write_plots(const fs::path& dir, const std::vector<AggregateRow>& rows, bool classification) {
  std::map<std::string, PlotSeries> loss, metric;
  for (const auto& r : rows) {
    auto& l = loss[r.method];
    l.name = r.method;
    l.x.push_back(static_cast<double>(r.iteration));
    l.y.push_back(r.loss_mean);
    l.spread.push_back(r.loss_std);
    if (r.metric_mean) {
      auto& m = metric[r.method];
      m.name = r.method;
      m.x.push_back(static_cast<double>(r.iteration));
      m.y.push_back(*r.metric_mean);
      m.spread.push_back(*r.metric_std);
    }
  }
  std::vector<PlotSeries> ls, ms;
  for (auto& [k, v] : loss) ls.push_back(std::move(v));
  for (auto& [k, v] : metric) ms.push_back(std::move(v));
  write_text(dir / "loss.svg", line_plot_svg({"Training loss", "iteration", "loss", true}, ls));
  write_text(dir / "metric.svg",
             line_plot_svg({classification ? "Test accuracy" : "Test MSE", "iteration",
                            classification ? "accuracy" : "mse", !classification},
                           ms));
}

void write_runs(const fs::path& dir, const std::string& method, std::size_t rep, const std::vector<TrainRecord>& records) {
  std::ostringstream out;
  write_jsonl(out, records);
  write_text(dir / "runs" / (method + "_rep" + std::to_string(rep) + ".jsonl"), out.str());
}

std::string timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::ostringstream s;
  s << std::put_time(std::gmtime(&t), "%Y-%m-%dT%H:%M:%SZ");
  return s.str();
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& config) {
  ExperimentResult result;
  result.prepared = prepare(config);
  const Prepared& p = result.prepared;
  const std::size_t m = p.partition.m;

  DataGraph nn_graph;
  if (config.baselines) nn_graph = normalize_shift(p.graph, ShiftKind::identity);

  std::map<std::string, std::vector<std::vector<TrainRecord>>> by_method;
  for (std::size_t r = 0; r < config.repetitions; ++r) {
    RepetitionResult rep;
    rep.seed = config.seed + r;
    std::vector<std::string> failures;

    if (config.distributed) {
      DistConfig dc;
      dc.schedule = config.schedule;
      dc.optimizer = config.optimizer;
      dc.iterations = config.iterations;
      dc.init_std = config.init_std;
      dc.seed = rep.seed;
      dc.consensus_period = config.consensus_period == 0 ? std::nullopt : std::optional<std::size_t>(config.consensus_period);
      dc.loss = p.loss;
      dc.eval_every = config.eval_every;
      dc.track_stationarity = config.track_stationarity;
      dc.dropout = config.dropout;
      dc.mode = config.mode;
      dc.channels = p.links;
      DistResult dist = train_distributed(p.graph, p.partition, p.mixing, p.model, dc);
      rep.distributed = std::move(dist.records);
      if (dist.failure) failures.push_back("distributed: " + *dist.failure);
    }

    if (config.baselines) {
      CentralConfig cc;
      cc.schedule = config.schedule;
      cc.schedule.eta0 = config.schedule.eta0 / static_cast<double>(m);  // matched effective step
      cc.iterations = config.iterations;
      cc.init_std = config.init_std;
      cc.init_seed = rep.seed;
      cc.dropout = config.dropout;
      cc.dropout_seed = rep.seed;
      cc.loss = p.loss;
      cc.eval_every = config.eval_every;
      auto baseline = [&](const DataGraph& graph, std::vector<TrainRecord>& records, const char* name) {
        try {
          records = train_centralized(graph, p.model, cc).records;
        } catch (const DivergenceError& e) {
          failures.push_back(std::string(name) + ": " + e.what());
        }
      };
      baseline(p.graph, rep.gcn, "gcn");
      baseline(nn_graph, rep.nn, "nn");
    }
    if (!failures.empty()) {
      std::string joined;
      for (const auto& f : failures) joined += (joined.empty() ? "" : "; ") + f;
      rep.failure = joined;
    }
    if (config.distributed) by_method["distributed"].push_back(rep.distributed);
    if (config.baselines) {
      by_method["gcn"].push_back(rep.gcn);
      by_method["nn"].push_back(rep.nn);
    }
    result.runs.push_back(std::move(rep));
  }

  result.summary["config"] = to_json(config);
  result.summary["setup"] = p.notes;
  result.summary["methods"] = summarize_methods(by_method);
  nlohmann::json failures = nlohmann::json::array();
  for (std::size_t r = 0; r < result.runs.size(); ++r)
    if (result.runs[r].failure) failures.push_back({{"repetition", r}, {"error", *result.runs[r].failure}});
  result.summary["failures"] = failures;

  if (!config.output_dir.empty()) {
    const fs::path& dir = config.output_dir;
    fs::create_directories(dir / "runs");
    std::vector<AggregateRow> rows;
    for (const char* method : kMethods) {
      auto it = by_method.find(method);
      if (it == by_method.end()) continue;
      for (std::size_t r = 0; r < it->second.size(); ++r) write_runs(dir, method, r, it->second[r]);
      const auto part = aggregate(method, it->second);
      rows.insert(rows.end(), part.begin(), part.end());
    }
    write_aggregate_csv(dir / "aggregate.csv", rows);
    write_text(dir / "summary.json", result.summary.dump(2) + "\n");
    write_plots(dir, rows, p.graph.is_classification());
    write_text(dir / "metadata.json", nlohmann::json{{"created", timestamp()}}.dump(2) + "\n");
  }
  return result;
}

nlohmann::json report(const fs::path& dir) {
  if (!fs::is_directory(dir / "runs")) throw ValidationError(dir.string() + " has no runs/ directory");
  std::map<std::string, std::map<std::size_t, std::vector<TrainRecord>>> files;
  for (const auto& entry : fs::directory_iterator(dir / "runs")) {
    const std::string name = entry.path().stem().string();
    const auto cut = name.rfind("_rep");
    if (entry.path().extension() != ".jsonl" || cut == std::string::npos) continue;
    std::ifstream in(entry.path());
    files[name.substr(0, cut)][std::stoull(name.substr(cut + 4))] = read_jsonl(in);
  }
  if (files.empty()) throw ValidationError(dir.string() + "/runs holds no record files");
  std::map<std::string, std::vector<std::vector<TrainRecord>>> by_method;
  bool classification = true;
  for (auto& [method, reps] : files)
    for (auto& [r, records] : reps) {
      if (!records.empty() && records.back().test_mse) classification = false;
      by_method[method].push_back(std::move(records));
    }
  std::vector<AggregateRow> rows;
  for (const char* method : kMethods) {
    auto it = by_method.find(method);
    if (it == by_method.end()) continue;
    const auto part = aggregate(method, it->second);
    rows.insert(rows.end(), part.begin(), part.end());
  }
  write_aggregate_csv(dir / "aggregate.csv", rows);
  write_plots(dir, rows, classification);
  nlohmann::json methods = summarize_methods(by_method);
  write_text(dir / "report.json", methods.dump(2) + "\n");
  return methods;
}

SweepKind sweep_kind_from_string(const std::string& s) {
  if (s == "connectivity") return SweepKind::connectivity;
  if (s == "order") return SweepKind::order;
  if (s == "period") return SweepKind::period;
  if (s == "optimizer") return SweepKind::optimizer;
  throw ValidationError("unknown sweep '" + s + "'");
}

std::vector<SweepEntry> run_sweep(const ExperimentConfig& base, SweepKind kind) {
  std::vector<std::pair<std::string, ExperimentConfig>> variants;
  auto add = [&](const std::string& label, auto&& tweak) {
    ExperimentConfig c = base;
    tweak(c);
    if (!base.output_dir.empty()) c.output_dir = base.output_dir / label;
    variants.emplace_back(label, std::move(c));
  };
  switch (kind) {
    case SweepKind::connectivity:
      add("matching", [](ExperimentConfig& c) { c.topology = TopologyKind::matching; });
      for (int pct : {25, 50, 75})
        add("drop" + std::to_string(pct), [pct](ExperimentConfig& c) {
          c.topology = TopologyKind::drop;
          c.drop_fraction = pct / 100.0;
        });
      add("ring", [](ExperimentConfig& c) { c.topology = TopologyKind::ring; });
      add("line", [](ExperimentConfig& c) { c.topology = TopologyKind::line; });
      break;
    case SweepKind::order:
      add("linear", [](ExperimentConfig& c) {
        c.hidden.clear();
        c.order = 1;
      });
      add("order1", [](ExperimentConfig& c) { c.order = 1; });
      add("order2", [](ExperimentConfig& c) {
        c.order = 2;
        c.basis = Basis::chebyshev;
      });
      break;
    case SweepKind::period:
      add("period1", [](ExperimentConfig& c) { c.consensus_period = 1; });
      add("period10", [](ExperimentConfig& c) { c.consensus_period = 10; });
      add("no_consensus", [](ExperimentConfig& c) { c.consensus_period = 0; });
      break;
    case SweepKind::optimizer:
      add("gd", [](ExperimentConfig& c) { c.optimizer.kind = OptimizerKind::gd; });
      add("momentum", [](ExperimentConfig& c) { c.optimizer.kind = OptimizerKind::momentum; });
      add("adam", [](ExperimentConfig& c) { c.optimizer.kind = OptimizerKind::adam; });
      break;
  }

  std::vector<SweepEntry> entries;
  std::ostringstream table;
  table.precision(17);
  table << "label,survival_fraction,links,final_metric_mean,final_metric_std,final_loss_mean,scalars_per_iteration\n";
  for (auto& [label, config] : variants) {
    SweepEntry e{label, run_experiment(config)};
    const auto& methods = e.result.summary["methods"];
    const auto& dist = methods.contains("distributed") ? methods["distributed"] : nlohmann::json::object();
    std::size_t scalars = 0;
    const auto& recs = e.result.runs.front().distributed;
    if (recs.size() >= 2) {
      const auto& r = recs[recs.size() - 2];
      scalars = r.messages_forward + r.messages_backward + r.messages_consensus;
    }
    table << label << ',' << e.result.prepared.survival_fraction << ',' << e.result.prepared.links.size() / 2 << ','
          << dist.value("final_metric_mean", std::nan("")) << ',' << dist.value("final_metric_std", std::nan(""))
          << ',' << dist.value("final_loss_mean", std::nan("")) << ',' << scalars << '\n';
    entries.push_back(std::move(e));
  }
  if (!base.output_dir.empty()) write_text(base.output_dir / "sweep.csv", table.str());
  return entries;
}

}  // namespace dgcn
