// Command-line front end: dataset checks, generators, partitioning, mixing
// design, training runs, sweeps and reports.

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <map>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "dgcn/error.hpp"
#include "dgcn/experiment.hpp"
#include "dgcn/io.hpp"
#include "dgcn/topology.hpp"

using namespace dgcn;
using nlohmann::json;

namespace {

constexpr int kOk = 0;
constexpr int kInvalid = 1;
constexpr int kFailed = 2;

// Flag text becomes a JSON value when it parses as one (numbers, booleans,
// arrays), otherwise a string.
json flag_value(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::exception&) {
    return text;
  }
}

struct ConfigFlags {
  std::string config_path;
  std::map<std::string, std::string> values;
  std::vector<std::string> sets;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", config_path, "JSON run configuration")->check(CLI::ExistingFile);
    for (const char* key : {"dataset", "shift", "hidden", "order", "basis", "agents", "partition", "partition_seed",
                            "partition_file", "topology", "drop_fraction", "topology_seed", "mixing", "gamma",
                            "admm_rho", "mixing_file", "optimizer", "schedule", "eta0", "tau", "iterations",
                            "consensus_period", "repetitions", "eval_every", "seed", "init_std", "dropout",
                            "track_stationarity", "mode", "output_dir"}) {
      std::string flag = std::string("--") + key;
      for (auto& ch : flag)
        if (ch == '_') ch = '-';
      cmd->add_option(flag, values[key], std::string("overrides config key '") + key + "'");
    }
    cmd->add_option("--set", sets, "key=value override, also for synthetic.<key>");
  }

  json merged() const {
    json j = json::object();
    if (!config_path.empty()) {
      try {
        j = json::parse(read_text(config_path));
      } catch (const json::exception& e) {
        throw ValidationError(config_path + ": " + e.what());
      }
    }
    for (const auto& [key, text] : values)
      if (!text.empty()) j[key] = key == "dataset" || key.ends_with("_file") || key == "output_dir" ? json(text) : flag_value(text);
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw ValidationError("--set expects key=value, got '" + s + "'");
      const std::string key = s.substr(0, eq);
      const json value = flag_value(s.substr(eq + 1));
      if (key.starts_with("synthetic.")) j["synthetic"][key.substr(10)] = value;
      else j[key] = value;
    }
    return j;
  }
};

int run_load_check(const std::string& dir, const std::vector<std::size_t>& expect) {
  const DataGraph g = load_dataset(dir);
  const DatasetCounts c = dataset_counts(g);
  std::cout << describe(c) << '\n';
  if (!expect.empty()) {
    const std::vector<std::size_t> got = {c.nodes, c.edges, c.train, c.classes, c.features};
    if (expect.size() != got.size()) throw ValidationError("--expect takes nodes,edges,train,classes,features");
    if (expect != got) {
      std::cout << "counts differ from the expected values\n";
      return kInvalid;
    }
    std::cout << "counts match\n";
  }
  return kOk;
}

int run_design(const std::string& forbidden_path, double gamma, const AdmmOptions& base, const std::string& out,
               const std::string& meta_path) {
  const BoolMatrix a = read_bool_csv(forbidden_path);
  AdmmOptions opts = base;
  opts.gamma = gamma;
  const AdmmResult r = design_mixing_admm(a, opts);
  write_matrix_csv(out, r.mixing.entries);
  json meta;
  meta["agents"] = r.mixing.m();
  meta["gamma"] = gamma;
  meta["iterations"] = r.state.iteration;
  meta["converged"] = r.state.converged;
  meta["primal_residual"] = r.state.primal_residual;
  meta["dual_residual"] = r.state.dual_residual;
  meta["zero_snap"] = opts.zero_snap;
  meta["polished"] = r.polished;
  meta["spectral_radius"] = deflated_spectral_radius(r.mixing.entries);
  meta["zero_fraction"] = zero_fraction(r.mixing.entries);
  meta["objective"] = r.objective;
  json offending = json::array();
  for (const auto& [k, z] : r.forbidden_in_use) offending.push_back({k, z});
  meta["forbidden_in_use"] = offending;
  const std::string text = meta.dump(2);
  if (!meta_path.empty()) write_text(meta_path, text + "\n");
  std::cout << text << '\n';
  if (!r.forbidden_in_use.empty())
    std::cerr << "warning: " << r.forbidden_in_use.size()
              << " forbidden pair(s) keep nonzero weight; see forbidden_in_use\n";
  return kOk;
}

int failed_runs(const ExperimentResult& r) {
  std::size_t failed = 0;
  for (const auto& run : r.runs)
    if (run.failure) {
      ++failed;
      std::cerr << "repetition failed: " << *run.failure << '\n';
    }
  return failed == r.runs.size() ? kFailed : kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Distributed graph convolutional network training simulator"};
  app.require_subcommand(1);

  std::string dir;
  std::vector<std::size_t> expect;
  auto* load = app.add_subcommand("load-check", "validate a dataset directory and print its counts");
  load->add_option("--dataset", dir, "dataset directory")->required();
  load->add_option("--expect", expect, "nodes edges train classes features")->delimiter(',');

  ConfigFlags gen_flags;
  std::string gen_out;
  auto* gen = app.add_subcommand("generate", "write a synthetic benchmark in the dataset format");
  gen_flags.attach(gen);
  gen->add_option("--out", gen_out, "output directory")->required();

  ConfigFlags part_flags;
  std::string part_out, part_forbidden;
  auto* part = app.add_subcommand("partition", "partition a dataset across agents");
  part_flags.attach(part);
  part->add_option("--out", part_out, "node,agent CSV")->required();
  part->add_option("--forbidden-out", part_forbidden, "0/1 CSV of agent pairs without shared data edges");

  std::string forbidden, design_out, design_meta;
  double gamma = 0.5;
  AdmmOptions admm;
  auto* design = app.add_subcommand("design-topology", "design a sparse mixing matrix with ADMM");
  design->add_option("--forbidden", forbidden, "0/1 CSV forbidden-link matrix")->required()->check(CLI::ExistingFile);
  design->add_option("--gamma", gamma, "spectral gap parameter in (0, 1)")->default_val(0.5);
  design->add_option("--rho", admm.rho, "ADMM penalty")->default_val(1.0);
  design->add_option("--max-iter", admm.max_iter, "iteration cap")->default_val(5000);
  design->add_option("--tol", admm.tol, "stopping tolerance")->default_val(1e-8);
  design->add_option("--seed", admm.seed, "initialization seed")->default_val(0);
  design->add_option("--out", design_out, "output CSV for C")->required();
  design->add_option("--meta", design_meta, "optional JSON metadata file");

  ConfigFlags train_flags;
  auto* train = app.add_subcommand("train", "run distributed training (and baselines unless disabled)");
  train_flags.attach(train);

  ConfigFlags base_flags;
  auto* baseline = app.add_subcommand("baseline", "run only the centralized GCN and plain NN baselines");
  base_flags.attach(baseline);

  ConfigFlags sweep_flags;
  std::string sweep_kind;
  auto* sweep = app.add_subcommand("sweep", "run a family of experiments");
  sweep_flags.attach(sweep);
  sweep->add_option("--kind", sweep_kind, "connectivity | order | period | optimizer")->required();

  std::string report_dir;
  auto* rep = app.add_subcommand("report", "rebuild aggregates and plots from an output directory");
  rep->add_option("--dir", report_dir, "experiment output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kInvalid;
  }

  try {
    if (*load) return run_load_check(dir, expect);
    if (*design) return run_design(forbidden, gamma, admm, design_out, design_meta);
    if (*rep) {
      std::cout << report(report_dir).dump(2) << '\n';
      return kOk;
    }
    if (*gen) {
      ExperimentConfig c = config_from_json(gen_flags.merged());
      std::vector<int> groups;
      const DataGraph g = load_or_generate(c, &groups);
      write_dataset(g, gen_out);
      if (!groups.empty()) write_assignment(fs::path(gen_out) / "groups.csv", groups);
      std::cout << describe(dataset_counts(g)) << '\n';
      return kOk;
    }
    if (*part) {
      ExperimentConfig c = config_from_json(part_flags.merged());
      const Prepared p = prepare(c);
      write_assignment(part_out, p.partition.assign);
      if (!part_forbidden.empty()) write_bool_csv(part_forbidden, p.partition.forbidden);
      json info = p.notes;
      std::vector<std::size_t> sizes;
      for (const auto& nodes : p.partition.agent_nodes) sizes.push_back(nodes.size());
      info["agent_sizes"] = sizes;
      std::cout << info.dump(2) << '\n';
      return kOk;
    }
    if (*train || *baseline) {
      json j = (*train ? train_flags : base_flags).merged();
      if (*baseline) j["distributed"] = false;
      const ExperimentResult r = run_experiment(config_from_json(j));
      std::cout << r.summary["methods"].dump(2) << '\n';
      return failed_runs(r);
    }
    if (*sweep) {
      const auto entries = run_sweep(config_from_json(sweep_flags.merged()), sweep_kind_from_string(sweep_kind));
      json out = json::object();
      int code = kOk;
      for (const auto& e : entries) {
        out[e.label] = e.result.summary["methods"];
        out[e.label]["survival_fraction"] = e.result.prepared.survival_fraction;
        if (failed_runs(e.result) != kOk) code = kFailed;
      }
      std::cout << out.dump(2) << '\n';
      return code;
    }
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kInvalid;
  } catch (const std::exception& e) {
    std::cerr << "failure: " << e.what() << '\n';
    return kFailed;
  }
  return kOk;
}
