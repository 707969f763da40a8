#include "dgcn/distributed.hpp"

#include <atomic>
#include <cmath>
#include <exception>
#include <limits>
#include <map>
#include <thread>

#include "dgcn/error.hpp"
#include "dgcn/metrics.hpp"

namespace dgcn {

void MessageLog::record(const MessageBatch& batch) {
  const std::size_t scalars = static_cast<std::size_t>(batch.payload.size());
  switch (batch.round.direction) {
    case Direction::forward:
      ++forward_batches;
      forward_scalars += scalars;
      if (pair_forward.size() > 0) pair_forward(batch.to, batch.from) += scalars;
      break;
    case Direction::backward:
      ++backward_batches;
      backward_scalars += scalars;
      break;
    case Direction::consensus:
      ++consensus_batches;
      consensus_scalars += scalars;
      break;
  }
  if (keep_headers) {
    MessageBatch header;
    header.round = batch.round;
    header.from = batch.from;
    header.to = batch.to;
    header.targets = batch.targets;
    header.payload.resize(batch.payload.rows(), batch.payload.cols());
    header.payload.setZero();
    headers.push_back(std::move(header));
  }
}

void for_each_agent(ExecutionMode mode, std::size_t m, const std::function<void(std::size_t)>& fn) {
  if (mode == ExecutionMode::sequential || m <= 1) {
    for (std::size_t k = 0; k < m; ++k) fn(k);
    return;
  }
  std::vector<std::exception_ptr> errors(m);
  {
    std::vector<std::jthread> workers;
    workers.reserve(m);
    for (std::size_t k = 0; k < m; ++k)
      workers.emplace_back([&, k] {
        try {
          fn(k);
        } catch (...) {
          errors[k] = std::current_exception();
        }
      });
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

AgentNetwork build_agent_network(const DataGraph& graph, const Partition& partition, const AgentPairSet& channels) {
  if (!graph.shift_kind) throw ValidationError("data graph has no shift operator; call normalize_shift first");
  if (partition.assign.size() != graph.n) throw ValidationError("partition does not match the data graph");

  AgentNetwork net;
  net.n = graph.n;
  net.m = partition.m;
  net.assign = partition.assign;
  net.local_index = partition.local_index();
  net.channels = channels;
  net.total_train = graph.train_mask.size();
  net.chebyshev_scale = chebyshev_scale(graph.shift);
  net.agents.resize(net.m);

  std::vector<std::map<int, AgentView::Outbox>> forward(net.m), adjoint(net.m);
  for (std::size_t k = 0; k < net.m; ++k) {
    auto& v = net.agents[k];
    v.id = static_cast<int>(k);
    v.nodes = partition.agent_nodes[k];
    v.train = partition.agent_train[k];
    for (int i : v.train) v.train_local.push_back(net.local_index[static_cast<std::size_t>(i)]);
    v.features.resize(static_cast<Eigen::Index>(v.nodes.size()), graph.features.cols());
    for (std::size_t r = 0; r < v.nodes.size(); ++r)
      v.features.row(static_cast<Eigen::Index>(r)) = graph.features.row(v.nodes[r]);
  }

  for (Eigen::Index i = 0; i < graph.shift.outerSize(); ++i) {
    for (SparseMatrix::InnerIterator it(graph.shift, i); it; ++it) {
      const auto j = static_cast<int>(it.col());
      const int k = net.assign[static_cast<std::size_t>(i)];
      const int z = net.assign[static_cast<std::size_t>(j)];
      const int li = net.local_index[static_cast<std::size_t>(i)];
      const int lj = net.local_index[static_cast<std::size_t>(j)];
      if (k == z) {
        net.agents[static_cast<std::size_t>(k)].local_forward.push_back({li, lj, it.value()});
        net.agents[static_cast<std::size_t>(k)].local_adjoint.push_back({lj, li, it.value()});
        continue;
      }
      if (!channels.count({z, k}) || !channels.count({k, z}))
        throw ProtocolError("data edge (" + std::to_string(i) + ", " + std::to_string(j) +
                            ") needs a communication link between agents " + std::to_string(z) + " and " +
                            std::to_string(k));
      auto& fo = forward[static_cast<std::size_t>(z)][k];
      fo.to = k;
      fo.targets_global.push_back(static_cast<int>(i));
      fo.entries.push_back({li, lj, it.value()});
      auto& ao = adjoint[static_cast<std::size_t>(k)][z];
      ao.to = z;
      ao.targets_global.push_back(j);
      ao.entries.push_back({lj, li, it.value()});
    }
  }
  for (std::size_t k = 0; k < net.m; ++k) {
    for (auto& [to, box] : forward[k]) net.agents[k].forward_out.push_back(std::move(box));
    for (auto& [to, box] : adjoint[k]) net.agents[k].adjoint_out.push_back(std::move(box));
  }
  return net;
}

std::vector<AgentState> init_agents(const ModelSpec& spec, std::size_t m, double stddev, std::uint64_t seed,
                                    const ParamBank* shared) {
  spec.validate();
  std::vector<AgentState> agents(m);
  for (std::size_t k = 0; k < m; ++k) {
    auto& a = agents[k];
    a.id = static_cast<int>(k);
    if (shared) {
      if (!shared->matches(spec)) throw ValidationError("shared initial parameters do not match the model");
      a.params = *shared;
    } else {
      std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                        static_cast<std::uint32_t>(k), 0x9e3779b9u};
      std::uint64_t sub = 0;
      std::vector<std::uint32_t> words(2);
      seq.generate(words.begin(), words.end());
      sub = (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
      a.params = ParamBank::gaussian(spec, stddev, sub);
    }
    a.dropout_rng.seed(seed ^ (0xd1b54a32d192ed03ULL * (k + 1)));
  }
  return agents;
}

namespace {

std::atomic<std::uint64_t> forward_counter{0};

// One synchronous diffusion round over the agents' row blocks:
// out = coef * D in (forward) or coef * D^T in (adjoint).
std::vector<Matrix> diffuse(const AgentNetwork& net, const std::vector<Matrix>& in, double coef, bool adjoint,
                            const RoundTag& tag, const DistOptions& options) {
  const std::size_t m = net.m;
  std::vector<Matrix> out(m);
  std::vector<std::vector<MessageBatch>> outbox(m);

  for_each_agent(options.mode, m, [&](std::size_t k) {
    const auto& view = net.agents[k];
    const Matrix& x = in[k];
    Matrix local = Matrix::Zero(x.rows(), x.cols());
    for (const auto& e : adjoint ? view.local_adjoint : view.local_forward)
      local.row(e.target) += (coef * e.value) * x.row(e.source);
    out[k] = std::move(local);
    for (const auto& box : adjoint ? view.adjoint_out : view.forward_out) {
      MessageBatch batch;
      batch.round = tag;
      batch.from = static_cast<int>(k);
      batch.to = box.to;
      batch.targets = box.targets_global;
      batch.payload.resize(static_cast<Eigen::Index>(box.entries.size()), x.cols());
      for (std::size_t r = 0; r < box.entries.size(); ++r)
        batch.payload.row(static_cast<Eigen::Index>(r)) = (coef * box.entries[r].value) * x.row(box.entries[r].source);
      outbox[k].push_back(std::move(batch));
    }
  });

  // barrier: deliver in ascending sender order
  std::vector<std::vector<const MessageBatch*>> inbox(m);
  for (std::size_t k = 0; k < m; ++k)
    for (const auto& batch : outbox[k]) {
      inbox[static_cast<std::size_t>(batch.to)].push_back(&batch);
      if (options.log) options.log->record(batch);
    }

  for_each_agent(options.mode, m, [&](std::size_t k) {
    for (const MessageBatch* batch : inbox[k])
      for (std::size_t r = 0; r < batch->targets.size(); ++r)
        out[k].row(net.local_index[static_cast<std::size_t>(batch->targets[r])]) +=
            batch->payload.row(static_cast<Eigen::Index>(r));
  });
  return out;
}

void check_agents(const std::vector<AgentState>& agents, const AgentNetwork& net, const ModelSpec& spec) {
  if (agents.size() != net.m)
    throw ValidationError("agent count " + std::to_string(agents.size()) + " does not match network size " +
                          std::to_string(net.m));
  for (const auto& a : agents)
    if (!a.params.matches(spec))
      throw ValidationError("agent " + std::to_string(a.id) + " parameters do not match the model");
}

}  // namespace

std::vector<Matrix> dist_forward(std::vector<AgentState>& agents, const AgentNetwork& net, const ModelSpec& spec,
                                 const DistOptions& options) {
  spec.validate();
  check_agents(agents, net, spec);
  if (net.agents.empty() || net.agents.front().features.cols() != static_cast<Eigen::Index>(spec.layers.front().in_dim))
    throw ValidationError("layer 0 input width does not match the feature dimension");

  const std::size_t m = net.m;
  const std::uint64_t token = ++forward_counter;
  std::vector<Matrix> current(m);
  for (std::size_t k = 0; k < m; ++k) {
    current[k] = net.agents[k].features;
    agents[k].cache.assign(spec.layers.size(), {});
    agents[k].cache_fingerprint = fingerprint(agents[k].params);
    agents[k].cache_token = token;
  }

  for (std::size_t l = 0; l < spec.layers.size(); ++l) {
    const auto& layer = spec.layers[l];
    const std::size_t order = layer.order;
    std::vector<std::vector<Matrix>> y(m);

    for_each_agent(options.mode, m, [&](std::size_t k) {
      auto& lc = agents[k].cache[l];
      if (options.dropout > 0.0) {
        std::bernoulli_distribution keep(1.0 - options.dropout);
        lc.dropout_mask.resize(current[k].rows(), current[k].cols());
        for (Eigen::Index c = 0; c < current[k].cols(); ++c)
          for (Eigen::Index r = 0; r < current[k].rows(); ++r)
            lc.dropout_mask(r, c) = keep(agents[k].dropout_rng) ? 1.0 / (1.0 - options.dropout) : 0.0;
        current[k] = current[k].cwiseProduct(lc.dropout_mask);
      }
      lc.input = current[k];
      y[k].reserve(order + 1);
      for (std::size_t p = 0; p <= order; ++p) y[k].push_back(lc.input * agents[k].params.weights[l][p]);
    });

    auto take = [&](std::size_t p) {
      std::vector<Matrix> v(m);
      for (std::size_t k = 0; k < m; ++k) v[k] = y[k][p];
      return v;
    };
    RoundTag tag{options.iteration, l, 0, Direction::forward};
    std::vector<Matrix> pre(m);

    if (layer.basis == Basis::monomial) {
      // Horner: Y_0 + D (Y_1 + D (Y_2 + ...))
      std::vector<Matrix> acc = take(order);
      for (std::size_t r = order; r-- > 0;) {
        tag.hop = order - 1 - r;
        std::vector<Matrix> d = diffuse(net, acc, 1.0, false, tag, options);
        for (std::size_t k = 0; k < m; ++k) acc[k] = y[k][r] + d[k];
      }
      pre = std::move(acc);
    } else {
      // Clenshaw on the scaled operator
      const double coef = 1.0 / net.chebyshev_scale;
      std::vector<Matrix> b1 = take(order);
      std::vector<Matrix> b2(m);
      for (std::size_t k = 0; k < m; ++k) b2[k] = Matrix::Zero(b1[k].rows(), b1[k].cols());
      std::size_t hop = 0;
      for (std::size_t r = order - 1; r >= 1; --r) {
        tag.hop = hop++;
        std::vector<Matrix> d = diffuse(net, b1, coef, false, tag, options);
        for (std::size_t k = 0; k < m; ++k) {
          Matrix next = y[k][r] + 2.0 * d[k] - b2[k];
          b2[k] = std::move(b1[k]);
          b1[k] = std::move(next);
        }
      }
      tag.hop = hop;
      std::vector<Matrix> d = diffuse(net, b1, coef, false, tag, options);
      for (std::size_t k = 0; k < m; ++k) pre[k] = y[k][0] + d[k] - b2[k];
    }

    for_each_agent(options.mode, m, [&](std::size_t k) {
      auto& lc = agents[k].cache[l];
      lc.pre = std::move(pre[k]);
      lc.output = apply_activation(layer.activation, lc.pre);
      current[k] = lc.output;
    });
  }
  return current;
}

std::vector<Matrix> local_loss_grads(const std::vector<Matrix>& outputs, const AgentNetwork& net,
                                     const DataGraph& graph, LossKind kind) {
  if (net.total_train == 0) throw ValidationError("training mask is empty");
  const double scale = 1.0 / static_cast<double>(net.total_train);
  std::vector<Matrix> grads(net.m);
  for (std::size_t k = 0; k < net.m; ++k) {
    grads[k] = Matrix::Zero(outputs[k].rows(), outputs[k].cols());
    const auto& view = net.agents[k];
    for (std::size_t t = 0; t < view.train.size(); ++t)
      add_node_loss_grad(outputs[k].row(view.train_local[t]), graph, view.train[t], kind, scale,
                         grads[k].row(view.train_local[t]));
  }
  return grads;
}

double distributed_loss(const std::vector<Matrix>& outputs, const AgentNetwork& net, const DataGraph& graph,
                        LossKind kind) {
  if (net.total_train == 0) throw ValidationError("training mask is empty");
  double total = 0.0;
  for (std::size_t k = 0; k < net.m; ++k) {
    const auto& view = net.agents[k];
    double local = 0.0;
    for (std::size_t t = 0; t < view.train.size(); ++t)
      local += node_loss(outputs[k].row(view.train_local[t]), graph, view.train[t], kind);
    total += local;
  }
  return total / static_cast<double>(net.total_train);
}

std::vector<ParamBank> dist_backward(std::vector<AgentState>& agents, const AgentNetwork& net, const ModelSpec& spec,
                                     const std::vector<Matrix>& loss_grads, const DistOptions& options) {
  check_agents(agents, net, spec);
  const std::size_t m = net.m;
  if (loss_grads.size() != m) throw ValidationError("one loss-gradient block per agent is required");
  const std::uint64_t token = agents.front().cache_token;
  for (const auto& a : agents) {
    if (a.cache.size() != spec.layers.size() || a.cache_token == 0 || a.cache_token != token)
      throw ValidationError("agent " + std::to_string(a.id) + " has no cache from the current forward round");
    if (a.cache_fingerprint != fingerprint(a.params))
      throw ValidationError("agent " + std::to_string(a.id) + " changed its parameters after the forward round");
  }

  std::vector<ParamBank> grads(m);
  for (std::size_t k = 0; k < m; ++k) grads[k] = ParamBank::zeros(spec);

  std::vector<Matrix> upstream = loss_grads;
  for (std::size_t l = spec.layers.size(); l-- > 0;) {
    const auto& layer = spec.layers[l];
    const std::size_t order = layer.order;
    std::vector<std::vector<Matrix>> g(order + 1, std::vector<Matrix>(m));

    for_each_agent(options.mode, m, [&](std::size_t k) {
      const auto& lc = agents[k].cache[l];
      g[0][k] = activation_backward(layer.activation, lc.pre, lc.output, upstream[k]);
    });

    RoundTag tag{options.iteration, l, 0, Direction::backward};
    const double coef = layer.basis == Basis::monomial ? 1.0 : 1.0 / net.chebyshev_scale;
    for (std::size_t p = 1; p <= order; ++p) {
      tag.hop = p - 1;
      std::vector<Matrix> d = diffuse(net, g[p - 1], coef, true, tag, options);
      for (std::size_t k = 0; k < m; ++k) {
        if (layer.basis == Basis::chebyshev && p >= 2) g[p][k] = 2.0 * d[k] - g[p - 2][k];
        else g[p][k] = std::move(d[k]);
      }
    }

    for_each_agent(options.mode, m, [&](std::size_t k) {
      const auto& lc = agents[k].cache[l];
      const auto& w = agents[k].params.weights[l];
      for (std::size_t p = 0; p <= order; ++p) grads[k].weights[l][p].noalias() = lc.input.transpose() * g[p][k];
      if (l == 0) return;
      Matrix back = Matrix::Zero(lc.input.rows(), lc.input.cols());
      for (std::size_t p = 0; p <= order; ++p) back.noalias() += g[p][k] * w[p].transpose();
      if (lc.dropout_mask.size() > 0) back = back.cwiseProduct(lc.dropout_mask);
      upstream[k] = std::move(back);
    });
  }
  return grads;
}

Matrix gather_rows(const AgentNetwork& net, const std::vector<Matrix>& per_agent) {
  if (per_agent.size() != net.m) throw ValidationError("one row block per agent is required");
  const Eigen::Index width = per_agent.empty() ? 0 : per_agent.front().cols();
  Matrix out(static_cast<Eigen::Index>(net.n), width);
  for (std::size_t k = 0; k < net.m; ++k)
    for (std::size_t r = 0; r < net.agents[k].nodes.size(); ++r)
      out.row(net.agents[k].nodes[r]) = per_agent[k].row(static_cast<Eigen::Index>(r));
  return out;
}

bool consensus_step(std::vector<AgentState>& agents, std::vector<Vector>& psi, const Matrix& c,
                    const AgentPairSet& channels, std::size_t t, std::optional<std::size_t> period,
                    MessageLog* log) {
  const std::size_t m = agents.size();
  if (static_cast<std::size_t>(c.rows()) != m || static_cast<std::size_t>(c.cols()) != m)
    throw ValidationError("mixing matrix is " + std::to_string(c.rows()) + "x" + std::to_string(c.cols()) + " but there are " +
                          std::to_string(m) + " agents");
  if (psi.size() != m) throw ValidationError("one local estimate per agent is required");

  const bool mix = period && *period > 0 && t % *period == 0;
  if (!mix) {
    for (std::size_t k = 0; k < m; ++k) agents[k].params.load(psi[k]);
    return false;
  }
  for (Eigen::Index k = 0; k < c.rows(); ++k)
    for (Eigen::Index z = 0; z < c.cols(); ++z)
      if (k != z && c(k, z) != 0.0 && !channels.count({static_cast<int>(z), static_cast<int>(k)}))
        throw ProtocolError("mixing weight C(" + std::to_string(k) + ", " + std::to_string(z) +
                            ") needs a communication link that does not exist");

  std::vector<Vector> mixed(m);
  for (std::size_t k = 0; k < m; ++k) {
    Vector acc = Vector::Zero(psi[k].size());
    for (std::size_t z = 0; z < m; ++z) {
      const double w = c(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(z));
      if (w == 0.0) continue;
      acc += w * psi[z];
      if (z != k && log) {
        MessageBatch batch;
        batch.round = {t, 0, 0, Direction::consensus};
        batch.from = static_cast<int>(z);
        batch.to = static_cast<int>(k);
        batch.payload = psi[z];
        log->record(batch);
      }
    }
    mixed[k] = std::move(acc);
  }
  for (std::size_t k = 0; k < m; ++k) agents[k].params.load(mixed[k]);
  return true;
}

DistResult train_distributed(const DataGraph& graph, const Partition& partition, const MixingMatrix& mixing,
                             const ModelSpec& spec, const DistConfig& config, bool keep_trajectory) {
  spec.validate();
  if (mixing.m() != partition.m)
    throw ValidationError("mixing matrix size " + std::to_string(mixing.m()) + " does not match agent count " +
                          std::to_string(partition.m));
  const AgentPairSet channels = config.channels ? *config.channels : mixing.comm_edges();
  const AgentNetwork net = build_agent_network(graph, partition, channels);
  const std::vector<int> eval_nodes = graph.evaluation_nodes();

  DistResult result;
  if (config.initial) {
    result.agents = init_agents(spec, partition.m, config.init_std, config.seed, &*config.initial);
  } else if (config.identical_init) {
    const ParamBank shared = ParamBank::gaussian(spec, config.init_std, config.seed);
    result.agents = init_agents(spec, partition.m, config.init_std, config.seed, &shared);
  } else {
    result.agents = init_agents(spec, partition.m, config.init_std, config.seed);
  }
  auto& agents = result.agents;
  const std::size_t m = partition.m;
  const std::size_t every = std::max<std::size_t>(config.eval_every, 1);
  double best = std::numeric_limits<double>::infinity();

  for (std::size_t t = 0; t <= config.iterations; ++t) {
    const bool last = t == config.iterations;
    MessageLog log;
    DistOptions opts{config.mode, last ? 0.0 : config.dropout, t, &log};

    TrainRecord rec;
    rec.iteration = t;
    rec.eta = step_size(config.schedule, t);
    std::vector<Matrix> outputs = dist_forward(agents, net, spec, opts);
    rec.train_loss = distributed_loss(outputs, net, graph, config.loss);
    if (!std::isfinite(rec.train_loss)) {
      result.failure = "training loss is not finite at iteration " + std::to_string(t);
      break;
    }

    if (!eval_nodes.empty() && (last || t % every == 0)) {
      Matrix full;
      if (opts.dropout > 0.0) {
        std::vector<AgentState> probe = agents;
        full = gather_rows(net, dist_forward(probe, net, spec, {config.mode, 0.0, t, nullptr}));
      } else {
        full = gather_rows(net, outputs);
      }
      const double metric = evaluate_outputs(full, graph, eval_nodes);
      if (graph.is_classification()) rec.test_accuracy = metric;
      else rec.test_mse = metric;
    }

    std::vector<Vector> flats(m);
    for (std::size_t k = 0; k < m; ++k) flats[k] = agents[k].params.flatten();
    rec.consensus_residual = consensus_residual(flats);
    rec.max_pairwise_distance = max_pairwise_distance(flats);
    if (config.track_stationarity) {
      const double g = stationarity(graph, spec, flats, config.loss);
      best = std::min(best, g);
      rec.stationarity = g;
      rec.stationarity_best = best;
    }

    if (last) {
      rec.messages_forward = log.forward_scalars;
      result.records.push_back(rec);
      break;
    }
    if (keep_trajectory) result.trajectory.push_back(flats);

    const std::vector<Matrix> out_grads = local_loss_grads(outputs, net, graph, config.loss);
    const std::vector<ParamBank> grads = dist_backward(agents, net, spec, out_grads, opts);
    std::vector<Vector> psi(m);
    try {
      for_each_agent(config.mode, m, [&](std::size_t k) {
        psi[k] = local_step(flats[k], grads[k].flatten(), rec.eta, config.optimizer, agents[k].optimizer);
      });
    } catch (const ValidationError& e) {
      result.failure = std::string(e.what()) + " at iteration " + std::to_string(t);
      break;
    }
    consensus_step(agents, psi, mixing.entries, channels, t, config.consensus_period, &log);

    rec.messages_forward = log.forward_scalars;
    rec.messages_backward = log.backward_scalars;
    rec.messages_consensus = log.consensus_scalars;
    result.records.push_back(rec);
  }
  if (keep_trajectory && !result.failure) {
    std::vector<Vector> flats(m);
    for (std::size_t k = 0; k < m; ++k) flats[k] = agents[k].params.flatten();
    result.trajectory.push_back(std::move(flats));
  }
  return result;
}

}  // namespace dgcn
