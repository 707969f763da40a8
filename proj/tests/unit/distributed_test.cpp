#include <doctest.h>

#include <cmath>
#include <random>

#include "dgcn/distributed.hpp"
#include "dgcn/error.hpp"
#include "dgcn/metrics.hpp"
#include "oracle.hpp"

using namespace dgcn;

namespace {

double rel_error(const Matrix& a, const Matrix& b) {
  return (a - b).cwiseAbs().maxCoeff() / std::max(b.cwiseAbs().maxCoeff(), 1e-300);
}

double rel_error(const Vector& a, const Vector& b) {
  return (a - b).lpNorm<Eigen::Infinity>() / std::max(b.lpNorm<Eigen::Infinity>(), 1e-300);
}

std::vector<ParamBank> banks(const std::vector<AgentState>& agents) {
  std::vector<ParamBank> out;
  for (const auto& a : agents) out.push_back(a.params);
  return out;
}

struct Setup {
  DataGraph graph;
  Partition partition;
  AgentNetwork net;
  ModelSpec spec;
};

Setup make_setup(std::size_t n, std::size_t m, std::size_t order, Basis basis, std::uint64_t seed,
                 std::vector<std::size_t> hidden = {4}) {
  std::mt19937_64 rng(seed);
  Setup s;
  s.graph = oracle::random_graph(n, 3, 3, rng);
  s.partition = partition_bfs(s.graph, m, seed);
  s.net = build_agent_network(s.graph, s.partition, required_pairs(s.partition));
  s.spec = make_model(3, hidden, 3, order, Activation::softmax, basis);
  return s;
}

}  // namespace

TEST_CASE("distributed forward equals the dense formula with per-agent weights") {
  for (std::uint64_t seed = 0; seed < 12; ++seed) {
    const Basis basis = seed % 2 ? Basis::chebyshev : Basis::monomial;
    Setup s = make_setup(20 + seed, 1 + seed % 5, 1 + seed % 3, basis, seed);
    std::vector<AgentState> agents = init_agents(s.spec, s.partition.m, 0.7, seed);
    const Matrix out = gather_rows(s.net, dist_forward(agents, s.net, s.spec));
    const Matrix expect =
        oracle::block_forward(oracle::dense(s.graph.shift), s.graph.features, s.spec, banks(agents), s.partition.assign);
    CHECK(rel_error(out, expect) < 1e-10);
  }
}

TEST_CASE("distributed backward equals finite differences of the global loss") {
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    const Basis basis = seed % 2 ? Basis::chebyshev : Basis::monomial;
    Setup s = make_setup(10, 2 + seed % 3, 1 + seed % 2, basis, 50 + seed);
    std::vector<AgentState> agents = init_agents(s.spec, s.partition.m, 0.8, seed);
    const std::vector<Matrix> outs = dist_forward(agents, s.net, s.spec);
    const auto grads =
        dist_backward(agents, s.net, s.spec, local_loss_grads(outs, s.net, s.graph, LossKind::cross_entropy));
    const auto numeric =
        oracle::finite_difference(s.graph, s.spec, banks(agents), s.partition.assign, LossKind::cross_entropy);
    std::vector<Vector> analytic;
    for (const auto& g : grads) analytic.push_back(g.flatten());
    CHECK(rel_error(oracle::stack(analytic), oracle::stack(numeric)) < 1e-5);
    CHECK(distributed_loss(outs, s.net, s.graph, LossKind::cross_entropy) ==
          doctest::Approx(oracle::loss(gather_rows(s.net, outs), s.graph, LossKind::cross_entropy)).epsilon(1e-12));
  }
}

TEST_CASE("message counts per round follow the boundary matrix") {
  Setup s = make_setup(30, 4, 2, Basis::monomial, 3);
  std::vector<AgentState> agents = init_agents(s.spec, s.partition.m, 0.5, 1);
  MessageLog log;
  log.keep_headers = true;
  log.pair_forward = decltype(log.pair_forward)::Zero(4, 4);
  DistOptions opts;
  opts.log = &log;
  const auto outs = dist_forward(agents, s.net, s.spec, opts);
  dist_backward(agents, s.net, s.spec, local_loss_grads(outs, s.net, s.graph, LossKind::cross_entropy), opts);

  const MessageCounts expect = expected_message_counts(s.partition, s.spec, 0);
  CHECK(log.forward_scalars == expect.forward);
  CHECK(log.backward_scalars == expect.forward);
  for (int k = 0; k < 4; ++k)
    for (int z = 0; z < 4; ++z) {
      if (k == z) continue;
      std::size_t per_round = 0;
      for (const auto& l : s.spec.layers) per_round += l.order * l.out_dim;
      CHECK(log.pair_forward(k, z) == static_cast<std::size_t>(s.partition.boundary(k, z)) * per_round);
    }
  for (const auto& h : log.headers) {
    CHECK(h.from != h.to);
    CHECK(s.partition.boundary(h.to, h.from) > 0);
    CHECK(static_cast<std::size_t>(h.payload.rows()) == h.targets.size());
    for (int target : h.targets) CHECK(s.partition.assign[static_cast<std::size_t>(target)] == h.to);
  }
}

TEST_CASE("a data edge without a channel is a protocol error") {
  Setup s = make_setup(20, 3, 1, Basis::monomial, 4);
  AgentPairSet pairs = required_pairs(s.partition);
  REQUIRE_FALSE(pairs.empty());
  const auto [k, z] = *pairs.begin();
  pairs.erase({k, z});
  pairs.erase({z, k});
  try {
    build_agent_network(s.graph, s.partition, pairs);
    FAIL("expected a protocol error");
  } catch (const ProtocolError& e) {
    CHECK(std::string(e.what()).find("data edge") != std::string::npos);
  }
}

TEST_CASE("parallel execution is bitwise identical to sequential execution") {
  Setup s = make_setup(40, 5, 2, Basis::chebyshev, 6);
  std::vector<AgentState> a = init_agents(s.spec, 5, 0.5, 3);
  std::vector<AgentState> b = a;
  DistOptions seq, par;
  par.mode = ExecutionMode::parallel;
  const auto oa = dist_forward(a, s.net, s.spec, seq);
  const auto ob = dist_forward(b, s.net, s.spec, par);
  for (std::size_t k = 0; k < 5; ++k) CHECK(oa[k] == ob[k]);
  const auto ga = dist_backward(a, s.net, s.spec, local_loss_grads(oa, s.net, s.graph, LossKind::cross_entropy), seq);
  const auto gb = dist_backward(b, s.net, s.spec, local_loss_grads(ob, s.net, s.graph, LossKind::cross_entropy), par);
  for (std::size_t k = 0; k < 5; ++k) CHECK(ga[k].flatten() == gb[k].flatten());
}

TEST_CASE("backward refuses a cache from other parameters") {
  Setup s = make_setup(15, 2, 1, Basis::monomial, 7);
  std::vector<AgentState> agents = init_agents(s.spec, 2, 0.5, 3);
  const auto outs = dist_forward(agents, s.net, s.spec);
  Vector w = agents[1].params.flatten();
  w(0) += 1.0;
  agents[1].params.load(w);
  CHECK_THROWS_AS(
      dist_backward(agents, s.net, s.spec, local_loss_grads(outs, s.net, s.graph, LossKind::cross_entropy)),
      ValidationError);
}

TEST_CASE("initialization is identically shaped and reproducible") {
  const ModelSpec spec = make_model(3, {4}, 2, 1, Activation::softmax);
  const auto a = init_agents(spec, 4, 0.1, 9);
  const auto b = init_agents(spec, 4, 0.1, 9);
  for (std::size_t k = 0; k < 4; ++k) {
    CHECK(a[k].params.matches(spec));
    CHECK(a[k].params.flatten() == b[k].params.flatten());
  }
  CHECK(a[0].params.flatten() != a[1].params.flatten());
  const ParamBank shared = ParamBank::gaussian(spec, 0.1, 2);
  for (const auto& agent : init_agents(spec, 3, 0.1, 9, &shared)) CHECK(agent.params.flatten() == shared.flatten());
}

TEST_CASE("consensus step mixes over the support of C and honors the period") {
  const ModelSpec spec = make_model(2, {}, 2, 1, Activation::softmax);
  std::vector<AgentState> agents = init_agents(spec, 3, 1.0, 1);
  const MixingMatrix c = metropolis_weights(line_pairs(3), 3);
  std::vector<Vector> psi;
  for (const auto& a : agents) psi.push_back(a.params.flatten());

  MessageLog log;
  CHECK(consensus_step(agents, psi, c.entries, line_pairs(3), 4, 2, &log));
  for (std::size_t k = 0; k < 3; ++k) {
    Vector expect = Vector::Zero(psi[k].size());
    for (std::size_t z = 0; z < 3; ++z) expect += c.entries(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(z)) * psi[z];
    CHECK((agents[k].params.flatten() - expect).norm() < 1e-15);
  }
  CHECK(log.consensus_batches == 4);
  CHECK(log.consensus_scalars == 4 * spec.parameter_count());
  // the mean is preserved
  std::vector<Vector> after;
  for (const auto& a : agents) after.push_back(a.params.flatten());
  CHECK((block_mean(after) - block_mean(psi)).norm() < 1e-14);

  MessageLog quiet;
  CHECK_FALSE(consensus_step(agents, psi, c.entries, line_pairs(3), 3, 2, &quiet));
  CHECK(quiet.consensus_scalars == 0);
  for (std::size_t k = 0; k < 3; ++k) CHECK(agents[k].params.flatten() == psi[k]);
  CHECK_FALSE(consensus_step(agents, psi, c.entries, line_pairs(3), 0, std::nullopt, &quiet));

  const AgentPairSet partial = {{0, 1}, {1, 0}};
  CHECK_THROWS_AS(consensus_step(agents, psi, c.entries, partial, 0, 1), ProtocolError);
}

TEST_CASE("one agent reproduces centralized gradient descent") {
  Setup s = make_setup(25, 1, 1, Basis::monomial, 10);
  const MixingMatrix c = metropolis_weights({}, 1);
  DistConfig dc;
  dc.iterations = 30;
  dc.init_std = 0.3;
  dc.identical_init = true;
  dc.seed = 5;
  dc.schedule.eta0 = 0.4;
  dc.track_stationarity = false;
  const DistResult dr = train_distributed(s.graph, s.partition, c, s.spec, dc);
  CentralConfig cc;
  cc.iterations = 30;
  cc.schedule.eta0 = 0.4;
  cc.initial = ParamBank::gaussian(s.spec, 0.3, 5);
  const CentralResult cr = train_centralized(s.graph, s.spec, cc);
  CHECK(rel_error(dr.agents[0].params.flatten(), cr.params.flatten()) < 1e-10);
  CHECK(dr.records.back().train_loss == doctest::Approx(cr.records.back().train_loss).epsilon(1e-10));
}

TEST_CASE("training records carry metrics and message counts") {
  Setup s = make_setup(40, 4, 1, Basis::monomial, 11);
  const AgentPairSet links = required_pairs(s.partition);
  const MixingMatrix c = metropolis_weights(links, 4);
  DistConfig dc;
  dc.iterations = 10;
  dc.eval_every = 5;
  dc.schedule.eta0 = 0.5;
  const DistResult r = train_distributed(s.graph, s.partition, c, s.spec, dc);
  REQUIRE_FALSE(r.failure);
  REQUIRE(r.records.size() == 11);
  const MessageCounts expect = expected_message_counts(s.partition, s.spec, links.size() / 2);
  for (std::size_t t = 0; t < 10; ++t) {
    CHECK(r.records[t].messages_forward == expect.forward);
    CHECK(r.records[t].messages_backward == expect.backward);
    CHECK(r.records[t].messages_consensus == expect.consensus);
    CHECK(r.records[t].stationarity.has_value());
    CHECK(*r.records[t].stationarity_best <= *r.records[t].stationarity);
  }
  CHECK(r.records[5].test_accuracy.has_value());
  CHECK_FALSE(r.records[6].test_accuracy.has_value());
  CHECK(r.records[10].messages_backward == 0);
  CHECK(r.records[10].test_accuracy.has_value());
}

TEST_CASE("non-finite training stops with a failure instead of an exception") {
  Setup s = make_setup(20, 2, 1, Basis::monomial, 12);
  s.graph.features *= 1e200;
  const MixingMatrix c = metropolis_weights(required_pairs(s.partition), 2);
  DistConfig dc;
  dc.iterations = 20;
  dc.init_std = 1e150;
  dc.schedule.eta0 = 1e100;
  dc.track_stationarity = false;
  const DistResult r = train_distributed(s.graph, s.partition, c, s.spec, dc);
  CHECK(r.failure.has_value());
  CHECK(r.records.size() < 21);
}
