#include <doctest.h>

#include <random>
#include <sstream>

#include "dgcn/error.hpp"
#include "dgcn/metrics.hpp"
#include "oracle.hpp"

using namespace dgcn;

TEST_CASE("consensus residual equals the explicit projector residual") {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t m = 1; m <= 6; ++m) {
    std::vector<Vector> blocks;
    for (std::size_t k = 0; k < m; ++k) blocks.push_back(Vector::NullaryExpr(4, [&] { return normal(rng); }));
    const Vector w = oracle::stack(blocks);
    const Matrix proj = oracle::consensus_projector(m, 4);
    CHECK(consensus_residual(blocks) == doctest::Approx((w - proj * w).norm()).epsilon(1e-12));
    const Vector mean = block_mean(blocks);
    CHECK((proj * w).head(4).isApprox(mean, 1e-12));
  }
}

TEST_CASE("residual and pairwise distance vanish exactly at consensus") {
  const std::vector<Vector> same(4, Vector::LinSpaced(5, -1.0, 1.0));
  CHECK(consensus_residual(same) == 0.0);
  CHECK(max_pairwise_distance(same) == 0.0);
  std::vector<Vector> apart = same;
  apart[2](0) += 3.0;
  CHECK(max_pairwise_distance(apart) == doctest::Approx(3.0));
  CHECK_THROWS_AS(block_mean(std::vector<Vector>{}), ValidationError);
  CHECK_THROWS_AS(block_mean(std::vector<Vector>{Vector::Zero(2), Vector::Zero(3)}), ValidationError);
}

TEST_CASE("stationarity equals the projected stacked gradient at the consensus point") {
  std::mt19937_64 rng(2);
  for (int rep = 0; rep < 4; ++rep) {
    const DataGraph g = oracle::random_graph(12, 3, 3, rng);
    const std::size_t m = 2 + static_cast<std::size_t>(rep);
    const Partition part = partition_bfs(g, m, static_cast<std::uint64_t>(rep));
    const ModelSpec spec = make_model(3, {3}, 3, 1 + static_cast<std::size_t>(rep) % 2, Activation::softmax);
    std::vector<Vector> blocks;
    for (std::size_t k = 0; k < m; ++k) blocks.push_back(ParamBank::gaussian(spec, 0.6, 10 * k + 1).flatten());
    const ParamBank mean = ParamBank::unflatten(spec, block_mean(blocks));
    const std::vector<ParamBank> at_mean(m, mean);
    const Vector grad =
        oracle::stack(oracle::finite_difference(g, spec, at_mean, part.assign, LossKind::cross_entropy));
    const Matrix proj = oracle::consensus_projector(m, spec.parameter_count());
    const double expect = grad.dot(proj * grad);
    CHECK(stationarity(g, spec, blocks, LossKind::cross_entropy) == doctest::Approx(expect).epsilon(1e-6));
  }
}

TEST_CASE("accuracy takes the first maximum and MSE averages over columns") {
  Matrix out(3, 2);
  out << 0.5, 0.5, 0.2, 0.8, 0.9, 0.1;
  const std::vector<int> classes{0, 0, 0};
  const std::vector<int> nodes{0, 1, 2};
  CHECK(accuracy(out, classes, nodes) == doctest::Approx(2.0 / 3.0));
  Matrix targets = Matrix::Zero(3, 2);
  const std::vector<int> one{1};
  CHECK(mean_squared_error(out, targets, one) == doctest::Approx((0.04 + 0.64) / 2.0));
  CHECK_THROWS_AS(accuracy(out, classes, std::vector<int>{}), ValidationError);
}

TEST_CASE("expected message counts") {
  std::mt19937_64 rng(3);
  const DataGraph g = oracle::random_graph(20, 2, 2, rng);
  const Partition part = partition_bfs(g, 3, 1);
  const ModelSpec spec = make_model(2, {5}, 2, 2, Activation::softmax);
  std::size_t cross = 0;
  for (const auto& e : g.edges)
    if (part.assign[static_cast<std::size_t>(e.src)] != part.assign[static_cast<std::size_t>(e.dst)]) ++cross;
  const MessageCounts c = expected_message_counts(part, spec, 2);
  CHECK(c.forward == 2 * cross * 5 + 2 * cross * 2);
  CHECK(c.backward == c.forward);
  CHECK(c.consensus == 2 * 2 * spec.parameter_count());
}

TEST_CASE("training records round-trip through JSON lines") {
  TrainRecord a;
  a.iteration = 3;
  a.train_loss = 0.125;
  a.test_accuracy = 0.75;
  a.consensus_residual = 1e-3;
  a.stationarity = 2.5;
  a.stationarity_best = 2.0;
  a.messages_forward = 10;
  a.messages_backward = 10;
  a.messages_consensus = 40;
  a.eta = 0.1;
  TrainRecord b;
  b.iteration = 4;
  b.train_loss = 0.1 + 1e-17;
  b.test_mse = 0.3;
  std::stringstream ss;
  write_jsonl(ss, {a, b});
  const auto back = read_jsonl(ss);
  REQUIRE(back.size() == 2);
  CHECK(back[0].test_accuracy == a.test_accuracy);
  CHECK_FALSE(back[0].test_mse);
  CHECK(back[0].stationarity_best == a.stationarity_best);
  CHECK(back[0].messages_consensus == 40);
  CHECK(back[1].train_loss == b.train_loss);
  CHECK(back[1].test_mse == b.test_mse);
  CHECK_FALSE(back[1].stationarity);

  std::stringstream bad("{\"iteration\": 1}\n");
  CHECK_THROWS_AS(read_jsonl(bad), ValidationError);
}

TEST_CASE("CSV export and summary") {
  TrainRecord a, b;
  a.train_loss = 1.0;
  a.test_accuracy = 0.5;
  b.iteration = 1;
  b.train_loss = 0.5;
  b.test_accuracy = 0.7;
  std::stringstream ss;
  write_records_csv(ss, {a, b});
  std::string header, row;
  std::getline(ss, header);
  std::getline(ss, row);
  CHECK(header.rfind("iteration,train_loss,test_accuracy", 0) == 0);
  CHECK(row.rfind("0,1,0.5,,", 0) == 0);
  const auto s = summarize({a, b});
  CHECK(s["iterations"] == 1);
  CHECK(s["best_train_loss"] == 0.5);
  CHECK(s["best_test_accuracy"] == 0.7);
  CHECK(s["best_test_mse"].is_null());
}
