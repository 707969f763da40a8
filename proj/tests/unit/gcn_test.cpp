#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>

#include "dgcn/error.hpp"
#include "dgcn/gcn.hpp"
#include "oracle.hpp"

using namespace dgcn;

namespace {

double rel_error(const Matrix& a, const Matrix& b) {
  const double scale = std::max(b.cwiseAbs().maxCoeff(), 1e-300);
  return (a - b).cwiseAbs().maxCoeff() / scale;
}

double rel_error(const Vector& a, const Vector& b) {
  return (a - b).lpNorm<Eigen::Infinity>() / std::max(b.lpNorm<Eigen::Infinity>(), 1e-300);
}

}  // namespace

TEST_CASE("model construction and validation") {
  const ModelSpec spec = make_model(5, {8, 4}, 3, 2, Activation::softmax);
  REQUIRE(spec.layers.size() == 3);
  CHECK(spec.layers[0].in_dim == 5);
  CHECK(spec.layers[1].activation == Activation::relu);
  CHECK(spec.layers[2].activation == Activation::softmax);
  CHECK(spec.parameter_count() == 3 * (5 * 8 + 8 * 4 + 4 * 3));

  ModelSpec bad = spec;
  bad.layers[1].order = 0;
  CHECK_THROWS_AS(bad.validate(), ValidationError);
  bad = spec;
  bad.layers[1].in_dim = 7;
  CHECK_THROWS_AS(bad.validate(), ValidationError);
  bad = spec;
  bad.layers[0].activation = Activation::softmax;
  CHECK_THROWS_AS(bad.validate(), ValidationError);
  CHECK_THROWS_AS(ModelSpec{}.validate(), ValidationError);
}

TEST_CASE("parameter banks flatten and unflatten losslessly") {
  const ModelSpec spec = make_model(4, {3}, 2, 2, Activation::identity);
  const ParamBank a = ParamBank::gaussian(spec, 1.0, 9);
  const Vector flat = a.flatten();
  CHECK(static_cast<std::size_t>(flat.size()) == spec.parameter_count());
  const ParamBank b = ParamBank::unflatten(spec, flat);
  CHECK(b.flatten() == flat);
  CHECK(b.matches(spec));
  CHECK(fingerprint(a) == fingerprint(b));
  ParamBank c = b;
  Vector moved = flat;
  moved(3) += 1e-9;
  c.load(moved);
  CHECK(fingerprint(c) != fingerprint(a));
  CHECK_THROWS_AS(ParamBank::unflatten(spec, Vector::Zero(3)), ValidationError);
  CHECK(ParamBank::gaussian(spec, 1.0, 9).flatten() == flat);
}

TEST_CASE("softmax rows are stable and sum to one") {
  Matrix z(2, 3);
  z << 1000.0, 1001.0, 999.0, -5.0, 0.0, 5.0;
  const Matrix s = softmax_rows(z);
  CHECK(s.allFinite());
  CHECK((s.rowwise().sum().array() - 1.0).abs().maxCoeff() < 1e-15);
  CHECK(rel_error(s, oracle::activate(Activation::softmax, z)) < 1e-14);
}

TEST_CASE("forward pass matches the dense per-node formula") {
  std::mt19937_64 rng(3);
  for (int rep = 0; rep < 20; ++rep) {
    const Basis basis = rep % 2 ? Basis::chebyshev : Basis::monomial;
    const DataGraph g = oracle::random_graph(12 + rep, 4, 3, rng);
    const ModelSpec spec = make_model(4, {5}, 3, 1 + rep % 3, Activation::softmax, basis);
    const ParamBank bank = ParamBank::gaussian(spec, 0.7, static_cast<std::uint64_t>(rep));
    const ForwardResult fwd = gc_forward(g.shift, g.features, spec, bank);
    const std::vector<int> single(g.n, 0);
    const Matrix expect = oracle::block_forward(oracle::dense(g.shift), g.features, spec, {bank}, single);
    CHECK(rel_error(fwd.outputs, expect) < 1e-10);
  }
}

TEST_CASE("backward pass matches central finite differences") {
  std::mt19937_64 rng(5);
  for (int rep = 0; rep < 12; ++rep) {
    const bool regression = rep % 3 == 2;
    DataGraph g = oracle::random_graph(10, 3, 3, rng);
    const LossKind kind = regression ? LossKind::mse : LossKind::cross_entropy;
    const Basis basis = rep % 2 ? Basis::chebyshev : Basis::monomial;
    const ModelSpec spec =
        make_model(3, {4}, 3, 1 + rep % 2, regression ? Activation::identity : Activation::softmax, basis);
    const ParamBank bank = ParamBank::gaussian(spec, 0.8, 100 + static_cast<std::uint64_t>(rep));
    const ForwardResult fwd = gc_forward(g.shift, g.features, spec, bank);
    const Matrix g_out = masked_loss_grad(fwd.outputs, g, g.train_mask, kind);
    const Vector analytic = gc_backward(g.shift, fwd.cache, spec, bank, g_out).flatten();
    const std::vector<int> single(g.n, 0);
    const Vector numeric = oracle::finite_difference(g, spec, {bank}, single, kind).front();
    CHECK(rel_error(analytic, numeric) < 1e-5);
    CHECK(masked_loss(fwd.outputs, g, g.train_mask, kind) ==
          doctest::Approx(oracle::loss(fwd.outputs, g, kind)).epsilon(1e-12));
  }
}

TEST_CASE("a stale cache is rejected") {
  std::mt19937_64 rng(8);
  const DataGraph g = oracle::random_graph(8, 3, 2, rng);
  const ModelSpec spec = make_model(3, {}, 2, 1, Activation::softmax);
  ParamBank bank = ParamBank::gaussian(spec, 0.5, 1);
  const ForwardResult fwd = gc_forward(g.shift, g.features, spec, bank);
  Vector w = bank.flatten();
  w(0) += 0.1;
  bank.load(w);
  CHECK_THROWS_AS(gc_backward(g.shift, fwd.cache, spec, bank, Matrix::Zero(8, 2)), ValidationError);
}

TEST_CASE("cross entropy clamps zero probabilities") {
  std::mt19937_64 rng(1);
  DataGraph g = oracle::random_graph(4, 2, 2, rng);
  g.classes = {0, 1, 0, 1};
  Matrix out(4, 2);
  out << 0.0, 1.0, 0.5, 0.5, 1.0, 0.0, 0.5, 0.5;
  const std::vector<int> first{0};
  CHECK(masked_loss(out, g, first, LossKind::cross_entropy) == doctest::Approx(-std::log(kLogClamp)));
  const std::vector<int> second{1};
  CHECK(masked_loss(out, g, second, LossKind::cross_entropy) == doctest::Approx(std::log(2.0)));
}

TEST_CASE("Chebyshev scale is the max absolute row sum") {
  std::mt19937_64 rng(6);
  const DataGraph g = oracle::random_graph(15, 2, 2, rng, ShiftKind::laplacian);
  const Matrix d = oracle::dense(g.shift);
  CHECK(chebyshev_scale(g.shift) == doctest::Approx(d.cwiseAbs().rowwise().sum().maxCoeff()).epsilon(1e-14));
  CHECK(chebyshev_scale(SparseMatrix(3, 3)) == 1.0);
}

TEST_CASE("dropout scales kept entries and leaves the inference pass untouched") {
  std::mt19937_64 rng(2);
  const DataGraph g = oracle::random_graph(30, 6, 2, rng);
  const ModelSpec spec = make_model(6, {4}, 2, 1, Activation::softmax);
  const ParamBank bank = ParamBank::gaussian(spec, 0.5, 4);
  std::mt19937_64 drop_rng(11);
  const ForwardResult fwd = gc_forward(g.shift, g.features, spec, bank, {0.5, &drop_rng});
  for (const auto& lc : fwd.cache.layers) {
    REQUIRE(lc.dropout_mask.size() > 0);
    CHECK(((lc.dropout_mask.array() == 0.0) || (lc.dropout_mask.array() == 2.0)).all());
  }
  const ForwardResult plain = gc_forward(g.shift, g.features, spec, bank);
  CHECK(plain.cache.layers.front().dropout_mask.size() == 0);
  const ForwardResult rate_zero = gc_forward(g.shift, g.features, spec, bank, {0.0, &drop_rng});
  CHECK(rate_zero.outputs == plain.outputs);
}

TEST_CASE("centralized training reduces the loss and reports metrics") {
  std::mt19937_64 rng(12);
  const DataGraph g = oracle::random_graph(40, 5, 3, rng);
  CentralConfig cfg;
  cfg.iterations = 200;
  cfg.schedule.eta0 = 0.5;
  cfg.init_std = 0.1;
  cfg.eval_every = 50;
  const ModelSpec spec = make_model(5, {8}, g.num_classes(), 1, Activation::softmax);
  const CentralResult r = train_centralized(g, spec, cfg, true);
  REQUIRE(r.records.size() == 201);
  CHECK(r.records.back().train_loss < 0.8 * r.records.front().train_loss);
  CHECK(r.records[0].test_accuracy.has_value());
  CHECK_FALSE(r.records[1].test_accuracy.has_value());
  CHECK(r.records.back().test_accuracy.has_value());
  CHECK(r.trajectory.size() == 201);
  CHECK(r.trajectory.back() == r.params.flatten());
}

TEST_CASE("centralized training reports divergence") {
  std::mt19937_64 rng(12);
  DataGraph g = oracle::random_graph(10, 2, 2, rng);
  g.features(0, 0) = std::numeric_limits<double>::infinity();
  CentralConfig cfg;
  cfg.iterations = 3;
  const ModelSpec spec = make_model(2, {}, g.num_classes(), 1, Activation::softmax);
  CHECK_THROWS_AS(train_centralized(g, spec, cfg), DivergenceError);
}
