#include "dgcn/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>

#include "dgcn/error.hpp"
#include "dgcn/topology.hpp"

namespace dgcn {

std::string to_string(SyntheticKind k) {
  return k == SyntheticKind::sbm_classification ? "sbm_classification" : "sensor_grid_regression";
}

SyntheticKind synthetic_kind_from_string(const std::string& s) {
  if (s == "sbm_classification" || s == "sbm") return SyntheticKind::sbm_classification;
  if (s == "sensor_grid_regression" || s == "sensor_grid") return SyntheticKind::sensor_grid_regression;
  throw ValidationError("unknown synthetic kind '" + s + "'");
}

std::vector<Edge> kernel_adjacency(const Matrix& coordinates, double bandwidth, double threshold) {
  if (!(bandwidth > 0.0)) throw ValidationError("kernel bandwidth must be positive");
  std::vector<Edge> edges;
  for (Eigen::Index i = 0; i < coordinates.rows(); ++i)
    for (Eigen::Index j = i + 1; j < coordinates.rows(); ++j) {
      const double d2 = (coordinates.row(i) - coordinates.row(j)).squaredNorm();
      const double w = std::exp(-d2 / bandwidth);
      if (w >= threshold) edges.push_back({static_cast<int>(i), static_cast<int>(j), w});
    }
  return edges;
}

namespace {

bool graph_connected(std::size_t n, const std::vector<Edge>& edges) {
  AgentPairSet pairs;
  for (const auto& e : edges)
    if (e.src != e.dst) {
      pairs.insert({e.src, e.dst});
      pairs.insert({e.dst, e.src});
    }
  return is_connected(pairs, n);
}

SyntheticData make_sbm(const SyntheticSpec& s) {
  if (s.classes == 0 || s.nodes < s.classes) throw ValidationError("need at least one node per class");
  if (!(s.label_fraction > 0.0 && s.label_fraction <= 1.0)) throw ValidationError("label fraction must lie in (0, 1]");
  if (s.p_in < 0 || s.p_in > 1 || s.p_out < 0 || s.p_out > 1) throw ValidationError("edge probabilities must lie in [0, 1]");
  if (s.feature_dim == 0) throw ValidationError("feature dimension must be positive");
  const std::size_t blocks = s.clusters == 0 ? s.classes : s.clusters;
  if (blocks < s.classes || s.nodes < blocks) throw ValidationError("need at least one cluster per class and one node per cluster");

  std::mt19937_64 rng(s.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const std::size_t n = s.nodes;

  // cluster b carries class b % classes
  std::vector<int> block(n), cls(n);
  for (std::size_t i = 0; i < n; ++i) block[i] = static_cast<int>(i % blocks);
  std::shuffle(block.begin(), block.end(), rng);
  for (std::size_t i = 0; i < n; ++i) cls[i] = block[i] % static_cast<int>(s.classes);

  std::vector<Edge> pairs;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (unit(rng) < (block[i] == block[j] ? s.p_in : s.p_out))
        pairs.push_back({static_cast<int>(i), static_cast<int>(j), 1.0});

  Matrix means(static_cast<Eigen::Index>(s.classes), static_cast<Eigen::Index>(s.feature_dim));
  for (Eigen::Index c = 0; c < means.rows(); ++c)
    for (Eigen::Index f = 0; f < means.cols(); ++f) means(c, f) = s.class_separation * normal(rng);

  SyntheticData out;
  DataGraph& g = out.graph;
  g.n = n;
  g.edges = make_undirected_edges(n, pairs);
  g.features.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(s.feature_dim));
  for (std::size_t i = 0; i < n; ++i)
    for (Eigen::Index f = 0; f < g.features.cols(); ++f)
      g.features(static_cast<Eigen::Index>(i), f) = means(cls[i], f) + s.feature_noise * normal(rng);
  g.classes = cls;

  // training set: the same share of every class, at least one node each
  std::vector<std::vector<int>> by_class(s.classes);
  for (std::size_t i = 0; i < n; ++i) by_class[static_cast<std::size_t>(cls[i])].push_back(static_cast<int>(i));
  std::vector<char> train(n, 0);
  for (auto& members : by_class) {
    std::shuffle(members.begin(), members.end(), rng);
    const auto take = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(s.label_fraction * members.size())));
    for (std::size_t r = 0; r < take && r < members.size(); ++r) train[static_cast<std::size_t>(members[r])] = 1;
  }
  for (std::size_t i = 0; i < n; ++i) (train[i] ? g.train_mask : g.test_mask).push_back(static_cast<int>(i));

  out.groups = block;
  out.connected = graph_connected(n, g.edges);
  return out;
}

SyntheticData make_sensor_grid(const SyntheticSpec& s) {
  const std::size_t sensors = s.grid_rows * s.grid_cols;
  if (sensors < 2) throw ValidationError("sensor grid needs at least two sensors");
  if (s.window == 0 || s.steps < 2) throw ValidationError("sensor grid needs a positive window and at least two steps");
  if (!(s.train_share > 0.0 && s.train_share < 1.0)) throw ValidationError("train share must lie in (0, 1)");
  if (s.stations == 0 || s.stations > sensors) throw ValidationError("station count must lie in [1, sensors]");

  std::mt19937_64 rng(s.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> shake(-s.jitter, s.jitter);

  SyntheticData out;
  out.coordinates.resize(static_cast<Eigen::Index>(sensors), 2);
  for (std::size_t r = 0; r < s.grid_rows; ++r)
    for (std::size_t c = 0; c < s.grid_cols; ++c) {
      const auto i = static_cast<Eigen::Index>(r * s.grid_cols + c);
      out.coordinates(i, 0) = s.spacing * static_cast<double>(c) + (s.jitter > 0 ? shake(rng) : 0.0);
      out.coordinates(i, 1) = s.spacing * static_cast<double>(r) + (s.jitter > 0 ? shake(rng) : 0.0);
    }
  const std::vector<Edge> sensor_edges = kernel_adjacency(out.coordinates, s.bandwidth, s.threshold);

  // latent field u(t+1) = carry * v(t) + rectify * (|v(t)| - |v(t-1)|) + process_noise * R xi,
  // v = R u, R = P^hops with P the row-normalized kernel adjacency including
  // self-loops; sensors observe u / sd(u) plus independent noise
  Matrix p = Matrix::Identity(static_cast<Eigen::Index>(sensors), static_cast<Eigen::Index>(sensors));
  for (const auto& e : sensor_edges) {
    p(e.src, e.dst) = e.weight;
    p(e.dst, e.src) = e.weight;
  }
  for (Eigen::Index i = 0; i < p.rows(); ++i) p.row(i) /= p.row(i).sum();
  Matrix reach = Matrix::Identity(p.rows(), p.cols());
  for (std::size_t h = 0; h < s.hops; ++h) reach = p * reach;

  const std::size_t warmup = 50;
  const std::size_t total = warmup + s.window + s.steps + 1;
  const auto cols = static_cast<Eigen::Index>(sensors);
  auto white = [&] { return Vector(Vector::NullaryExpr(cols, [&] { return normal(rng); })); };
  Matrix latent(static_cast<Eigen::Index>(total), cols);
  latent.row(0) = white().transpose();
  latent.row(1) = white().transpose();
  Vector before = reach * latent.row(0).transpose();
  for (std::size_t t = 1; t + 1 < total; ++t) {
    const Vector now = reach * latent.row(static_cast<Eigen::Index>(t)).transpose();
    const Vector shock = reach * white();
    latent.row(static_cast<Eigen::Index>(t + 1)) =
        (s.carry * now.array() + s.rectify * (now.array().abs() - before.array().abs()) +
         s.process_noise * shock.array()).transpose();
    before = now;
  }
  Matrix used = latent.bottomRows(static_cast<Eigen::Index>(s.window + s.steps + 1));
  const double latent_sd = std::sqrt((used.array() - used.mean()).square().mean());
  used /= latent_sd > 0 ? latent_sd : 1.0;
  for (Eigen::Index t = 0; t < used.rows(); ++t)
    for (Eigen::Index i = 0; i < cols; ++i) used(t, i) += s.observation_noise * normal(rng);
  const double mean = used.mean();
  const double sd = std::sqrt((used.array() - mean).square().mean());
  const Matrix z = (used.array() - mean) / (sd > 0 ? sd : 1.0);

  // one copy of the sensor graph per prediction instant
  DataGraph& g = out.graph;
  g.n = sensors * s.steps;
  std::vector<Edge> pairs;
  pairs.reserve(sensor_edges.size() * s.steps);
  for (std::size_t t = 0; t < s.steps; ++t) {
    const int base = static_cast<int>(t * sensors);
    for (const auto& e : sensor_edges) pairs.push_back({base + e.src, base + e.dst, e.weight});
  }
  g.edges = make_undirected_edges(g.n, pairs);
  g.features.resize(static_cast<Eigen::Index>(g.n), static_cast<Eigen::Index>(s.window));
  g.targets.resize(static_cast<Eigen::Index>(g.n), 1);
  const std::size_t train_steps = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(s.train_share * s.steps)));
  for (std::size_t t = 0; t < s.steps; ++t)
    for (std::size_t i = 0; i < sensors; ++i) {
      const auto node = static_cast<Eigen::Index>(t * sensors + i);
      for (std::size_t w = 0; w < s.window; ++w)
        g.features(node, static_cast<Eigen::Index>(w)) = z(static_cast<Eigen::Index>(t + w), static_cast<Eigen::Index>(i));
      g.targets(node, 0) = z(static_cast<Eigen::Index>(t + s.window), static_cast<Eigen::Index>(i));
      (t < train_steps ? g.train_mask : g.test_mask).push_back(static_cast<int>(node));
    }

  // base stations evenly spaced on a circle around the grid, linked in a ring
  const Eigen::RowVector2d centre = out.coordinates.colwise().mean();
  const double radius = 0.35 * std::max(s.spacing * static_cast<double>(s.grid_cols - 1),
                                        s.spacing * static_cast<double>(s.grid_rows - 1));
  Matrix stations(static_cast<Eigen::Index>(s.stations), 2);
  for (std::size_t k = 0; k < s.stations; ++k) {
    const double angle = 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(s.stations);
    stations(static_cast<Eigen::Index>(k), 0) = centre(0) + radius * std::cos(angle);
    stations(static_cast<Eigen::Index>(k), 1) = centre(1) + radius * std::sin(angle);
  }
  std::vector<int> nearest(sensors);
  for (std::size_t i = 0; i < sensors; ++i) {
    Eigen::Index best = 0;
    (stations.rowwise() - out.coordinates.row(static_cast<Eigen::Index>(i))).rowwise().squaredNorm().minCoeff(&best);
    nearest[i] = static_cast<int>(best);
  }
  out.groups.resize(g.n);
  for (std::size_t node = 0; node < g.n; ++node) out.groups[node] = nearest[node % sensors];
  out.station_links = ring_pairs(s.stations);
  out.connected = graph_connected(sensors, sensor_edges);
  return out;
}

}  // namespace

SyntheticData generate_synthetic(const SyntheticSpec& spec) {
  SyntheticData out = spec.kind == SyntheticKind::sbm_classification ? make_sbm(spec) : make_sensor_grid(spec);
  if (spec.require_connected && !out.connected)
    throw ValidationError("generated " + to_string(spec.kind) + " graph is disconnected");
  out.graph.validate();
  return out;
}

}  // namespace dgcn
