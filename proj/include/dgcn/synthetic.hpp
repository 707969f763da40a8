#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dgcn/graph.hpp"

namespace dgcn {

enum class SyntheticKind { sbm_classification, sensor_grid_regression };
std::string to_string(SyntheticKind k);
SyntheticKind synthetic_kind_from_string(const std::string& s);

struct SyntheticSpec {
  SyntheticKind kind = SyntheticKind::sbm_classification;
  std::uint64_t seed = 0;
  bool require_connected = false;

  // planted partition
  std::size_t nodes = 600;
  std::size_t classes = 4;
  std::size_t clusters = 30;      // planted blocks, each with one class; 0 means one per class
  double p_in = 0.5;
  double p_out = 0.001;
  std::size_t feature_dim = 16;
  double class_separation = 1.0;  // scale of the class-mean vectors
  double feature_noise = 1.5;
  double label_fraction = 0.1;    // share of nodes placed in the training set

  // sensor grid
  std::size_t grid_rows = 10;
  std::size_t grid_cols = 10;
  double spacing = 2.2;
  double jitter = 0.0;            // uniform coordinate perturbation, +-jitter
  double bandwidth = 10.0;        // w = exp(-d^2 / bandwidth)
  double threshold = 0.5;         // weights below this are dropped
  std::size_t window = 6;
  std::size_t steps = 60;         // prediction instants after the warm-up
  double train_share = 0.75;      // earliest instants form the training set
  std::size_t hops = 2;           // reach of the spatial coupling in the latent dynamics
  double carry = 0.0;             // linear response to the coupled field
  double rectify = 0.9;           // response to the change in its magnitude
  double process_noise = 0.3;
  double observation_noise = 0.5; // relative to the latent standard deviation
  std::size_t stations = 6;
};

struct SyntheticData {
  DataGraph graph;
  bool connected = true;
  /// sbm: planted cluster of each node. sensor grid: base station of each node.
  std::vector<int> groups;
  /// sensor grid: base stations on a ring.
  AgentPairSet station_links;
  /// sensor grid: sensor coordinates (sensors x 2).
  Matrix coordinates;
};

SyntheticData generate_synthetic(const SyntheticSpec& spec);

/// Gaussian-kernel weights exp(-d^2 / bandwidth) between distinct points,
/// keeping pairs with weight >= threshold. Each pair appears once (i < j).
std::vector<Edge> kernel_adjacency(const Matrix& coordinates, double bandwidth, double threshold);

}  // namespace dgcn
