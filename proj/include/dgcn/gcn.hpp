#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "dgcn/graph.hpp"
#include "dgcn/optim.hpp"
#include "dgcn/record.hpp"

namespace dgcn {

enum class Activation { relu, softmax, identity };
enum class Basis { monomial, chebyshev };
enum class LossKind { cross_entropy, mse };

std::string to_string(Activation a);
std::string to_string(Basis b);
std::string to_string(LossKind k);
Activation activation_from_string(const std::string& s);
Basis basis_from_string(const std::string& s);
LossKind loss_kind_from_string(const std::string& s);

/// One graph-convolution layer: phi(sum_{p=0..order} T_p(D) X W_p).
struct LayerSpec {
  std::size_t in_dim = 0;
  std::size_t out_dim = 0;
  std::size_t order = 1;
  Activation activation = Activation::relu;
  Basis basis = Basis::monomial;

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

struct ModelSpec {
  std::vector<LayerSpec> layers;

  void validate() const;
  std::size_t parameter_count() const;
  std::size_t output_dim() const { return layers.empty() ? 0 : layers.back().out_dim; }

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

/// Convenience builder: `hidden` ReLU widths, then a final layer with
/// softmax (classification) or identity (regression) activation.
ModelSpec make_model(std::size_t in_dim, const std::vector<std::size_t>& hidden, std::size_t out_dim,
                     std::size_t order, Activation final_activation, Basis basis = Basis::monomial);

/// Weight banks: weights[layer][p] is in_dim x out_dim.
struct ParamBank {
  std::vector<std::vector<Matrix>> weights;

  static ParamBank zeros(const ModelSpec& spec);
  static ParamBank gaussian(const ModelSpec& spec, double stddev, std::uint64_t seed);
  static ParamBank unflatten(const ModelSpec& spec, const Vector& flat);

  /// Layer-major, then p, then column-major matrix entries.
  Vector flatten() const;
  /// Overwrites the weights in place from a flat vector of matching size.
  void load(const Vector& flat);
  std::size_t size() const;
  bool matches(const ModelSpec& spec) const;
};

/// Spectral scale used by the Chebyshev basis: the max absolute row sum of D
/// (an upper bound on its spectral radius), or 1 for an empty operator.
double chebyshev_scale(const SparseMatrix& shift);

struct LayerCache {
  Matrix input;                  // after dropout
  std::vector<Matrix> diffused;  // T_p(D) input, p = 0..order
  Matrix pre;
  Matrix output;
  Matrix dropout_mask;           // empty when dropout is off
};

struct ForwardCache {
  std::vector<LayerCache> layers;
  std::uint64_t fingerprint = 0;
};

struct ForwardResult {
  Matrix outputs;
  ForwardCache cache;
};

/// Inverted dropout on every layer input. A null rng disables it.
struct Dropout {
  double rate = 0.0;
  std::mt19937_64* rng = nullptr;
};

/// Identifies a parameter bank cheaply; used to reject stale caches.
std::uint64_t fingerprint(const ParamBank& params);

ForwardResult gc_forward(const SparseMatrix& shift, const Matrix& x, const ModelSpec& spec, const ParamBank& params,
                         Dropout dropout = {});

/// Gradient of the loss with respect to every weight matrix, given
/// dL/d(outputs). Throws when the cache was built from other parameters.
ParamBank gc_backward(const SparseMatrix& shift, const ForwardCache& cache, const ModelSpec& spec,
                      const ParamBank& params, const Matrix& output_grad);

/// Row-wise softmax.
Matrix softmax_rows(const Matrix& z);
Matrix apply_activation(Activation a, const Matrix& pre);
/// Pulls dL/d(output) back to dL/d(pre) for one activation.
Matrix activation_backward(Activation a, const Matrix& pre, const Matrix& out, const Matrix& grad_out);

constexpr double kLogClamp = 1e-12;

/// A single output row, possibly strided (a row of a column-major matrix).
using RowIn = const Eigen::Ref<const Eigen::RowVectorXd, 0, Eigen::InnerStride<>>&;
using RowOut = Eigen::Ref<Eigen::RowVectorXd, 0, Eigen::InnerStride<>>;

double node_loss(RowIn out, const DataGraph& graph, int node, LossKind kind);
/// Adds scale * d(node_loss)/d(out) into `grad`.
void add_node_loss_grad(RowIn out, const DataGraph& graph, int node,
                        LossKind kind, double scale, RowOut grad);

/// Mean per-node loss over `mask`; cross entropy clamps probabilities at 1e-12.
double masked_loss(const Matrix& outputs, const DataGraph& graph, std::span<const int> mask, LossKind kind);
Matrix masked_loss_grad(const Matrix& outputs, const DataGraph& graph, std::span<const int> mask, LossKind kind);

struct CentralConfig {
  ScheduleSpec schedule;
  std::size_t iterations = 100;
  double init_std = 1e-3;
  std::uint64_t init_seed = 0;
  double dropout = 0.0;
  std::uint64_t dropout_seed = 0;
  LossKind loss = LossKind::cross_entropy;
  std::size_t eval_every = 10;
  /// Overrides the Gaussian initialization when set.
  std::optional<ParamBank> initial;
};

struct CentralResult {
  ParamBank params;
  std::vector<TrainRecord> records;
  /// Parameters before each step, recorded only when `keep_trajectory` is set.
  std::vector<Vector> trajectory;
};

/// Full-batch gradient descent on the masked training loss.
CentralResult train_centralized(const DataGraph& graph, const ModelSpec& spec, const CentralConfig& config,
                                bool keep_trajectory = false);

/// Accuracy for classification, mean squared error for regression, over `nodes`.
double evaluate_outputs(const Matrix& outputs, const DataGraph& graph, std::span<const int> nodes);

}  // namespace dgcn
