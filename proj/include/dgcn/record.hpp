#pragma once

#include <cstddef>
#include <optional>

namespace dgcn {

/// Per-iteration training metrics. Record t describes the parameters w^t
/// before the update of iteration t; message counts are those spent by that
/// iteration.
struct TrainRecord {
  std::size_t iteration = 0;
  double train_loss = 0.0;
  std::optional<double> test_accuracy;
  std::optional<double> test_mse;
  double consensus_residual = 0.0;
  double max_pairwise_distance = 0.0;
  std::optional<double> stationarity;
  std::optional<double> stationarity_best;
  std::size_t messages_forward = 0;
  std::size_t messages_backward = 0;
  std::size_t messages_consensus = 0;
  double eta = 0.0;
};

}  // namespace dgcn
