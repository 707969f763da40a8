#pragma once

#include <cstddef>
#include <string>

#include <Eigen/Dense>

namespace dgcn {

enum class ScheduleKind { constant, diminishing };

/// constant: eta0. diminishing: eta0 / (1 + t / tau), so sum eta = inf and
/// sum eta^2 < inf.
struct ScheduleSpec {
  ScheduleKind kind = ScheduleKind::constant;
  double eta0 = 0.1;
  double tau = 100.0;
};

double step_size(const ScheduleSpec& schedule, std::size_t t);

enum class OptimizerKind { gd, momentum, adam };

std::string to_string(OptimizerKind k);
OptimizerKind optimizer_from_string(const std::string& s);
std::string to_string(ScheduleKind k);
ScheduleKind schedule_from_string(const std::string& s);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::gd;
  double momentum = 0.9;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Agent-local optimizer slots; sized lazily on the first step.
struct OptimizerState {
  Eigen::VectorXd buffer;  // momentum
  Eigen::VectorXd first;   // adam
  Eigen::VectorXd second;  // adam
  std::size_t steps = 0;
};

/// Returns psi = w - eta * direction, updating the optimizer statistics.
/// Throws ValidationError for non-positive eta or non-finite gradients.
Eigen::VectorXd local_step(const Eigen::VectorXd& w, const Eigen::VectorXd& grad, double eta,
                           const OptimizerConfig& config, OptimizerState& state);

}  // namespace dgcn
