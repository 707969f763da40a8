#include "dgcn/optim.hpp"

#include <cmath>

#include "dgcn/error.hpp"

namespace dgcn {

double step_size(const ScheduleSpec& schedule, std::size_t t) {
  if (schedule.kind == ScheduleKind::constant) return schedule.eta0;
  return schedule.eta0 / (1.0 + static_cast<double>(t) / schedule.tau);
}

std::string to_string(OptimizerKind k) {
  switch (k) {
    case OptimizerKind::gd: return "gd";
    case OptimizerKind::momentum: return "momentum";
    case OptimizerKind::adam: return "adam";
  }
  return "unknown";
}

OptimizerKind optimizer_from_string(const std::string& s) {
  if (s == "gd") return OptimizerKind::gd;
  if (s == "momentum") return OptimizerKind::momentum;
  if (s == "adam") return OptimizerKind::adam;
  throw ValidationError("unknown optimizer '" + s + "'");
}

std::string to_string(ScheduleKind k) { return k == ScheduleKind::constant ? "constant" : "diminishing"; }

ScheduleKind schedule_from_string(const std::string& s) {
  if (s == "constant") return ScheduleKind::constant;
  if (s == "diminishing") return ScheduleKind::diminishing;
  throw ValidationError("unknown schedule '" + s + "'");
}

Eigen::VectorXd local_step(const Eigen::VectorXd& w, const Eigen::VectorXd& grad, double eta,
                           const OptimizerConfig& config, OptimizerState& state) {
  if (!(eta > 0.0)) throw ValidationError("step size must be positive");
  if (grad.size() != w.size()) throw ValidationError("gradient size does not match parameter size");
  if (!grad.allFinite()) throw ValidationError("gradient contains NaN or infinite entries");

  switch (config.kind) {
    case OptimizerKind::gd:
      ++state.steps;
      return w - eta * grad;
    case OptimizerKind::momentum:
      if (state.buffer.size() != w.size()) state.buffer = Eigen::VectorXd::Zero(w.size());
      state.buffer = config.momentum * state.buffer + grad;
      ++state.steps;
      return w - eta * state.buffer;
    case OptimizerKind::adam: {
      if (state.first.size() != w.size()) {
        state.first = Eigen::VectorXd::Zero(w.size());
        state.second = Eigen::VectorXd::Zero(w.size());
      }
      ++state.steps;
      state.first = config.beta1 * state.first + (1.0 - config.beta1) * grad;
      state.second = config.beta2 * state.second + (1.0 - config.beta2) * grad.cwiseProduct(grad);
      const double t = static_cast<double>(state.steps);
      const double c1 = 1.0 - std::pow(config.beta1, t);
      const double c2 = 1.0 - std::pow(config.beta2, t);
      const Eigen::ArrayXd mhat = state.first.array() / c1;
      const Eigen::ArrayXd vhat = state.second.array() / c2;
      return w - eta * (mhat / (vhat.sqrt() + config.epsilon)).matrix();
    }
  }
  return w;
}

}  // namespace dgcn
