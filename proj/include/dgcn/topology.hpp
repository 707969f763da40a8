#pragma once

#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include "dgcn/graph.hpp"

namespace dgcn {

/// Symmetric doubly stochastic combination matrix over m agents.
struct MixingMatrix {
  Matrix entries;
  /// Design parameter: the deflated spectral radius is bounded by 1 - gamma.
  double gamma = 0.0;

  std::size_t m() const { return static_cast<std::size_t>(entries.rows()); }
  /// Agent pairs with a nonzero off-diagonal weight.
  AgentPairSet comm_edges() const;
};

/// rho(C - 11^T/m) through a self-adjoint eigensolver. Throws on
/// asymmetric input (beyond 1e-9).
double deflated_spectral_radius(const Matrix& c);

/// Checks symmetry (1e-12), unit row sums (1e-10), the spectral bound
/// (1 - gamma + 1e-8) and, when `allowed` is given, that every nonzero
/// off-diagonal entry is an allowed pair. Throws ValidationError.
void validate_mixing(const Matrix& c, double gamma, const AgentPairSet* allowed = nullptr);

/// Metropolis-Hastings weights on a connected communication graph.
MixingMatrix metropolis_weights(const AgentPairSet& comm_edges, std::size_t m);

/// Euclidean projection onto {C = C^T, C1 = 1, rho(C - 11^T/m) <= 1 - gamma}.
Matrix project_feasible(const Matrix& x, double gamma);

inline double soft_threshold(double x, double eps) {
  if (x > eps) return x - eps;
  if (x < -eps) return x + eps;
  return 0.0;
}

struct AdmmOptions {
  double gamma = 0.5;
  double rho = 1.0;
  std::size_t max_iter = 5000;
  double tol = 1e-8;
  /// Forbidden entries at or below this magnitude are set to exactly zero.
  double zero_snap = 1e-8;
  std::uint64_t seed = 0;
};

struct AdmmState {
  Matrix c, z, u;
  double rho = 1.0;
  double gamma = 0.5;
  std::size_t iteration = 0;
  double primal_residual = 0.0;
  double dual_residual = 0.0;
  std::vector<double> primal_history;
  std::vector<double> dual_history;
  bool converged = false;
};

struct AdmmResult {
  MixingMatrix mixing;
  AdmmState state;
  /// Forbidden pairs (k < z) the design kept nonzero because the spectral
  /// bound needs them.
  std::vector<std::pair<int, int>> forbidden_in_use;
  /// True when the sparsity-preserving polish met every constraint.
  bool polished = false;
  /// ||C odot A||_1 of the returned matrix.
  double objective = 0.0;
};

/// Scaled ADMM for min ||C odot A||_1 over the feasible set above, followed
/// by a zero-snap of converged forbidden entries and a polish that restores
/// feasibility while keeping the snapped zeros.
AdmmResult design_mixing_admm(const BoolMatrix& forbidden, const AdmmOptions& options = {});

/// Fraction of exactly-zero entries of C (all m^2 entries).
double zero_fraction(const Matrix& c);

AgentPairSet complete_pairs(std::size_t m);
AgentPairSet ring_pairs(std::size_t m);
AgentPairSet line_pairs(std::size_t m);
std::vector<std::vector<int>> connected_components(const AgentPairSet& pairs, std::size_t m);
bool is_connected(const AgentPairSet& pairs, std::size_t m);

/// Randomly removes round(drop_fraction * |pairs|) undirected links while
/// keeping the graph connected (links whose removal disconnects are skipped).
AgentPairSet drop_pairs_connected(const AgentPairSet& pairs, std::size_t m, double drop_fraction,
                                  std::uint64_t seed);

/// Forbidden matrix implied by a link set: A(k, z) = 1 iff k != z and (k, z) absent.
BoolMatrix forbidden_from_pairs(const AgentPairSet& pairs, std::size_t m);

}  // namespace dgcn
