#include "dgcn/topology.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include <Eigen/Eigenvalues>

#include "dgcn/error.hpp"

namespace dgcn {

namespace {

Matrix consensus_projector(Eigen::Index m) {
  return Matrix::Constant(m, m, 1.0 / static_cast<double>(m));
}

std::string describe_components(const std::vector<std::vector<int>>& comps) {
  std::ostringstream os;
  for (std::size_t c = 0; c < comps.size(); ++c) {
    os << (c ? " " : "") << "{";
    for (std::size_t i = 0; i < comps[c].size(); ++i) os << (i ? "," : "") << comps[c][i];
    os << "}";
  }
  return os.str();
}

// Projection onto {C = C^T, C1 = 1, C(k, z) = 0 for (k, z) in `zeros`}.
// Stationarity gives C(k, z) = X(k, z) + (mu_k + mu_z) / 4 on free entries.
Matrix project_affine(const Matrix& x, const BoolMatrix& zeros) {
  const Eigen::Index m = x.rows();
  const Matrix xs = 0.5 * (x + x.transpose());
  Matrix sys = Matrix::Zero(m, m);
  Vector rhs(m);
  for (Eigen::Index k = 0; k < m; ++k) {
    double row = 0.0;
    for (Eigen::Index z = 0; z < m; ++z) {
      if (zeros(k, z)) continue;
      row += xs(k, z);
      sys(k, k) += 1.0;
      sys(k, z) += 1.0;
    }
    rhs(k) = 4.0 * (1.0 - row);
  }
  const Vector mu = sys.ldlt().solve(rhs);
  Matrix out = Matrix::Zero(m, m);
  for (Eigen::Index k = 0; k < m; ++k)
    for (Eigen::Index z = 0; z < m; ++z)
      if (!zeros(k, z)) out(k, z) = xs(k, z) + 0.25 * (mu(k) + mu(z));
  return 0.5 * (out + out.transpose());
}

}  // namespace

AgentPairSet MixingMatrix::comm_edges() const {
  AgentPairSet out;
  for (Eigen::Index k = 0; k < entries.rows(); ++k)
    for (Eigen::Index z = 0; z < entries.cols(); ++z)
      if (k != z && entries(k, z) != 0.0) out.emplace(static_cast<int>(k), static_cast<int>(z));
  return out;
}

double deflated_spectral_radius(const Matrix& c) {
  if (c.rows() != c.cols()) throw ValidationError("mixing matrix must be square");
  if ((c - c.transpose()).cwiseAbs().maxCoeff() > 1e-9)
    throw ValidationError("mixing matrix is not symmetric");
  const Matrix deflated = 0.5 * (c + c.transpose()) - consensus_projector(c.rows());
  Eigen::SelfAdjointEigenSolver<Matrix> eig(deflated, Eigen::EigenvaluesOnly);
  return eig.eigenvalues().cwiseAbs().maxCoeff();
}

void validate_mixing(const Matrix& c, double gamma, const AgentPairSet* allowed) {
  if (c.rows() != c.cols() || c.rows() == 0) throw ValidationError("mixing matrix must be square and nonempty");
  const double asym = (c - c.transpose()).cwiseAbs().maxCoeff();
  if (asym > 1e-12) throw ValidationError("mixing matrix asymmetry " + std::to_string(asym) + " exceeds 1e-12");
  const double rows = (c.rowwise().sum().array() - 1.0).abs().maxCoeff();
  if (rows > 1e-10) throw ValidationError("mixing matrix row-sum error " + std::to_string(rows) + " exceeds 1e-10");
  const double radius = deflated_spectral_radius(c);
  if (radius > 1.0 - gamma + 1e-8)
    throw ValidationError("deflated spectral radius " + std::to_string(radius) + " exceeds 1 - gamma = " +
                          std::to_string(1.0 - gamma));
  if (c.rows() > 1 && radius >= 1.0 - 1e-12)
    throw ValidationError("mixing matrix describes a disconnected communication graph");
  if (allowed) {
    for (Eigen::Index k = 0; k < c.rows(); ++k)
      for (Eigen::Index z = 0; z < c.cols(); ++z)
        if (k != z && c(k, z) != 0.0 && !allowed->count({static_cast<int>(k), static_cast<int>(z)}))
          throw ValidationError("mixing weight between agents " + std::to_string(k) + " and " + std::to_string(z) +
                                " uses a link outside the communication graph");
  }
}

MixingMatrix metropolis_weights(const AgentPairSet& comm_edges, std::size_t m) {
  if (m == 0) throw ValidationError("agent count must be positive");
  for (const auto& [k, z] : comm_edges) {
    if (k < 0 || z < 0 || static_cast<std::size_t>(k) >= m || static_cast<std::size_t>(z) >= m || k == z)
      throw ValidationError("invalid communication link (" + std::to_string(k) + ", " + std::to_string(z) + ")");
    if (!comm_edges.count({z, k}))
      throw ValidationError("communication link (" + std::to_string(k) + ", " + std::to_string(z) + ") is not symmetric");
  }
  const auto comps = connected_components(comm_edges, m);
  if (comps.size() > 1)
    throw ValidationError("communication graph is disconnected; components: " + describe_components(comps));

  std::vector<int> degree(m, 0);
  for (const auto& [k, z] : comm_edges) ++degree[static_cast<std::size_t>(k)];
  const auto mi = static_cast<Eigen::Index>(m);
  MixingMatrix out;
  out.entries = Matrix::Zero(mi, mi);
  for (const auto& [k, z] : comm_edges)
    out.entries(k, z) = 1.0 / (1.0 + std::max(degree[static_cast<std::size_t>(k)], degree[static_cast<std::size_t>(z)]));
  for (Eigen::Index k = 0; k < mi; ++k) out.entries(k, k) = 1.0 - (out.entries.row(k).sum() - out.entries(k, k));
  out.gamma = 1.0 - deflated_spectral_radius(out.entries);
  return out;
}

Matrix project_feasible(const Matrix& x, double gamma) {
  if (!(gamma > 0.0 && gamma < 1.0)) throw ValidationError("gamma must lie in (0, 1)");
  if (x.rows() != x.cols()) throw ValidationError("projection input must be square");
  const Eigen::Index m = x.rows();
  const Matrix pi = consensus_projector(m);
  const Matrix deflate = Matrix::Identity(m, m) - pi;
  Matrix deflated = deflate * (0.5 * (x + x.transpose())) * deflate;
  deflated = 0.5 * (deflated + deflated.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> eig(deflated);
  const double bound = 1.0 - gamma;
  const Vector beta = eig.eigenvalues().cwiseMax(-bound).cwiseMin(bound);
  const Matrix& v = eig.eigenvectors();
  Matrix out = pi + v * beta.asDiagonal() * v.transpose();
  return 0.5 * (out + out.transpose());
}

AdmmResult design_mixing_admm(const BoolMatrix& forbidden, const AdmmOptions& opt) {
  const Eigen::Index m = forbidden.rows();
  if (m == 0 || forbidden.cols() != m) throw ValidationError("forbidden matrix must be square and nonempty");
  for (Eigen::Index k = 0; k < m; ++k) {
    if (forbidden(k, k)) throw ValidationError("forbidden matrix must have a zero diagonal");
    for (Eigen::Index z = 0; z < m; ++z)
      if (forbidden(k, z) != forbidden(z, k)) throw ValidationError("forbidden matrix must be symmetric");
  }
  if (!(opt.gamma > 0.0 && opt.gamma < 1.0)) throw ValidationError("gamma must lie in (0, 1)");
  if (!(opt.rho > 0.0)) throw ValidationError("ADMM penalty rho must be positive");

  const Matrix mask = forbidden.cast<double>();
  const double threshold = 1.0 / opt.rho;

  std::mt19937_64 rng(opt.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto random_symmetric = [&](double scale) {
    Matrix r = Matrix::NullaryExpr(m, m, [&] { return scale * normal(rng); });
    return Matrix(0.5 * (r + r.transpose()));
  };

  AdmmState st;
  st.rho = opt.rho;
  st.gamma = opt.gamma;
  st.c = random_symmetric(1.0 / static_cast<double>(m));
  st.z = random_symmetric(1.0 / static_cast<double>(m));
  st.u = random_symmetric(0.1 / static_cast<double>(m));

  for (st.iteration = 0; st.iteration < opt.max_iter;) {
    st.c = project_feasible(st.z - st.u, opt.gamma);
    const Matrix v = st.c + st.u;
    Matrix z_next = v;
    for (Eigen::Index k = 0; k < m; ++k)
      for (Eigen::Index z = 0; z < m; ++z)
        if (forbidden(k, z)) z_next(k, z) = soft_threshold(v(k, z), threshold);
    st.u += st.c - z_next;
    st.primal_residual = (st.c - z_next).norm();
    st.dual_residual = opt.rho * (z_next - st.z).norm();
    st.z = std::move(z_next);
    st.primal_history.push_back(st.primal_residual);
    st.dual_history.push_back(st.dual_residual);
    ++st.iteration;
    if (std::max(st.primal_residual, (st.dual_residual / opt.rho)) <= opt.tol) {
      st.converged = true;
      break;
    }
  }

  // Snap converged forbidden entries, then alternate between the affine set
  // that keeps the zeros and the spectral set, finishing on the affine side.
  BoolMatrix zeros = BoolMatrix::Constant(m, m, false);
  for (Eigen::Index k = 0; k < m; ++k)
    for (Eigen::Index z = 0; z < m; ++z)
      zeros(k, z) = forbidden(k, z) && std::abs(st.z(k, z)) <= opt.zero_snap && std::abs(st.z(z, k)) <= opt.zero_snap;

  AdmmResult result;
  Matrix c = project_affine(st.z, zeros);
  const double bound = 1.0 - opt.gamma;
  for (int round = 0; round < 20000; ++round) {
    if (deflated_spectral_radius(c) <= bound + 1e-10) {
      result.polished = true;
      break;
    }
    c = project_affine(project_feasible(c, opt.gamma), zeros);
  }
  if (!result.polished) {
    // fall back to the unconstrained-sparsity projection; flagged via `polished`
    c = project_affine(project_feasible(st.z, opt.gamma), BoolMatrix::Constant(m, m, false));
  }

  for (Eigen::Index k = 0; k < m; ++k)
    for (Eigen::Index z = k + 1; z < m; ++z)
      if (forbidden(k, z) && c(k, z) != 0.0) result.forbidden_in_use.emplace_back(static_cast<int>(k), static_cast<int>(z));

  result.objective = (c.cwiseAbs().array() * mask.array()).sum();
  result.mixing.entries = std::move(c);
  result.mixing.gamma = opt.gamma;
  result.state = std::move(st);
  if (m > 1 && deflated_spectral_radius(result.mixing.entries) >= 1.0 - 1e-12)
    throw ValidationError("designed mixing matrix is disconnected");
  return result;
}

double zero_fraction(const Matrix& c) {
  if (c.size() == 0) return 0.0;
  return static_cast<double>((c.array() == 0.0).count()) / static_cast<double>(c.size());
}

AgentPairSet complete_pairs(std::size_t m) {
  AgentPairSet out;
  for (int k = 0; k < static_cast<int>(m); ++k)
    for (int z = 0; z < static_cast<int>(m); ++z)
      if (k != z) out.emplace(k, z);
  return out;
}

AgentPairSet line_pairs(std::size_t m) {
  AgentPairSet out;
  for (int k = 0; k + 1 < static_cast<int>(m); ++k) {
    out.emplace(k, k + 1);
    out.emplace(k + 1, k);
  }
  return out;
}

AgentPairSet ring_pairs(std::size_t m) {
  AgentPairSet out = line_pairs(m);
  if (m > 2) {
    out.emplace(0, static_cast<int>(m) - 1);
    out.emplace(static_cast<int>(m) - 1, 0);
  }
  return out;
}

std::vector<std::vector<int>> connected_components(const AgentPairSet& pairs, std::size_t m) {
  std::vector<int> parent(m);
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](int x) {
    while (parent[static_cast<std::size_t>(x)] != x) x = parent[static_cast<std::size_t>(x)] = parent[static_cast<std::size_t>(parent[static_cast<std::size_t>(x)])];
    return x;
  };
  for (const auto& [k, z] : pairs) {
    const int a = find(k), b = find(z);
    if (a != b) parent[static_cast<std::size_t>(std::max(a, b))] = std::min(a, b);
  }
  std::vector<std::vector<int>> comps;
  std::vector<int> slot(m, -1);
  for (int k = 0; k < static_cast<int>(m); ++k) {
    const int r = find(k);
    if (slot[static_cast<std::size_t>(r)] < 0) {
      slot[static_cast<std::size_t>(r)] = static_cast<int>(comps.size());
      comps.emplace_back();
    }
    comps[static_cast<std::size_t>(slot[static_cast<std::size_t>(r)])].push_back(k);
  }
  return comps;
}

bool is_connected(const AgentPairSet& pairs, std::size_t m) { return connected_components(pairs, m).size() <= 1; }

AgentPairSet drop_pairs_connected(const AgentPairSet& pairs, std::size_t m, double drop_fraction, std::uint64_t seed) {
  if (!(drop_fraction >= 0.0 && drop_fraction <= 1.0)) throw ValidationError("drop fraction must lie in [0, 1]");
  std::vector<std::pair<int, int>> links;
  for (const auto& [k, z] : pairs)
    if (k < z) links.emplace_back(k, z);
  std::mt19937_64 rng(seed);
  std::shuffle(links.begin(), links.end(), rng);
  auto target = static_cast<std::size_t>(std::lround(drop_fraction * static_cast<double>(links.size())));
  AgentPairSet out = pairs;
  const bool was_connected = is_connected(pairs, m);
  for (const auto& [k, z] : links) {
    if (target == 0) break;
    out.erase({k, z});
    out.erase({z, k});
    if (was_connected && !is_connected(out, m)) {
      out.emplace(k, z);
      out.emplace(z, k);
      continue;
    }
    --target;
  }
  return out;
}

BoolMatrix forbidden_from_pairs(const AgentPairSet& pairs, std::size_t m) {
  const auto mi = static_cast<Eigen::Index>(m);
  BoolMatrix a = BoolMatrix::Constant(mi, mi, true);
  for (Eigen::Index k = 0; k < mi; ++k) a(k, k) = false;
  for (const auto& [k, z] : pairs) a(k, z) = false;
  return a;
}

}  // namespace dgcn
