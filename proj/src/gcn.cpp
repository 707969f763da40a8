#include "dgcn/gcn.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "dgcn/error.hpp"
#include "dgcn/metrics.hpp"

namespace dgcn {

std::string to_string(Activation a) {
  switch (a) {
    case Activation::relu: return "relu";
    case Activation::softmax: return "softmax";
    case Activation::identity: return "identity";
  }
  return "unknown";
}

std::string to_string(Basis b) { return b == Basis::monomial ? "monomial" : "chebyshev"; }
std::string to_string(LossKind k) { return k == LossKind::cross_entropy ? "cross_entropy" : "mse"; }

Activation activation_from_string(const std::string& s) {
  if (s == "relu") return Activation::relu;
  if (s == "softmax") return Activation::softmax;
  if (s == "identity") return Activation::identity;
  throw ValidationError("unknown activation '" + s + "'");
}

Basis basis_from_string(const std::string& s) {
  if (s == "monomial") return Basis::monomial;
  if (s == "chebyshev") return Basis::chebyshev;
  throw ValidationError("unknown basis '" + s + "'");
}

LossKind loss_kind_from_string(const std::string& s) {
  if (s == "cross_entropy") return LossKind::cross_entropy;
  if (s == "mse") return LossKind::mse;
  throw ValidationError("unknown loss '" + s + "'");
}

void ModelSpec::validate() const {
  if (layers.empty()) throw ValidationError("model has no layers");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& layer = layers[l];
    const std::string name = "layer " + std::to_string(l);
    if (layer.in_dim == 0 || layer.out_dim == 0) throw ValidationError(name + " has a zero dimension");
    if (layer.order == 0) throw ValidationError(name + " must have order >= 1");
    if (layer.activation == Activation::softmax && l + 1 != layers.size())
      throw ValidationError(name + ": softmax is only allowed on the final layer");
    if (l > 0 && layers[l - 1].out_dim != layer.in_dim)
      throw ValidationError(name + " input width " + std::to_string(layer.in_dim) + " does not match previous output " +
                            std::to_string(layers[l - 1].out_dim));
  }
}

std::size_t ModelSpec::parameter_count() const {
  std::size_t p = 0;
  for (const auto& l : layers) p += (l.order + 1) * l.in_dim * l.out_dim;
  return p;
}

ModelSpec make_model(std::size_t in_dim, const std::vector<std::size_t>& hidden, std::size_t out_dim,
                     std::size_t order, Activation final_activation, Basis basis) {
  ModelSpec spec;
  std::size_t width = in_dim;
  for (std::size_t h : hidden) {
    spec.layers.push_back({width, h, order, Activation::relu, basis});
    width = h;
  }
  spec.layers.push_back({width, out_dim, order, final_activation, basis});
  spec.validate();
  return spec;
}

ParamBank ParamBank::zeros(const ModelSpec& spec) {
  ParamBank bank;
  for (const auto& l : spec.layers)
    bank.weights.emplace_back(l.order + 1,
                              Matrix::Zero(static_cast<Eigen::Index>(l.in_dim), static_cast<Eigen::Index>(l.out_dim)));
  return bank;
}

ParamBank ParamBank::gaussian(const ModelSpec& spec, double stddev, std::uint64_t seed) {
  ParamBank bank = zeros(spec);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, stddev);
  for (auto& layer : bank.weights)
    for (auto& w : layer)
      for (Eigen::Index c = 0; c < w.cols(); ++c)
        for (Eigen::Index r = 0; r < w.rows(); ++r) w(r, c) = normal(rng);
  return bank;
}

ParamBank ParamBank::unflatten(const ModelSpec& spec, const Vector& flat) {
  if (static_cast<std::size_t>(flat.size()) != spec.parameter_count())
    throw ValidationError("flat parameter vector has " + std::to_string(flat.size()) + " entries, model needs " +
                          std::to_string(spec.parameter_count()));
  ParamBank bank = zeros(spec);
  Eigen::Index offset = 0;
  for (auto& layer : bank.weights)
    for (auto& w : layer) {
      w = Eigen::Map<const Matrix>(flat.data() + offset, w.rows(), w.cols());
      offset += w.size();
    }
  return bank;
}

Vector ParamBank::flatten() const {
  Vector flat(static_cast<Eigen::Index>(size()));
  Eigen::Index offset = 0;
  for (const auto& layer : weights)
    for (const auto& w : layer) {
      Eigen::Map<Matrix>(flat.data() + offset, w.rows(), w.cols()) = w;
      offset += w.size();
    }
  return flat;
}

void ParamBank::load(const Vector& flat) {
  if (static_cast<std::size_t>(flat.size()) != size())
    throw ValidationError("flat parameter vector has " + std::to_string(flat.size()) + " entries, bank holds " +
                          std::to_string(size()));
  Eigen::Index offset = 0;
  for (auto& layer : weights)
    for (auto& w : layer) {
      w = Eigen::Map<const Matrix>(flat.data() + offset, w.rows(), w.cols());
      offset += w.size();
    }
}

std::size_t ParamBank::size() const {
  std::size_t p = 0;
  for (const auto& layer : weights)
    for (const auto& w : layer) p += static_cast<std::size_t>(w.size());
  return p;
}

bool ParamBank::matches(const ModelSpec& spec) const {
  if (weights.size() != spec.layers.size()) return false;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    const auto& s = spec.layers[l];
    if (weights[l].size() != s.order + 1) return false;
    for (const auto& w : weights[l])
      if (w.rows() != static_cast<Eigen::Index>(s.in_dim) || w.cols() != static_cast<Eigen::Index>(s.out_dim))
        return false;
  }
  return true;
}

double chebyshev_scale(const SparseMatrix& shift) {
  double best = 0.0;
  for (Eigen::Index r = 0; r < shift.outerSize(); ++r) {
    double row = 0.0;
    for (SparseMatrix::InnerIterator it(shift, r); it; ++it) row += std::abs(it.value());
    best = std::max(best, row);
  }
  return best > 0.0 ? best : 1.0;
}

std::uint64_t fingerprint(const ParamBank& params) {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&](const void* data, std::size_t bytes) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < bytes; ++i) {
      h ^= p[i];
      h *= 1099511628211ULL;
    }
  };
  for (const auto& layer : params.weights)
    for (const auto& w : layer) {
      const Eigen::Index dims[2] = {w.rows(), w.cols()};
      mix(dims, sizeof(dims));
      mix(w.data(), static_cast<std::size_t>(w.size()) * sizeof(double));
    }
  return h;
}

namespace {

// T_p(op) x for p = 0..order, op = D (monomial) or D / scale (chebyshev).
std::vector<Matrix> diffusion_terms(const SparseMatrix& d, double scale, Basis basis, const Matrix& x,
                                    std::size_t order) {
  std::vector<Matrix> terms;
  terms.reserve(order + 1);
  terms.push_back(x);
  if (basis == Basis::monomial) {
    for (std::size_t p = 1; p <= order; ++p) terms.push_back(d * terms.back());
    return terms;
  }
  const double inv = 1.0 / scale;
  terms.push_back(inv * (d * x));
  for (std::size_t p = 2; p <= order; ++p) terms.push_back(2.0 * inv * (d * terms[p - 1]) - terms[p - 2]);
  return terms;
}

// sum_p T_p(op^T) r_p (Horner for the monomial basis, Clenshaw for Chebyshev).
Matrix adjoint_polynomial(const SparseMatrix& dt, double scale, Basis basis, const std::vector<Matrix>& r) {
  const std::size_t order = r.size() - 1;
  if (basis == Basis::monomial) {
    Matrix acc = r[order];
    for (std::size_t p = order; p-- > 0;) acc = r[p] + dt * acc;
    return acc;
  }
  const double inv = 1.0 / scale;
  Matrix b1 = r[order];
  Matrix b2 = Matrix::Zero(b1.rows(), b1.cols());
  for (std::size_t p = order - 1; p >= 1; --p) {
    Matrix next = r[p] + 2.0 * inv * (dt * b1) - b2;
    b2 = std::move(b1);
    b1 = std::move(next);
  }
  return r[0] + inv * (dt * b1) - b2;
}

void check_shapes(const SparseMatrix& shift, const Matrix& x, const ModelSpec& spec, const ParamBank& params) {
  spec.validate();
  if (shift.rows() != x.rows() || shift.cols() != x.rows())
    throw ValidationError("shift operator is " + std::to_string(shift.rows()) + "x" + std::to_string(shift.cols()) +
                          " but features have " + std::to_string(x.rows()) + " rows");
  if (x.cols() != static_cast<Eigen::Index>(spec.layers.front().in_dim))
    throw ValidationError("layer 0 expects " + std::to_string(spec.layers.front().in_dim) + " input features, got " +
                          std::to_string(x.cols()));
  for (std::size_t l = 0; l < spec.layers.size(); ++l) {
    if (l >= params.weights.size() || params.weights[l].size() != spec.layers[l].order + 1)
      throw ValidationError("layer " + std::to_string(l) + ": parameter bank does not match the layer order");
    for (const auto& w : params.weights[l])
      if (w.rows() != static_cast<Eigen::Index>(spec.layers[l].in_dim) ||
          w.cols() != static_cast<Eigen::Index>(spec.layers[l].out_dim))
        throw ValidationError("layer " + std::to_string(l) + ": weight matrix is " + std::to_string(w.rows()) + "x" +
                              std::to_string(w.cols()));
  }
  if (params.weights.size() != spec.layers.size()) throw ValidationError("parameter bank has extra layers");
}

}  // namespace

Matrix softmax_rows(const Matrix& z) {
  Matrix out(z.rows(), z.cols());
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    const double top = z.row(i).maxCoeff();
    out.row(i) = (z.row(i).array() - top).exp();
    out.row(i) /= out.row(i).sum();
  }
  return out;
}

Matrix apply_activation(Activation a, const Matrix& pre) {
  switch (a) {
    case Activation::relu: return pre.cwiseMax(0.0);
    case Activation::softmax: return softmax_rows(pre);
    case Activation::identity: return pre;
  }
  return pre;
}

Matrix activation_backward(Activation a, const Matrix& pre, const Matrix& out, const Matrix& grad_out) {
  switch (a) {
    case Activation::relu: return (pre.array() > 0.0).select(grad_out, 0.0);
    case Activation::identity: return grad_out;
    case Activation::softmax: {
      const Vector inner = grad_out.cwiseProduct(out).rowwise().sum();
      return out.cwiseProduct(grad_out - inner.replicate(1, grad_out.cols()));
    }
  }
  return grad_out;
}

ForwardResult gc_forward(const SparseMatrix& shift, const Matrix& x, const ModelSpec& spec, const ParamBank& params,
                         Dropout dropout) {
  check_shapes(shift, x, spec, params);
  const bool uses_chebyshev = std::any_of(spec.layers.begin(), spec.layers.end(),
                                          [](const LayerSpec& l) { return l.basis == Basis::chebyshev; });
  const double scale = uses_chebyshev ? chebyshev_scale(shift) : 1.0;

  ForwardResult result;
  result.cache.fingerprint = fingerprint(params);
  Matrix current = x;
  for (std::size_t l = 0; l < spec.layers.size(); ++l) {
    const auto& layer = spec.layers[l];
    LayerCache lc;
    if (dropout.rng && dropout.rate > 0.0) {
      std::bernoulli_distribution keep(1.0 - dropout.rate);
      lc.dropout_mask.resize(current.rows(), current.cols());
      for (Eigen::Index c = 0; c < current.cols(); ++c)
        for (Eigen::Index r = 0; r < current.rows(); ++r)
          lc.dropout_mask(r, c) = keep(*dropout.rng) ? 1.0 / (1.0 - dropout.rate) : 0.0;
      current = current.cwiseProduct(lc.dropout_mask);
    }
    lc.input = current;
    lc.diffused = diffusion_terms(shift, scale, layer.basis, current, layer.order);
    lc.pre = Matrix::Zero(current.rows(), static_cast<Eigen::Index>(layer.out_dim));
    for (std::size_t p = 0; p <= layer.order; ++p) lc.pre.noalias() += lc.diffused[p] * params.weights[l][p];
    lc.output = apply_activation(layer.activation, lc.pre);
    current = lc.output;
    result.cache.layers.push_back(std::move(lc));
  }
  result.outputs = std::move(current);
  return result;
}

ParamBank gc_backward(const SparseMatrix& shift, const ForwardCache& cache, const ModelSpec& spec,
                      const ParamBank& params, const Matrix& output_grad) {
  if (cache.layers.size() != spec.layers.size() || cache.fingerprint != fingerprint(params))
    throw ValidationError("forward cache is stale: it was built from different parameters");
  const auto& last = cache.layers.back();
  if (output_grad.rows() != last.output.rows() || output_grad.cols() != last.output.cols())
    throw ValidationError("output gradient shape does not match the forward outputs");

  const bool uses_chebyshev = std::any_of(spec.layers.begin(), spec.layers.end(),
                                          [](const LayerSpec& l) { return l.basis == Basis::chebyshev; });
  const double scale = uses_chebyshev ? chebyshev_scale(shift) : 1.0;
  const SparseMatrix dt = shift.transpose();

  ParamBank grad = ParamBank::zeros(spec);
  Matrix upstream = output_grad;
  for (std::size_t l = spec.layers.size(); l-- > 0;) {
    const auto& layer = spec.layers[l];
    const auto& lc = cache.layers[l];
    const Matrix dpre = activation_backward(layer.activation, lc.pre, lc.output, upstream);
    for (std::size_t p = 0; p <= layer.order; ++p) grad.weights[l][p].noalias() = lc.diffused[p].transpose() * dpre;
    if (l == 0) break;
    std::vector<Matrix> r;
    r.reserve(layer.order + 1);
    for (std::size_t p = 0; p <= layer.order; ++p) r.push_back(dpre * params.weights[l][p].transpose());
    upstream = adjoint_polynomial(dt, scale, layer.basis, r);
    if (lc.dropout_mask.size() > 0) upstream = upstream.cwiseProduct(lc.dropout_mask);
  }
  return grad;
}

double node_loss(RowIn out, const DataGraph& graph, int node, LossKind kind) {
  const auto i = static_cast<std::size_t>(node);
  if (kind == LossKind::cross_entropy) {
    if (!graph.is_classification()) throw ValidationError("cross entropy needs class labels");
    const int c = graph.classes[i];
    if (c < 0 || c >= out.size()) throw ValidationError("node " + std::to_string(node) + " has no valid class label");
    return -std::log(std::max(out(c), kLogClamp));
  }
  if (graph.is_classification()) {
    // one-hot regression onto the class indicator
    const int c = graph.classes[i];
    double s = 0.0;
    for (Eigen::Index k = 0; k < out.size(); ++k) {
      const double t = k == c ? 1.0 : 0.0;
      s += (out(k) - t) * (out(k) - t);
    }
    return s;
  }
  if (graph.targets.cols() != out.size()) throw ValidationError("target width does not match model output width");
  return (out - graph.targets.row(static_cast<Eigen::Index>(i))).squaredNorm();
}

void add_node_loss_grad(RowIn out, const DataGraph& graph, int node,
                        LossKind kind, double scale, RowOut grad) {
  const auto i = static_cast<std::size_t>(node);
  if (kind == LossKind::cross_entropy) {
    if (!graph.is_classification()) throw ValidationError("cross entropy needs class labels");
    const int c = graph.classes[i];
    if (c < 0 || c >= out.size()) throw ValidationError("node " + std::to_string(node) + " has no valid class label");
    if (out(c) > kLogClamp) grad(c) -= scale / out(c);
    return;
  }
  if (graph.is_classification()) {
    const int c = graph.classes[i];
    for (Eigen::Index k = 0; k < out.size(); ++k) grad(k) += scale * 2.0 * (out(k) - (k == c ? 1.0 : 0.0));
    return;
  }
  grad += scale * 2.0 * (out - graph.targets.row(static_cast<Eigen::Index>(i)));
}

double masked_loss(const Matrix& outputs, const DataGraph& graph, std::span<const int> mask, LossKind kind) {
  if (mask.empty()) throw ValidationError("loss mask is empty");
  double total = 0.0;
  for (int i : mask) total += node_loss(outputs.row(i), graph, i, kind);
  return total / static_cast<double>(mask.size());
}

Matrix masked_loss_grad(const Matrix& outputs, const DataGraph& graph, std::span<const int> mask, LossKind kind) {
  if (mask.empty()) throw ValidationError("loss mask is empty");
  Matrix grad = Matrix::Zero(outputs.rows(), outputs.cols());
  const double scale = 1.0 / static_cast<double>(mask.size());
  for (int i : mask) add_node_loss_grad(outputs.row(i), graph, i, kind, scale, grad.row(i));
  return grad;
}

double evaluate_outputs(const Matrix& outputs, const DataGraph& graph, std::span<const int> nodes) {
  if (graph.is_classification()) return accuracy(outputs, graph.classes, nodes);
  return mean_squared_error(outputs, graph.targets, nodes);
}

CentralResult train_centralized(const DataGraph& graph, const ModelSpec& spec, const CentralConfig& config,
                                bool keep_trajectory) {
  spec.validate();
  if (graph.train_mask.empty()) throw ValidationError("training mask is empty");
  const std::vector<int> eval_nodes = graph.evaluation_nodes();

  CentralResult result;
  result.params = config.initial ? *config.initial : ParamBank::gaussian(spec, config.init_std, config.init_seed);
  if (!result.params.matches(spec)) throw ValidationError("initial parameters do not match the model");

  std::mt19937_64 dropout_rng(config.dropout_seed);
  const bool use_dropout = config.dropout > 0.0;
  const std::size_t every = std::max<std::size_t>(config.eval_every, 1);

  for (std::size_t t = 0; t <= config.iterations; ++t) {
    const bool last = t == config.iterations;
    TrainRecord rec;
    rec.iteration = t;
    rec.eta = step_size(config.schedule, t);

    Dropout dropout;
    if (use_dropout && !last) dropout = {config.dropout, &dropout_rng};
    ForwardResult fwd = gc_forward(graph.shift, graph.features, spec, result.params, dropout);
    rec.train_loss = masked_loss(fwd.outputs, graph, graph.train_mask, config.loss);
    if (!std::isfinite(rec.train_loss)) throw DivergenceError("centralized training loss is not finite", t);

    if (!eval_nodes.empty() && (last || t % every == 0)) {
      const Matrix eval_out =
          dropout.rng ? gc_forward(graph.shift, graph.features, spec, result.params).outputs : fwd.outputs;
      const double metric = evaluate_outputs(eval_out, graph, eval_nodes);
      if (graph.is_classification()) rec.test_accuracy = metric;
      else rec.test_mse = metric;
    }
    result.records.push_back(rec);
    if (last) break;

    if (keep_trajectory) result.trajectory.push_back(result.params.flatten());
    const Matrix g_out = masked_loss_grad(fwd.outputs, graph, graph.train_mask, config.loss);
    const ParamBank grad = gc_backward(graph.shift, fwd.cache, spec, result.params, g_out);
    const Vector flat_grad = grad.flatten();
    if (!flat_grad.allFinite()) throw DivergenceError("centralized gradient is not finite", t);
    result.params = ParamBank::unflatten(spec, result.params.flatten() - rec.eta * flat_grad);
  }
  if (keep_trajectory) result.trajectory.push_back(result.params.flatten());
  return result;
}

}  // namespace dgcn
