#include "cellsurv/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cellsurv/errors.hpp"

namespace cellsurv {

std::string shape_string(const Matrix& m) {
  return "[" + std::to_string(m.rows()) + "x" + std::to_string(m.cols()) + "]";
}

// ---------------------------------------------------------------------------
// Adjacency

Adjacency Adjacency::from_edges(std::size_t num_nodes,
                                std::span<const std::pair<std::uint32_t, std::uint32_t>> edges) {
  Adjacency adj;
  std::vector<std::uint32_t> degree(num_nodes, 0);
  for (const auto& [u, v] : edges) {
    if (u >= num_nodes || v >= num_nodes) {
      throw DimensionError("edge (" + std::to_string(u) + "," + std::to_string(v) +
                           ") out of range for " + std::to_string(num_nodes) + " nodes");
    }
    ++degree[u];
    ++degree[v];
  }
  adj.offsets.assign(num_nodes + 1, 0);
  for (std::size_t k = 0; k < num_nodes; ++k) adj.offsets[k + 1] = adj.offsets[k] + degree[k];
  adj.neighbors.resize(adj.offsets.back());
  std::vector<std::uint32_t> cursor(adj.offsets.begin(), adj.offsets.end() - 1);
  for (const auto& [u, v] : edges) {
    adj.neighbors[cursor[u]++] = v;
    adj.neighbors[cursor[v]++] = u;
  }
  for (std::size_t k = 0; k < num_nodes; ++k) {
    std::sort(adj.neighbors.begin() + adj.offsets[k], adj.neighbors.begin() + adj.offsets[k + 1]);
  }
  return adj;
}

Adjacency Adjacency::induced(std::span<const std::uint32_t> kept) const {
  std::vector<std::int64_t> remap(num_nodes(), -1);
  for (std::size_t i = 0; i < kept.size(); ++i) remap.at(kept[i]) = static_cast<std::int64_t>(i);
  Adjacency out;
  out.offsets.assign(kept.size() + 1, 0);
  for (std::size_t i = 0; i < kept.size(); ++i) {
    for (auto j : neighbors_of(kept[i])) {
      if (remap[j] >= 0) out.neighbors.push_back(static_cast<std::uint32_t>(remap[j]));
    }
    out.offsets[i + 1] = static_cast<std::uint32_t>(out.neighbors.size());
  }
  return out;
}

// ---------------------------------------------------------------------------
// ParameterStore

std::size_t ParameterStore::add(std::string name, Matrix init) {
  if (find(name)) throw ContractError("duplicate parameter name '" + name + "'");
  names_.push_back(std::move(name));
  values_.push_back(std::move(init));
  return values_.size() - 1;
}

std::optional<std::size_t> ParameterStore::find(std::string_view name) const {
  for (std::size_t i = 0; i < names_.size(); ++i) {
    if (names_[i] == name) return i;
  }
  return std::nullopt;
}

std::size_t ParameterStore::total_scalars() const {
  std::size_t n = 0;
  for (const auto& v : values_) n += static_cast<std::size_t>(v.size());
  return n;
}

Gradients zero_gradients(const ParameterStore& store) {
  Gradients g;
  g.reserve(store.size());
  for (std::size_t i = 0; i < store.size(); ++i) {
    g.push_back(Matrix::Zero(store.value(i).rows(), store.value(i).cols()));
  }
  return g;
}

void accumulate(Gradients& into, const Gradients& from) {
  if (into.size() != from.size()) {
    throw DimensionError("gradient sets differ in length: " + std::to_string(into.size()) + " vs " +
                         std::to_string(from.size()));
  }
  for (std::size_t i = 0; i < into.size(); ++i) into[i] += from[i];
}

// ---------------------------------------------------------------------------
// Var / Tape

const Matrix& Var::value() const {
  if (!tape_) throw ContractError("use of an unbound Var");
  return tape_->value(id_);
}

double Var::scalar() const {
  const auto& v = value();
  if (v.rows() != 1 || v.cols() != 1) throw DimensionError("expected a scalar, got " + shape_string(v));
  return v(0, 0);
}

void Tape::check_live() const {
  if (consumed_) throw ContractError("tape already consumed by backward(); record a new tape");
}

Var Tape::param(const ParameterStore& store, std::size_t slot) {
  check_live();
  if (store_ && store_ != &store) throw ContractError("tape parameters must come from a single store");
  store_ = &store;
  if (param_nodes_.size() < store.size()) param_nodes_.resize(store.size(), -1);
  if (slot >= store.size()) throw ContractError("parameter slot out of range");
  if (param_nodes_[slot] >= 0) return Var(this, static_cast<std::uint32_t>(param_nodes_[slot]));
  Node node;  // value is read through the store, not copied
  node.param_slot = slot;
  node.requires_grad = true;
  nodes_.push_back(std::move(node));
  const auto id = static_cast<std::uint32_t>(nodes_.size() - 1);
  param_nodes_[slot] = id;
  return Var(this, id);
}

Var Tape::constant(Matrix value) {
  check_live();
  Node node;
  node.value = std::move(value);
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Var Tape::record(Matrix value, std::span<const Var> inputs, BackwardFn backward, std::uint64_t flops) {
  check_live();
  Node node;
  node.value = std::move(value);
  node.inputs.reserve(inputs.size());
  for (const auto& in : inputs) {
    if (in.tape() != this) throw ContractError("operands recorded on different tapes");
    node.inputs.push_back(in.id());
    node.requires_grad = node.requires_grad || nodes_[in.id()].requires_grad;
  }
  if (node.requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  flops_ += flops;
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

const Matrix& Tape::value(std::uint32_t id) const {
  check_live();
  const auto& node = nodes_.at(id);
  return node.param_slot ? store_->value(*node.param_slot) : node.value;
}

bool Tape::requires_grad(std::uint32_t id) const { return nodes_.at(id).requires_grad; }

const Matrix& Tape::grad(std::uint32_t id) const { return nodes_.at(id).grad; }

Matrix& Tape::grad_buffer(std::uint32_t id) {
  auto& node = nodes_.at(id);
  if (node.grad.size() == 0) {
    const auto& v = value(id);
    node.grad = Matrix::Zero(v.rows(), v.cols());
  }
  return node.grad;
}

void Tape::accumulate_grad(std::uint32_t id, const Matrix& g) {
  if (!nodes_.at(id).requires_grad) return;
  grad_buffer(id) += g;
}

Gradients Tape::backward(Var loss, double seed) {
  check_live();
  if (loss.tape() != this) throw ContractError("loss recorded on a different tape");
  const auto& lv = value(loss.id());
  if (lv.rows() != 1 || lv.cols() != 1) {
    throw ContractError("backward() needs a scalar loss, got " + shape_string(lv));
  }
  if (nodes_[loss.id()].requires_grad) {
    grad_buffer(loss.id())(0, 0) += seed;
    for (std::int64_t i = loss.id(); i >= 0; --i) {
      auto& node = nodes_[static_cast<std::size_t>(i)];
      if (!node.requires_grad || node.grad.size() == 0 || !node.backward) continue;
      node.backward(*this, static_cast<std::uint32_t>(i));
    }
  }
  Gradients out;
  if (store_) {
    out = zero_gradients(*store_);
    for (std::size_t slot = 0; slot < param_nodes_.size(); ++slot) {
      if (param_nodes_[slot] < 0) continue;
      auto& g = nodes_[static_cast<std::size_t>(param_nodes_[slot])].grad;
      if (g.size() != 0) out[slot] = std::move(g);
    }
  }
  nodes_.clear();
  nodes_.shrink_to_fit();
  param_nodes_.clear();
  consumed_ = true;
  return out;
}

// ---------------------------------------------------------------------------
// Operations

namespace {

void require_same_tape(Var a, Var b) {
  if (a.tape() != b.tape()) throw ContractError("operands recorded on different tapes");
}

void require_same_shape(const char* op, const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a) + " vs " + shape_string(b));
  }
}

std::uint64_t elems(const Matrix& m) { return static_cast<std::uint64_t>(m.size()); }

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Var matmul(Var a, Var b) {
  require_same_tape(a, b);
  const auto& A = a.value();
  const auto& B = b.value();
  if (A.cols() != B.rows()) {
    throw DimensionError("matmul: inner dimensions disagree " + shape_string(A) + " * " + shape_string(B));
  }
  Matrix out(A.rows(), B.cols());
  out.noalias() = A * B;
  const auto flops = 2ull * A.rows() * A.cols() * B.cols();
  const auto ia = a.id(), ib = b.id();
  return a.tape()->record(std::move(out), {a, b}, [ia, ib](Tape& t, std::uint32_t self) {
    const auto& g = t.grad(self);
    if (t.requires_grad(ia)) t.grad_buffer(ia).noalias() += g * t.value(ib).transpose();
    if (t.requires_grad(ib)) t.grad_buffer(ib).noalias() += t.value(ia).transpose() * g;
  }, flops);
}

Var transpose(Var a) {
  Matrix out = a.value().transpose();
  const auto ia = a.id();
  return a.tape()->record(std::move(out), {a}, [ia](Tape& t, std::uint32_t self) {
    t.grad_buffer(ia) += t.grad(self).transpose();
  }, 0);
}

Var add(Var a, Var b) {
  require_same_tape(a, b);
  require_same_shape("add", a.value(), b.value());
  Matrix out = a.value() + b.value();
  const auto ia = a.id(), ib = b.id();
  const auto flops = elems(out);
  return a.tape()->record(std::move(out), {a, b}, [ia, ib](Tape& t, std::uint32_t self) {
    t.accumulate_grad(ia, t.grad(self));
    t.accumulate_grad(ib, t.grad(self));
  }, flops);
}

Var sub(Var a, Var b) {
  require_same_tape(a, b);
  require_same_shape("sub", a.value(), b.value());
  Matrix out = a.value() - b.value();
  const auto ia = a.id(), ib = b.id();
  const auto flops = elems(out);
  return a.tape()->record(std::move(out), {a, b}, [ia, ib](Tape& t, std::uint32_t self) {
    t.accumulate_grad(ia, t.grad(self));
    if (t.requires_grad(ib)) t.grad_buffer(ib) -= t.grad(self);
  }, flops);
}

Var mul(Var a, Var b) {
  require_same_tape(a, b);
  require_same_shape("mul", a.value(), b.value());
  Matrix out = a.value().cwiseProduct(b.value());
  const auto ia = a.id(), ib = b.id();
  const auto flops = elems(out);
  return a.tape()->record(std::move(out), {a, b}, [ia, ib](Tape& t, std::uint32_t self) {
    const auto& g = t.grad(self);
    if (t.requires_grad(ia)) t.grad_buffer(ia) += g.cwiseProduct(t.value(ib));
    if (t.requires_grad(ib)) t.grad_buffer(ib) += g.cwiseProduct(t.value(ia));
  }, flops);
}

Var scale(Var a, double factor) {
  Matrix out = a.value() * factor;
  const auto ia = a.id();
  const auto flops = elems(out);
  return a.tape()->record(std::move(out), {a}, [ia, factor](Tape& t, std::uint32_t self) {
    t.grad_buffer(ia) += t.grad(self) * factor;
  }, flops);
}

Var add_row(Var a, Var bias) {
  require_same_tape(a, bias);
  const auto& A = a.value();
  const auto& b = bias.value();
  if (b.rows() != 1 || b.cols() != A.cols()) {
    throw DimensionError("add_row: bias " + shape_string(b) + " does not match " + shape_string(A));
  }
  Matrix out = A.rowwise() + b.row(0);
  const auto ia = a.id(), ib = bias.id();
  const auto flops = elems(out);
  return a.tape()->record(std::move(out), {a, bias}, [ia, ib](Tape& t, std::uint32_t self) {
    const auto& g = t.grad(self);
    t.accumulate_grad(ia, g);
    if (t.requires_grad(ib)) t.grad_buffer(ib) += g.colwise().sum();
  }, flops);
}

Var mul_col(Var a, Var gate) {
  require_same_tape(a, gate);
  const auto& A = a.value();
  const auto& s = gate.value();
  if (s.cols() != 1 || s.rows() != A.rows()) {
    throw DimensionError("mul_col: gate " + shape_string(s) + " does not match " + shape_string(A));
  }
  Matrix out = s.col(0).asDiagonal() * A;
  const auto ia = a.id(), is = gate.id();
  const auto flops = elems(out);
  return a.tape()->record(std::move(out), {a, gate}, [ia, is](Tape& t, std::uint32_t self) {
    const auto& g = t.grad(self);
    if (t.requires_grad(ia)) t.grad_buffer(ia) += t.value(is).col(0).asDiagonal() * g;
    if (t.requires_grad(is)) t.grad_buffer(is) += g.cwiseProduct(t.value(ia)).rowwise().sum();
  }, flops);
}

Var sigmoid(Var a) {
  Matrix out = a.value().unaryExpr([](double x) { return stable_sigmoid(x); });
  const auto ia = a.id();
  const auto flops = 4 * elems(out);
  return a.tape()->record(std::move(out), {a}, [ia](Tape& t, std::uint32_t self) {
    const auto& y = t.value(self);
    t.grad_buffer(ia) += t.grad(self).cwiseProduct(y.cwiseProduct((1.0 - y.array()).matrix()));
  }, flops);
}

Var tanh(Var a) {
  Matrix out = a.value().array().tanh().matrix();
  const auto ia = a.id();
  const auto flops = 4 * elems(out);
  return a.tape()->record(std::move(out), {a}, [ia](Tape& t, std::uint32_t self) {
    const auto& y = t.value(self);
    t.grad_buffer(ia) += t.grad(self).cwiseProduct((1.0 - y.array().square()).matrix());
  }, flops);
}

Var relu(Var a) {
  Matrix out = a.value().cwiseMax(0.0);
  const auto ia = a.id();
  const auto flops = 4 * elems(out);
  return a.tape()->record(std::move(out), {a}, [ia](Tape& t, std::uint32_t self) {
    const auto& x = t.value(ia);
    t.grad_buffer(ia) += (x.array() > 0.0).select(t.grad(self), 0.0).matrix();
  }, flops);
}

Var exp(Var a) {
  Matrix out = a.value().array().exp().matrix();
  if (!out.allFinite()) throw NumericalError("exp: overflow for input " + shape_string(a.value()));
  const auto ia = a.id();
  const auto flops = 4 * elems(out);
  return a.tape()->record(std::move(out), {a}, [ia](Tape& t, std::uint32_t self) {
    t.grad_buffer(ia) += t.grad(self).cwiseProduct(t.value(self));
  }, flops);
}

Var log(Var a) {
  const auto& x = a.value();
  if ((x.array() <= 0.0).any()) throw DomainError("log: non-positive argument");
  Matrix out = x.array().log().matrix();
  const auto ia = a.id();
  const auto flops = 4 * elems(out);
  return a.tape()->record(std::move(out), {a}, [ia](Tape& t, std::uint32_t self) {
    t.grad_buffer(ia) += t.grad(self).cwiseQuotient(t.value(ia));
  }, flops);
}

Var elementwise(Elementwise op, Var a) {
  switch (op) {
    case Elementwise::sigmoid: return sigmoid(a);
    case Elementwise::tanh: return tanh(a);
    case Elementwise::relu: return relu(a);
    case Elementwise::exp: return exp(a);
    case Elementwise::log: return log(a);
    default: throw ContractError("elementwise: binary op called with one operand");
  }
}

Var elementwise(Elementwise op, Var a, Var b) {
  switch (op) {
    case Elementwise::add: return add(a, b);
    case Elementwise::sub: return sub(a, b);
    case Elementwise::mul: return mul(a, b);
    default: throw ContractError("elementwise: unary op called with two operands");
  }
}

Var softmax_rows(Var a) {
  const auto& x = a.value();
  Matrix out(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double mx = x.row(i).maxCoeff();
    out.row(i) = (x.row(i).array() - mx).exp().matrix();
    out.row(i) /= out.row(i).sum();
  }
  if (!out.allFinite()) throw NumericalError("softmax_rows: non-finite result");
  const auto ia = a.id();
  const auto flops = 6 * elems(out);
  return a.tape()->record(std::move(out), {a}, [ia](Tape& t, std::uint32_t self) {
    const auto& y = t.value(self);
    const auto& g = t.grad(self);
    Eigen::VectorXd dots = g.cwiseProduct(y).rowwise().sum();
    t.grad_buffer(ia) += y.cwiseProduct((g.colwise() - dots));
  }, flops);
}

Var concat_cols(Var a, Var b) {
  const Var parts[] = {a, b};
  return concat_cols(parts);
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw DegenerateInputError("concat_cols: no operands");
  const auto rows = parts[0].rows();
  Eigen::Index cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows) {
      throw DimensionError("concat_cols: row mismatch " + shape_string(parts[0].value()) + " vs " +
                           shape_string(p.value()));
    }
    cols += p.cols();
  }
  Matrix out(rows, cols);
  std::vector<std::pair<std::uint32_t, Eigen::Index>> layout;
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    layout.emplace_back(p.id(), at);
    at += p.cols();
  }
  return parts[0].tape()->record(std::move(out), parts, [layout](Tape& t, std::uint32_t self) {
    const auto& g = t.grad(self);
    for (const auto& [id, offset] : layout) {
      if (t.requires_grad(id)) t.grad_buffer(id) += g.middleCols(offset, t.value(id).cols());
    }
  }, 0);
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw DegenerateInputError("concat_rows: no operands");
  const auto cols = parts[0].cols();
  Eigen::Index rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != cols) {
      throw DimensionError("concat_rows: column mismatch " + shape_string(parts[0].value()) + " vs " +
                           shape_string(p.value()));
    }
    rows += p.rows();
  }
  Matrix out(rows, cols);
  std::vector<std::pair<std::uint32_t, Eigen::Index>> layout;
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    out.middleRows(at, p.rows()) = p.value();
    layout.emplace_back(p.id(), at);
    at += p.rows();
  }
  return parts[0].tape()->record(std::move(out), parts, [layout](Tape& t, std::uint32_t self) {
    const auto& g = t.grad(self);
    for (const auto& [id, offset] : layout) {
      if (t.requires_grad(id)) t.grad_buffer(id) += g.middleRows(offset, t.value(id).rows());
    }
  }, 0);
}

Var row_mean(Var a) {
  const auto& x = a.value();
  if (x.rows() == 0) throw DegenerateInputError("row_mean: empty row set");
  Matrix out = x.colwise().mean();
  const auto ia = a.id();
  const auto flops = elems(x);
  return a.tape()->record(std::move(out), {a}, [ia](Tape& t, std::uint32_t self) {
    auto& ga = t.grad_buffer(ia);
    const double inv = 1.0 / static_cast<double>(ga.rows());
    ga.rowwise() += t.grad(self).row(0) * inv;
  }, flops);
}

Var row_max(Var a) {
  const auto& x = a.value();
  if (x.rows() == 0) throw DegenerateInputError("row_max: empty row set");
  Matrix out(1, x.cols());
  std::vector<Eigen::Index> argmax(static_cast<std::size_t>(x.cols()));
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    Eigen::Index best = 0;
    for (Eigen::Index i = 1; i < x.rows(); ++i) {
      if (x(i, j) > x(best, j)) best = i;
    }
    argmax[static_cast<std::size_t>(j)] = best;
    out(0, j) = x(best, j);
  }
  const auto ia = a.id();
  const auto flops = elems(x);
  return a.tape()->record(std::move(out), {a}, [ia, argmax](Tape& t, std::uint32_t self) {
    auto& ga = t.grad_buffer(ia);
    const auto& g = t.grad(self);
    for (std::size_t j = 0; j < argmax.size(); ++j) {
      ga(argmax[j], static_cast<Eigen::Index>(j)) += g(0, static_cast<Eigen::Index>(j));
    }
  }, flops);
}

Var gather_rows(Var a, std::span<const std::uint32_t> rows) {
  const auto& x = a.value();
  Matrix out(static_cast<Eigen::Index>(rows.size()), x.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= x.rows()) {
      throw DimensionError("gather_rows: index " + std::to_string(rows[i]) + " out of range for " +
                           shape_string(x));
    }
    out.row(static_cast<Eigen::Index>(i)) = x.row(rows[i]);
  }
  const auto ia = a.id();
  std::vector<std::uint32_t> index(rows.begin(), rows.end());
  return a.tape()->record(std::move(out), {a}, [ia, index = std::move(index)](Tape& t, std::uint32_t self) {
    auto& ga = t.grad_buffer(ia);
    const auto& g = t.grad(self);
    for (std::size_t i = 0; i < index.size(); ++i) ga.row(index[i]) += g.row(static_cast<Eigen::Index>(i));
  }, 0);
}

Var sum(Var a) {
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  const auto ia = a.id();
  const auto flops = elems(a.value());
  return a.tape()->record(std::move(out), {a}, [ia](Tape& t, std::uint32_t self) {
    t.grad_buffer(ia).array() += t.grad(self)(0, 0);
  }, flops);
}

Var instance_norm(Var v) {
  const auto& x = v.value();
  if (x.rows() != 1) throw DimensionError("instance_norm: expected a row vector, got " + shape_string(x));
  if (x.cols() < 2) throw DegenerateInputError("instance_norm: needs at least 2 entries");
  const double mean = x.mean();
  const double var = (x.array() - mean).square().mean();
  const double inv_std = 1.0 / std::sqrt(var + kInstanceNormEps);
  Matrix out = ((x.array() - mean) * inv_std).matrix();
  const auto iv = v.id();
  const auto flops = 5 * elems(out);
  return v.tape()->record(std::move(out), {v}, [iv, inv_std](Tape& t, std::uint32_t self) {
    const auto& y = t.value(self);
    const auto& g = t.grad(self);
    const double g_mean = g.mean();
    const double gy_mean = g.cwiseProduct(y).mean();
    t.grad_buffer(iv) += (inv_std * (g.array() - g_mean - y.array() * gy_mean)).matrix();
  }, flops);
}

Var neighbor_mean(Var features, const Adjacency& adjacency) {
  const auto& x = features.value();
  const auto c = static_cast<std::size_t>(x.rows());
  if (adjacency.num_nodes() != c) {
    throw DimensionError("neighbor_mean: adjacency over " + std::to_string(adjacency.num_nodes()) +
                         " nodes vs features " + shape_string(x));
  }
  Matrix out = Matrix::Zero(x.rows(), x.cols());
  for (std::size_t k = 0; k < c; ++k) {
    const auto nbrs = adjacency.neighbors_of(k);
    if (nbrs.empty()) continue;
    auto row = out.row(static_cast<Eigen::Index>(k));
    for (auto j : nbrs) row += x.row(j);
    row /= static_cast<double>(nbrs.size());
  }
  const auto flops = static_cast<std::uint64_t>(adjacency.num_directed_entries()) *
                     static_cast<std::uint64_t>(x.cols());
  const auto ix = features.id();
  // The adjacency is copied so the closure does not outlive the caller's graph.
  return features.tape()->record(std::move(out), {features}, [ix, adjacency](Tape& t, std::uint32_t self) {
    auto& gx = t.grad_buffer(ix);
    const auto& g = t.grad(self);
    for (std::size_t k = 0; k < adjacency.num_nodes(); ++k) {
      const auto nbrs = adjacency.neighbors_of(k);
      if (nbrs.empty()) continue;
      const double inv = 1.0 / static_cast<double>(nbrs.size());
      for (auto j : nbrs) gx.row(j) += g.row(static_cast<Eigen::Index>(k)) * inv;
    }
  }, flops);
}

// ---------------------------------------------------------------------------
// Adam

void adam_step(ParameterStore& params, const Gradients& grads, double lr, double weight_decay,
               AdamState& state, const AdamOptions& options) {
  if (grads.size() != params.size()) {
    throw DimensionError("adam_step: " + std::to_string(grads.size()) + " gradients for " +
                         std::to_string(params.size()) + " parameters");
  }
  if (state.first_moment.size() != params.size()) {
    state.first_moment = zero_gradients(params);
    state.second_moment = zero_gradients(params);
    state.step = 0;
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(options.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(options.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params.value(i);
    const auto& g = grads[i];
    require_same_shape("adam_step", p, g);
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    if (weight_decay != 0.0) p *= (1.0 - lr * weight_decay);
    m = options.beta1 * m + (1.0 - options.beta1) * g;
    v = options.beta2 * v + (1.0 - options.beta2) * g.cwiseProduct(g);
    p.array() -= lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + options.eps);
  }
}

}  // namespace cellsurv
