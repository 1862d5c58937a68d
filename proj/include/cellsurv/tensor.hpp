#pragma once

// Minimal reverse-mode differentiation over dense row-major matrices.
//
// Every value is a 2-D matrix (vectors are 1xd rows, scalars are 1x1). A Tape
// records operations in execution order; Tape::backward walks the record in
// reverse and returns gradients for every parameter the tape touched.
//
// FLOP convention for Tape::flop_count (forward pass only):
//   matmul           2*m*k*n  (one multiply-add = 2 flops)
//   add/sub/mul      1 per output element, broadcasting ops included
//   relu/sigmoid/tanh/exp/log  4 per element
//   softmax_rows     6 per element
//   row_mean/row_max 1 per input element
//   instance_norm    5 per element
//   neighbor_mean    2*|E|*d for |E| undirected edges
//   gather/concat/transpose  0

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace cellsurv {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

std::string shape_string(const Matrix& m);

/// Undirected graph in compressed neighbor-list form.
struct Adjacency {
  std::vector<std::uint32_t> offsets{0};  // size num_nodes + 1
  std::vector<std::uint32_t> neighbors;

  std::size_t num_nodes() const { return offsets.size() - 1; }
  std::size_t num_directed_entries() const { return neighbors.size(); }
  std::span<const std::uint32_t> neighbors_of(std::size_t k) const {
    return {neighbors.data() + offsets[k], neighbors.data() + offsets[k + 1]};
  }

  // Builds from an undirected edge list; each edge appears in both endpoint lists,
  // neighbor lists sorted ascending.
  static Adjacency from_edges(std::size_t num_nodes,
                              std::span<const std::pair<std::uint32_t, std::uint32_t>> edges);
  // Subgraph induced by `kept` (ascending node ids), renumbered 0..kept.size()-1.
  Adjacency induced(std::span<const std::uint32_t> kept) const;
};

/// Ordered collection of named learnable matrices. Model code refers to
/// parameters by slot index; two roles sharing a slot share the weight.
class ParameterStore {
 public:
  std::size_t add(std::string name, Matrix init);

  std::size_t size() const { return values_.size(); }
  const std::string& name(std::size_t slot) const { return names_.at(slot); }
  const Matrix& value(std::size_t slot) const { return values_.at(slot); }
  Matrix& value(std::size_t slot) { return values_.at(slot); }
  std::optional<std::size_t> find(std::string_view name) const;
  std::size_t total_scalars() const;

 private:
  std::vector<std::string> names_;
  std::vector<Matrix> values_;
};

/// One gradient matrix per ParameterStore slot; unused slots hold zeros.
using Gradients = std::vector<Matrix>;

Gradients zero_gradients(const ParameterStore& store);
void accumulate(Gradients& into, const Gradients& from);

class Tape;

/// Handle to a value recorded on a tape. Cheap to copy; valid until the tape
/// runs backward or is destroyed.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::uint32_t id) : tape_(tape), id_(id) {}

  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const;

  Tape* tape() const { return tape_; }
  std::uint32_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  std::uint32_t id_ = 0;
};

class Tape {
 public:
  // Propagates `grad_out` (gradient of the node with id `self`) into its inputs.
  using BackwardFn = std::function<void(Tape& tape, std::uint32_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  // Leaf bound to a parameter slot. Repeated calls with the same slot return
  // the same node. All parameters on one tape must come from one store, and
  // the store must not be modified while the tape is live (values are read
  // through it, not copied).
  Var param(const ParameterStore& store, std::size_t slot);
  // Leaf that never receives a gradient.
  Var constant(Matrix value);

  // Appends a node. `backward` may be empty for nodes whose inputs need no gradient.
  Var record(Matrix value, std::span<const Var> inputs, BackwardFn backward, std::uint64_t flops);
  Var record(Matrix value, std::initializer_list<Var> inputs, BackwardFn backward, std::uint64_t flops) {
    return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
                  std::move(backward), flops);
  }

  const Matrix& value(std::uint32_t id) const;
  bool requires_grad(std::uint32_t id) const;
  const Matrix& grad(std::uint32_t id) const;
  // Adds `g` into the gradient of node `id` if that node requires a gradient.
  void accumulate_grad(std::uint32_t id, const Matrix& g);
  // Gradient buffer for in-place accumulation; allocated on first use.
  Matrix& grad_buffer(std::uint32_t id);

  // Reverse pass from a 1x1 node seeded with `seed` (d loss / d node).
  // The tape is single-use: recorded activations are released afterwards and
  // a second call throws ContractError.
  Gradients backward(Var loss, double seed = 1.0);

  std::uint64_t flop_count() const { return flops_; }
  std::size_t num_nodes() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

 private:
  struct Node {
    Matrix value;
    Matrix grad;  // empty until first accumulation
    std::vector<std::uint32_t> inputs;
    BackwardFn backward;
    std::optional<std::size_t> param_slot;
    bool requires_grad = false;
  };

  void check_live() const;

  std::vector<Node> nodes_;
  std::vector<std::int64_t> param_nodes_;  // slot -> node id, -1 if absent
  const ParameterStore* store_ = nullptr;
  std::uint64_t flops_ = 0;
  bool consumed_ = false;
};

// ---------------------------------------------------------------------------
// Operations. Binary operands must live on the same tape.

Var matmul(Var a, Var b);
Var transpose(Var a);

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
// a[m x n] + bias[1 x n] broadcast over rows.
Var add_row(Var a, Var bias);
// a[m x n] * gate[m x 1] broadcast over columns.
Var mul_col(Var a, Var gate);

Var sigmoid(Var a);
Var tanh(Var a);
Var relu(Var a);
// Throws NumericalError if any result overflows.
Var exp(Var a);
// Throws DomainError on non-positive entries.
Var log(Var a);

enum class Elementwise { add, sub, mul, sigmoid, tanh, relu, exp, log };
Var elementwise(Elementwise op, Var a);
Var elementwise(Elementwise op, Var a, Var b);

Var softmax_rows(Var a);

Var concat_cols(Var a, Var b);
Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);
// Column-wise mean / max over all rows -> 1 x n. Empty input throws DegenerateInputError.
// row_max routes the gradient to the first maximal row in each column.
Var row_mean(Var a);
Var row_max(Var a);
Var gather_rows(Var a, std::span<const std::uint32_t> rows);
Var sum(Var a);

// (v - mean) / sqrt(var + 1e-5) over a 1 x d row, population variance, no affine.
inline constexpr double kInstanceNormEps = 1e-5;
Var instance_norm(Var v);

// Row k becomes the mean of its neighbors' rows; isolated nodes give a zero row.
Var neighbor_mean(Var features, const Adjacency& adjacency);

// ---------------------------------------------------------------------------
// Optimizer

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<Matrix> first_moment;
  std::vector<Matrix> second_moment;
  std::int64_t step = 0;
};

// Decoupled weight decay (param -= lr * weight_decay * param) followed by a
// bias-corrected Adam update.
void adam_step(ParameterStore& params, const Gradients& grads, double lr, double weight_decay,
               AdamState& state, const AdamOptions& options = {});

}  // namespace cellsurv
