#pragma once

// Reverse-mode automatic differentiation over dense tensors.
//
// A Tape records primitive applications in execution order. Every primitive
// stores its output value and a closure that pushes the output gradient into
// its inputs; Tape::backward walks the record in reverse. Parameters enter a
// tape once (the node is cached), so one backward pass performs exactly one
// accumulation into each Parameter::grad.

#include <cstddef>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "seqmech/rng.hpp"
#include "seqmech/tensor.hpp"

namespace seqmech {

enum class Mode { Train, Eval };

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  bool trainable = true;
};

/// Owns the parameters of one model. Addresses are stable; names are unique.
class ParameterStore {
 public:
  Parameter& add(std::string name, Tensor value, bool trainable = true);
  Parameter& get(std::string_view name);
  const Parameter& get(std::string_view name) const;
  Parameter* find(std::string_view name);
  const Parameter* find(std::string_view name) const;

  std::vector<Parameter*> all();
  std::vector<const Parameter*> all() const;
  /// Number of parameter tensors.
  std::size_t size() const { return params_.size(); }
  /// Total number of scalar entries.
  std::size_t scalar_count() const;
  void zero_grad();

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
  std::unordered_map<std::string, Parameter*> index_;
};

enum class OpKind {
  Leaf,
  Param,
  MatMul,
  Linear,
  BatchMatMul,
  BatchMatMulNT,
  Add,
  Sub,
  Mul,
  AddTrailing,
  MulTrailing,
  Scale,
  AddScalar,
  Sigmoid,
  Tanh,
  Relu,
  Gelu,
  Softmax,
  LayerNorm,
  Dropout,
  Concat,
  Slice,
  Reshape,
  RelGather,
  RelTable,
  BroadcastLeading,
  Sum,
  Mean,
};

class Tape;

/// Handle to a node on a tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t dim(int axis) const { return value().dim(axis); }
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, const Tensor& grad_out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  /// Leaf node bound to `p`; repeated calls return the same node.
  Var param(Parameter& p);
  Var record(OpKind kind, Tensor value, std::vector<std::size_t> inputs, Backward backward);

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  OpKind kind(std::size_t id) const { return nodes_[id].kind; }
  const std::vector<std::size_t>& inputs(std::size_t id) const { return nodes_[id].inputs; }
  std::size_t size() const { return nodes_.size(); }

  /// Gradient buffer of node `id`, zero-initialised on first access.
  Tensor& grad_buffer(std::size_t id);
  /// Gradient accumulated so far for node `id` (empty if none reached it).
  const Tensor& grad(std::size_t id) const { return nodes_[id].grad; }

  /// Reverse sweep from a scalar loss; adds d loss / d theta into Parameter::grad.
  void backward(Var loss);

 private:
  struct Node {
    OpKind kind = OpKind::Leaf;
    Tensor value;
    Tensor grad;
    std::vector<std::size_t> inputs;
    Backward backward;
    Parameter* param = nullptr;
    bool requires_grad = false;
  };

  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, std::size_t> param_nodes_;
};

// --- primitives -----------------------------------------------------------

/// a[m x k] . b[k x n]
Var matmul(Var a, Var b);
/// x[... x in] . W^T + b, with W[out x in] and optional b[out].
Var linear(Var x, Var weight, std::optional<Var> bias = std::nullopt);
/// Batched a[B x m x k] . b[B x k x n].
Var bmm(Var a, Var b);
/// Batched a[B x m x k] . b[B x n x k]^T.
Var bmm_nt(Var a, Var b);

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
/// x + y where y's shape equals the trailing axes of x (explicit bias broadcast).
Var add_trailing(Var x, Var y);
/// x * y where y's shape equals the trailing axes of x.
Var mul_trailing(Var x, Var y);
Var scale(Var x, double c);
Var add_scalar(Var x, double c);
/// 1 - x
Var one_minus(Var x);
Var sigmoid(Var x);
Var tanh(Var x);
Var relu(Var x);
Var gelu(Var x);

enum class PointwiseKind { Add, Sub, Mul, Sigmoid, Tanh, Relu, Gelu };
PointwiseKind parse_pointwise_kind(std::string_view name);
Var pointwise(PointwiseKind kind, std::span<const Var> operands);

enum class Activation { Relu, Gelu, Tanh };
Activation parse_activation(std::string_view name);
std::string to_string(Activation a);
Var activate(Activation a, Var x);

/// Softmax over the last axis. `additive_mask` (entries 0 or -inf) has the
/// shape of x's trailing axes; masked entries come out exactly 0.
Var softmax_lastaxis(Var x, const std::optional<Tensor>& additive_mask = std::nullopt);

inline constexpr double kLayerNormEps = 1e-5;
Var layer_norm(Var x, Var gamma, Var beta, double eps = kLayerNormEps);

/// Inverted dropout: survivors are scaled by 1/(1-p) in training, identity in eval.
Var dropout(Var x, double p, Mode mode, Rng& rng);

Var concat(std::span<const Var> parts, int axis);
Var slice(Var x, int axis, std::size_t start, std::size_t length);
Var reshape(Var x, Shape shape);

/// out[..., i, j] = x[..., i, |i + offset - j|] for x[... x T1 x R], j < t2.
Var rel_gather(Var x, std::size_t t2, std::size_t offset = 0);
/// out[i, j] = w[|i + offset - j|] for w[R], output [t1 x t2].
Var rel_table(Var w, std::size_t t1, std::size_t t2, std::size_t offset = 0);
/// Stacks n copies of x along a new leading axis.
Var broadcast_leading(Var x, std::size_t n);

Var sum(Var x);
Var mean(Var x);

// --- gradient checking ----------------------------------------------------

struct GradCheckEntry {
  std::string name;
  double rel_error = 0.0;
  double analytic_norm = 0.0;
  double numeric_norm = 0.0;
  bool pass = false;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  bool pass() const { return max_rel_error < tolerance; }
};

/// Compares tape gradients with central differences over every trainable
/// parameter. Per parameter the error is ||g_tape - g_fd|| / (||g_tape|| + ||g_fd||).
GradCheckReport grad_check(ParameterStore& params, const std::function<Var(Tape&)>& loss_fn, double tolerance,
                           double step = 1e-5);

}  // namespace seqmech
