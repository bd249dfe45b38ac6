#include "seqmech/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace seqmech {

// --- ParameterStore -------------------------------------------------------

Parameter& ParameterStore::add(std::string name, Tensor value, bool trainable) {
  if (index_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  auto p = std::make_unique<Parameter>();
  p->name = name;
  p->grad = Tensor(value.shape());
  p->value = std::move(value);
  p->trainable = trainable;
  Parameter* raw = p.get();
  params_.push_back(std::move(p));
  index_.emplace(std::move(name), raw);
  return *raw;
}

Parameter* ParameterStore::find(std::string_view name) {
  auto it = index_.find(std::string(name));
  return it == index_.end() ? nullptr : it->second;
}

const Parameter* ParameterStore::find(std::string_view name) const {
  auto it = index_.find(std::string(name));
  return it == index_.end() ? nullptr : it->second;
}

Parameter& ParameterStore::get(std::string_view name) {
  if (auto* p = find(name)) return *p;
  throw std::out_of_range("unknown parameter: " + std::string(name));
}

const Parameter& ParameterStore::get(std::string_view name) const {
  if (const auto* p = find(name)) return *p;
  throw std::out_of_range("unknown parameter: " + std::string(name));
}

std::vector<Parameter*> ParameterStore::all() {
  std::vector<Parameter*> out;
  out.reserve(params_.size());
  for (auto& p : params_) out.push_back(p.get());
  return out;
}

std::vector<const Parameter*> ParameterStore::all() const {
  std::vector<const Parameter*> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(p.get());
  return out;
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p->value.size();
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& p : params_) p->grad.fill(0.0);
}

// --- Tape -----------------------------------------------------------------

const Tensor& Var::value() const { return tape->value(id); }

Var Tape::constant(Tensor value) {
  Node n;
  n.kind = OpKind::Leaf;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var{this, nodes_.size() - 1};
}

Var Tape::param(Parameter& p) {
  if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return Var{this, it->second};
  Node n;
  n.kind = OpKind::Param;
  n.value = p.value;
  n.param = &p;
  n.requires_grad = p.trainable;
  nodes_.push_back(std::move(n));
  param_nodes_.emplace(&p, nodes_.size() - 1);
  return Var{this, nodes_.size() - 1};
}

namespace {
const char* op_name(OpKind k) {
  switch (k) {
    case OpKind::Leaf: return "leaf";
    case OpKind::Param: return "param";
    case OpKind::MatMul: return "matmul";
    case OpKind::Linear: return "linear";
    case OpKind::BatchMatMul: return "bmm";
    case OpKind::BatchMatMulNT: return "bmm_nt";
    case OpKind::Add: return "add";
    case OpKind::Sub: return "sub";
    case OpKind::Mul: return "mul";
    case OpKind::AddTrailing: return "add_trailing";
    case OpKind::MulTrailing: return "mul_trailing";
    case OpKind::Scale: return "scale";
    case OpKind::AddScalar: return "add_scalar";
    case OpKind::Sigmoid: return "sigmoid";
    case OpKind::Tanh: return "tanh";
    case OpKind::Relu: return "relu";
    case OpKind::Gelu: return "gelu";
    case OpKind::Softmax: return "softmax";
    case OpKind::LayerNorm: return "layer_norm";
    case OpKind::Dropout: return "dropout";
    case OpKind::Concat: return "concat";
    case OpKind::Slice: return "slice";
    case OpKind::Reshape: return "reshape";
    case OpKind::RelGather: return "rel_gather";
    case OpKind::RelTable: return "rel_table";
    case OpKind::BroadcastLeading: return "broadcast_leading";
    case OpKind::Sum: return "sum";
    case OpKind::Mean: return "mean";
  }
  return "?";
}
}  // namespace

Var Tape::record(OpKind kind, Tensor value, std::vector<std::size_t> inputs, Backward backward) {
  if (!value.all_finite()) {
    throw NonFiniteError(std::string("non-finite value produced by ") + op_name(kind));
  }
  Node n;
  n.kind = kind;
  n.value = std::move(value);
  n.requires_grad = std::any_of(inputs.begin(), inputs.end(), [&](std::size_t i) { return nodes_[i].requires_grad; });
  if (n.requires_grad) n.backward = std::move(backward);
  n.inputs = std::move(inputs);
  nodes_.push_back(std::move(n));
  return Var{this, nodes_.size() - 1};
}

Tensor& Tape::grad_buffer(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty() && !n.value.empty()) n.grad = Tensor(n.value.shape());
  if (n.grad.shape() != n.value.shape()) n.grad = Tensor(n.value.shape());
  return n.grad;
}

void Tape::backward(Var loss) {
  if (loss.tape != this) throw std::invalid_argument("backward: loss belongs to another tape");
  if (nodes_[loss.id].value.size() != 1) {
    throw DimensionError("backward requires a scalar loss, got " + shape_str(nodes_[loss.id].value.shape()));
  }
  grad_buffer(loss.id)[0] += 1.0;
  for (std::size_t k = loss.id + 1; k-- > 0;) {
    Node& n = nodes_[k];
    if (!n.requires_grad || n.grad.empty()) continue;
    if (n.backward) n.backward(*this, n.grad);
    if (n.param) {
      auto& g = n.param->grad;
      if (g.shape() != n.value.shape()) g = Tensor(n.value.shape());
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    }
  }
}

// --- kernels --------------------------------------------------------------

namespace {

// C[m x n] += A[m x k] B[k x n]
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c) {
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    const double* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      if (av == 0.0) continue;
      const double* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

// C[m x n] += A[m x k] B[n x k]^T
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    double* ci = c + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      const double* bj = b + j * k;
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += ai[p] * bj[p];
      ci[j] += s;
    }
  }
}

// C[m x n] += A[k x m]^T B[k x n]
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c) {
  for (std::size_t p = 0; p < k; ++p) {
    const double* ap = a + p * m;
    const double* bp = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double av = ap[i];
      if (av == 0.0) continue;
      double* ci = c + i * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

void require_same_tape(Var a, Var b) {
  if (a.tape != b.tape || a.tape == nullptr) throw std::invalid_argument("operands live on different tapes");
}

void require_same_shape(const char* op, Var a, Var b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

}  // namespace

Var matmul(Var a, Var b) {
  require_same_tape(a, b);
  const auto& av = a.value();
  const auto& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0)) {
    throw DimensionError("matmul: incompatible shapes " + shape_str(av.shape()) + " and " + shape_str(bv.shape()));
  }
  const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  Tensor out(Shape{m, n});
  gemm_nn(m, n, k, av.storage().data(), bv.storage().data(), out.storage().data());
  const std::size_t ai = a.id, bi = b.id;
  return a.tape->record(OpKind::MatMul, std::move(out), {ai, bi}, [ai, bi, m, n, k](Tape& t, const Tensor& g) {
    if (t.requires_grad(ai)) gemm_nt(m, k, n, g.storage().data(), t.value(bi).storage().data(), t.grad_buffer(ai).storage().data());
    if (t.requires_grad(bi)) gemm_tn(k, n, m, t.value(ai).storage().data(), g.storage().data(), t.grad_buffer(bi).storage().data());
  });
}

Var linear(Var x, Var weight, std::optional<Var> bias) {
  require_same_tape(x, weight);
  const auto& xv = x.value();
  const auto& wv = weight.value();
  if (xv.rank() < 1 || wv.rank() != 2 || xv.dim(-1) != wv.dim(1)) {
    throw DimensionError("linear: input " + shape_str(xv.shape()) + " incompatible with weight " + shape_str(wv.shape()));
  }
  const std::size_t in = wv.dim(1), outd = wv.dim(0), rows = xv.size() / in;
  if (bias) {
    require_same_tape(x, *bias);
    if (bias->value().shape() != Shape{outd}) {
      throw DimensionError("linear: bias " + shape_str(bias->value().shape()) + " does not match output " +
                           std::to_string(outd));
    }
  }
  Shape os = xv.shape();
  os.back() = outd;
  Tensor out(os);
  if (bias) {
    const auto& bv = bias->value();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < outd; ++j) out[r * outd + j] = bv[j];
  }
  gemm_nt(rows, outd, in, xv.storage().data(), wv.storage().data(), out.storage().data());
  const std::size_t xi = x.id, wi = weight.id;
  std::vector<std::size_t> inputs{xi, wi};
  std::optional<std::size_t> bi;
  if (bias) {
    bi = bias->id;
    inputs.push_back(*bi);
  }
  return x.tape->record(OpKind::Linear, std::move(out), std::move(inputs),
                        [xi, wi, bi, rows, in, outd](Tape& t, const Tensor& g) {
                          if (t.requires_grad(xi))
                            gemm_nn(rows, in, outd, g.storage().data(), t.value(wi).storage().data(),
                                    t.grad_buffer(xi).storage().data());
                          if (t.requires_grad(wi))
                            gemm_tn(outd, in, rows, g.storage().data(), t.value(xi).storage().data(),
                                    t.grad_buffer(wi).storage().data());
                          if (bi && t.requires_grad(*bi)) {
                            auto& gb = t.grad_buffer(*bi);
                            for (std::size_t r = 0; r < rows; ++r)
                              for (std::size_t j = 0; j < outd; ++j) gb[j] += g[r * outd + j];
                          }
                        });
}

Var bmm(Var a, Var b) {
  require_same_tape(a, b);
  const auto& av = a.value();
  const auto& bv = b.value();
  if (av.rank() != 3 || bv.rank() != 3 || av.dim(0) != bv.dim(0) || av.dim(2) != bv.dim(1)) {
    throw DimensionError("bmm: incompatible shapes " + shape_str(av.shape()) + " and " + shape_str(bv.shape()));
  }
  const std::size_t B = av.dim(0), m = av.dim(1), k = av.dim(2), n = bv.dim(2);
  Tensor out(Shape{B, m, n});
  for (std::size_t s = 0; s < B; ++s)
    gemm_nn(m, n, k, av.storage().data() + s * m * k, bv.storage().data() + s * k * n, out.storage().data() + s * m * n);
  const std::size_t ai = a.id, bi = b.id;
  return a.tape->record(OpKind::BatchMatMul, std::move(out), {ai, bi}, [ai, bi, B, m, n, k](Tape& t, const Tensor& g) {
    for (std::size_t s = 0; s < B; ++s) {
      const double* gs = g.storage().data() + s * m * n;
      if (t.requires_grad(ai))
        gemm_nt(m, k, n, gs, t.value(bi).storage().data() + s * k * n, t.grad_buffer(ai).storage().data() + s * m * k);
      if (t.requires_grad(bi))
        gemm_tn(k, n, m, t.value(ai).storage().data() + s * m * k, gs, t.grad_buffer(bi).storage().data() + s * k * n);
    }
  });
}

Var bmm_nt(Var a, Var b) {
  require_same_tape(a, b);
  const auto& av = a.value();
  const auto& bv = b.value();
  if (av.rank() != 3 || bv.rank() != 3 || av.dim(0) != bv.dim(0) || av.dim(2) != bv.dim(2)) {
    throw DimensionError("bmm_nt: incompatible shapes " + shape_str(av.shape()) + " and " + shape_str(bv.shape()));
  }
  const std::size_t B = av.dim(0), m = av.dim(1), k = av.dim(2), n = bv.dim(1);
  Tensor out(Shape{B, m, n});
  for (std::size_t s = 0; s < B; ++s)
    gemm_nt(m, n, k, av.storage().data() + s * m * k, bv.storage().data() + s * n * k, out.storage().data() + s * m * n);
  const std::size_t ai = a.id, bi = b.id;
  return a.tape->record(OpKind::BatchMatMulNT, std::move(out), {ai, bi}, [ai, bi, B, m, n, k](Tape& t, const Tensor& g) {
    for (std::size_t s = 0; s < B; ++s) {
      const double* gs = g.storage().data() + s * m * n;
      // dA = G B, dB = G^T A
      if (t.requires_grad(ai))
        gemm_nn(m, k, n, gs, t.value(bi).storage().data() + s * n * k, t.grad_buffer(ai).storage().data() + s * m * k);
      if (t.requires_grad(bi))
        gemm_tn(n, k, m, gs, t.value(ai).storage().data() + s * m * k, t.grad_buffer(bi).storage().data() + s * n * k);
    }
  });
}

Var add(Var a, Var b) {
  require_same_tape(a, b);
  require_same_shape("add", a, b);
  Tensor out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  const std::size_t ai = a.id, bi = b.id;
  return a.tape->record(OpKind::Add, std::move(out), {ai, bi}, [ai, bi](Tape& t, const Tensor& g) {
    for (std::size_t id : {ai, bi}) {
      if (!t.requires_grad(id)) continue;
      auto& gb = t.grad_buffer(id);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
    }
  });
}

Var sub(Var a, Var b) {
  require_same_tape(a, b);
  require_same_shape("sub", a, b);
  Tensor out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  const std::size_t ai = a.id, bi = b.id;
  return a.tape->record(OpKind::Sub, std::move(out), {ai, bi}, [ai, bi](Tape& t, const Tensor& g) {
    if (t.requires_grad(ai)) {
      auto& ga = t.grad_buffer(ai);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (t.requires_grad(bi)) {
      auto& gb = t.grad_buffer(bi);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

Var mul(Var a, Var b) {
  require_same_tape(a, b);
  require_same_shape("mul", a, b);
  Tensor out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  const std::size_t ai = a.id, bi = b.id;
  return a.tape->record(OpKind::Mul, std::move(out), {ai, bi}, [ai, bi](Tape& t, const Tensor& g) {
    if (t.requires_grad(ai)) {
      const auto& bv = t.value(bi);
      auto& ga = t.grad_buffer(ai);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (t.requires_grad(bi)) {
      const auto& av = t.value(ai);
      auto& gb = t.grad_buffer(bi);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

Var add_trailing(Var x, Var y) {
  require_same_tape(x, y);
  const auto& xs = x.shape();
  const auto& ys = y.shape();
  bool ok = ys.size() <= xs.size();
  for (std::size_t i = 0; ok && i < ys.size(); ++i) ok = ys[ys.size() - 1 - i] == xs[xs.size() - 1 - i];
  if (!ok) throw DimensionError("add_trailing: " + shape_str(ys) + " is not a suffix of " + shape_str(xs));
  Tensor out = x.value();
  const auto& yv = y.value();
  const std::size_t n = yv.size();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += yv[i % n];
  const std::size_t xi = x.id, yi = y.id;
  return x.tape->record(OpKind::AddTrailing, std::move(out), {xi, yi}, [xi, yi, n](Tape& t, const Tensor& g) {
    if (t.requires_grad(xi)) {
      auto& gx = t.grad_buffer(xi);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    }
    if (t.requires_grad(yi)) {
      auto& gy = t.grad_buffer(yi);
      for (std::size_t i = 0; i < g.size(); ++i) gy[i % n] += g[i];
    }
  });
}

Var mul_trailing(Var x, Var y) {
  require_same_tape(x, y);
  const auto& xs = x.shape();
  const auto& ys = y.shape();
  bool ok = ys.size() <= xs.size();
  for (std::size_t i = 0; ok && i < ys.size(); ++i) ok = ys[ys.size() - 1 - i] == xs[xs.size() - 1 - i];
  if (!ok) throw DimensionError("mul_trailing: " + shape_str(ys) + " is not a suffix of " + shape_str(xs));
  Tensor out = x.value();
  const auto& yv = y.value();
  const std::size_t n = yv.size();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= yv[i % n];
  const std::size_t xi = x.id, yi = y.id;
  return x.tape->record(OpKind::MulTrailing, std::move(out), {xi, yi}, [xi, yi, n](Tape& t, const Tensor& g) {
    if (t.requires_grad(xi)) {
      const auto& yv = t.value(yi);
      auto& gx = t.grad_buffer(xi);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * yv[i % n];
    }
    if (t.requires_grad(yi)) {
      const auto& xv = t.value(xi);
      auto& gy = t.grad_buffer(yi);
      for (std::size_t i = 0; i < g.size(); ++i) gy[i % n] += g[i] * xv[i];
    }
  });
}

Var scale(Var x, double c) {
  Tensor out = x.value();
  for (auto& v : out.storage()) v *= c;
  const std::size_t xi = x.id;
  return x.tape->record(OpKind::Scale, std::move(out), {xi}, [xi, c](Tape& t, const Tensor& g) {
    auto& gx = t.grad_buffer(xi);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += c * g[i];
  });
}

Var add_scalar(Var x, double c) {
  Tensor out = x.value();
  for (auto& v : out.storage()) v += c;
  const std::size_t xi = x.id;
  return x.tape->record(OpKind::AddScalar, std::move(out), {xi}, [xi](Tape& t, const Tensor& g) {
    auto& gx = t.grad_buffer(xi);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

Var one_minus(Var x) { return add_scalar(scale(x, -1.0), 1.0); }

namespace {
double sigmoid_scalar(double v) {
  if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

// Output-based derivative: f'(x) expressed through y = f(x).
template <typename Fwd, typename DerivFromY>
Var elementwise_y(Var x, OpKind kind, Fwd fwd, DerivFromY dy) {
  const auto& xv = x.value();
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = fwd(xv[i]);
  const std::size_t xi = x.id;
  Tape& tape = *x.tape;
  const std::size_t yi = tape.size();
  return tape.record(kind, std::move(out), {xi}, [xi, yi, dy](Tape& t, const Tensor& g) {
    const auto& yv = t.value(yi);
    auto& gx = t.grad_buffer(xi);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * dy(yv[i]);
  });
}

template <typename Fwd, typename DerivFromX>
Var elementwise_x(Var x, OpKind kind, Fwd fwd, DerivFromX dx) {
  const auto& xv = x.value();
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = fwd(xv[i]);
  const std::size_t xi = x.id;
  return x.tape->record(kind, std::move(out), {xi}, [xi, dx](Tape& t, const Tensor& g) {
    const auto& xv = t.value(xi);
    auto& gx = t.grad_buffer(xi);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * dx(xv[i]);
  });
}
}  // namespace

Var sigmoid(Var x) {
  return elementwise_y(x, OpKind::Sigmoid, sigmoid_scalar, [](double y) { return y * (1.0 - y); });
}

Var tanh(Var x) {
  return elementwise_y(x, OpKind::Tanh, [](double v) { return std::tanh(v); }, [](double y) { return 1.0 - y * y; });
}

Var relu(Var x) {
  return elementwise_x(x, OpKind::Relu, [](double v) { return v > 0 ? v : 0.0; }, [](double v) { return v > 0 ? 1.0 : 0.0; });
}

Var gelu(Var x) {
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  const double inv_sqrt2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
  return elementwise_x(
      x, OpKind::Gelu, [](double v) { return 0.5 * v * (1.0 + std::erf(v * inv_sqrt2)); },
      [inv_sqrt2pi](double v) { return 0.5 * (1.0 + std::erf(v * inv_sqrt2)) + v * inv_sqrt2pi * std::exp(-0.5 * v * v); });
}

PointwiseKind parse_pointwise_kind(std::string_view name) {
  if (name == "add") return PointwiseKind::Add;
  if (name == "sub") return PointwiseKind::Sub;
  if (name == "mul") return PointwiseKind::Mul;
  if (name == "sigmoid") return PointwiseKind::Sigmoid;
  if (name == "tanh") return PointwiseKind::Tanh;
  if (name == "relu") return PointwiseKind::Relu;
  if (name == "gelu") return PointwiseKind::Gelu;
  throw std::invalid_argument("unknown pointwise kind: " + std::string(name));
}

Var pointwise(PointwiseKind kind, std::span<const Var> operands) {
  const bool binary = kind == PointwiseKind::Add || kind == PointwiseKind::Sub || kind == PointwiseKind::Mul;
  if (operands.size() != (binary ? 2u : 1u)) throw std::invalid_argument("pointwise: wrong operand count");
  switch (kind) {
    case PointwiseKind::Add: return add(operands[0], operands[1]);
    case PointwiseKind::Sub: return sub(operands[0], operands[1]);
    case PointwiseKind::Mul: return mul(operands[0], operands[1]);
    case PointwiseKind::Sigmoid: return sigmoid(operands[0]);
    case PointwiseKind::Tanh: return tanh(operands[0]);
    case PointwiseKind::Relu: return relu(operands[0]);
    case PointwiseKind::Gelu: return gelu(operands[0]);
  }
  throw std::invalid_argument("pointwise: unknown kind");
}

Activation parse_activation(std::string_view name) {
  if (name == "relu") return Activation::Relu;
  if (name == "gelu") return Activation::Gelu;
  if (name == "tanh") return Activation::Tanh;
  throw std::invalid_argument("unknown activation: " + std::string(name));
}

std::string to_string(Activation a) {
  switch (a) {
    case Activation::Relu: return "relu";
    case Activation::Gelu: return "gelu";
    case Activation::Tanh: return "tanh";
  }
  return "?";
}

Var activate(Activation a, Var x) {
  switch (a) {
    case Activation::Relu: return relu(x);
    case Activation::Gelu: return gelu(x);
    case Activation::Tanh: return tanh(x);
  }
  return x;
}

Var softmax_lastaxis(Var x, const std::optional<Tensor>& additive_mask) {
  const auto& xv = x.value();
  if (xv.rank() == 0) throw DimensionError("softmax on a scalar");
  const std::size_t n = xv.dim(-1);
  const std::size_t rows = n ? xv.size() / n : 0;
  std::size_t mask_rows = 0;
  if (additive_mask) {
    const auto& ms = additive_mask->shape();
    bool ok = !ms.empty() && ms.size() <= xv.rank();
    for (std::size_t i = 0; ok && i < ms.size(); ++i) ok = ms[ms.size() - 1 - i] == xv.shape()[xv.rank() - 1 - i];
    if (!ok) throw DimensionError("softmax mask " + shape_str(ms) + " incompatible with " + shape_str(xv.shape()));
    mask_rows = additive_mask->size() / n;
  }
  Tensor out(xv.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = xv.storage().data() + r * n;
    const double* mr = additive_mask ? additive_mask->storage().data() + (r % mask_rows) * n : nullptr;
    double* yr = out.storage().data() + r * n;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) {
      const double v = mr ? xr[j] + mr[j] : xr[j];
      if (v > mx) mx = v;
    }
    if (mx == -std::numeric_limits<double>::infinity()) throw std::domain_error("empty attention support");
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double v = mr ? xr[j] + mr[j] : xr[j];
      const double e = v == -std::numeric_limits<double>::infinity() ? 0.0 : std::exp(v - mx);
      yr[j] = e;
      s += e;
    }
    for (std::size_t j = 0; j < n; ++j) yr[j] /= s;
  }
  const std::size_t xi = x.id;
  const std::size_t yi = x.tape->size();
  return x.tape->record(OpKind::Softmax, std::move(out), {xi}, [xi, yi, n, rows](Tape& t, const Tensor& g) {
    const auto& yv = t.value(yi);
    auto& gx = t.grad_buffer(xi);
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t o = r * n;
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += g[o + j] * yv[o + j];
      for (std::size_t j = 0; j < n; ++j) gx[o + j] += yv[o + j] * (g[o + j] - dot);
    }
  });
}

Var layer_norm(Var x, Var gamma, Var beta, double eps) {
  require_same_tape(x, gamma);
  require_same_tape(x, beta);
  const auto& xv = x.value();
  if (xv.rank() == 0 || xv.dim(-1) == 0) throw DimensionError("layer_norm over an empty axis");
  const std::size_t d = xv.dim(-1);
  if (gamma.shape() != Shape{d} || beta.shape() != Shape{d}) {
    throw DimensionError("layer_norm: affine params must be [" + std::to_string(d) + "]");
  }
  const std::size_t rows = xv.size() / d;
  Tensor xhat(xv.shape());
  std::vector<double> inv_std(rows);
  Tensor out(xv.shape());
  const auto& gv = gamma.value();
  const auto& bv = beta.value();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = xv.storage().data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += xr[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (xr[j] - mu) * is;
      xhat[r * d + j] = h;
      out[r * d + j] = gv[j] * h + bv[j];
    }
  }
  const std::size_t xi = x.id, gi = gamma.id, bi = beta.id;
  return x.tape->record(OpKind::LayerNorm, std::move(out), {xi, gi, bi},
                        [xi, gi, bi, d, rows, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& t, const Tensor& g) {
                          const auto& gv = t.value(gi);
                          if (t.requires_grad(gi)) {
                            auto& gg = t.grad_buffer(gi);
                            for (std::size_t i = 0; i < g.size(); ++i) gg[i % d] += g[i] * xhat[i];
                          }
                          if (t.requires_grad(bi)) {
                            auto& gb = t.grad_buffer(bi);
                            for (std::size_t i = 0; i < g.size(); ++i) gb[i % d] += g[i];
                          }
                          if (t.requires_grad(xi)) {
                            auto& gx = t.grad_buffer(xi);
                            const double inv_d = 1.0 / static_cast<double>(d);
                            for (std::size_t r = 0; r < rows; ++r) {
                              const std::size_t o = r * d;
                              double m1 = 0.0, m2 = 0.0;
                              for (std::size_t j = 0; j < d; ++j) {
                                const double dh = g[o + j] * gv[j];
                                m1 += dh;
                                m2 += dh * xhat[o + j];
                              }
                              m1 *= inv_d;
                              m2 *= inv_d;
                              for (std::size_t j = 0; j < d; ++j) {
                                const double dh = g[o + j] * gv[j];
                                gx[o + j] += inv_std[r] * (dh - m1 - xhat[o + j] * m2);
                              }
                            }
                          }
                        });
}

Var dropout(Var x, double p, Mode mode, Rng& rng) {
  if (!(p >= 0.0) || p >= 1.0) throw std::invalid_argument("dropout probability must lie in [0, 1)");
  if (mode == Mode::Eval || p == 0.0) return x;
  const auto& xv = x.value();
  std::vector<double> keep(xv.size());
  const double s = 1.0 / (1.0 - p);
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) {
    keep[i] = rng.bernoulli(p) ? 0.0 : s;
    out[i] = xv[i] * keep[i];
  }
  const std::size_t xi = x.id;
  return x.tape->record(OpKind::Dropout, std::move(out), {xi}, [xi, keep = std::move(keep)](Tape& t, const Tensor& g) {
    auto& gx = t.grad_buffer(xi);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * keep[i];
  });
}

namespace {
std::size_t norm_axis(int axis, std::size_t rank) {
  const int r = static_cast<int>(rank);
  const int a = axis < 0 ? r + axis : axis;
  if (a < 0 || a >= r) throw DimensionError("axis " + std::to_string(axis) + " out of range for rank " + std::to_string(rank));
  return static_cast<std::size_t>(a);
}

// outer = product of extents before axis, inner = product after axis
std::pair<std::size_t, std::size_t> outer_inner(const Shape& s, std::size_t axis) {
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  return {outer, inner};
}
}  // namespace

Var concat(std::span<const Var> parts, int axis) {
  if (parts.empty()) throw std::invalid_argument("concat of nothing");
  const Shape& s0 = parts[0].shape();
  const std::size_t ax = norm_axis(axis, s0.size());
  Shape os = s0;
  os[ax] = 0;
  std::vector<std::size_t> extents;
  std::vector<std::size_t> ids;
  for (const Var& p : parts) {
    require_same_tape(parts[0], p);
    const Shape& s = p.shape();
    bool ok = s.size() == s0.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = i == ax || s[i] == s0[i];
    if (!ok) throw DimensionError("concat: " + shape_str(s) + " incompatible with " + shape_str(s0));
    extents.push_back(s[ax]);
    os[ax] += s[ax];
    ids.push_back(p.id);
  }
  const auto [outer, inner] = outer_inner(os, ax);
  const std::size_t total = os[ax];
  Tensor out(os);
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& v = parts[k].value();
    const std::size_t e = extents[k];
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(v.storage().data() + o * e * inner, e * inner, out.storage().data() + (o * total + off) * inner);
    off += e;
  }
  return parts[0].tape->record(OpKind::Concat, std::move(out), ids,
                               [ids, extents, outer = outer, inner = inner, total](Tape& t, const Tensor& g) {
                                 std::size_t off = 0;
                                 for (std::size_t k = 0; k < ids.size(); ++k) {
                                   const std::size_t e = extents[k];
                                   if (t.requires_grad(ids[k])) {
                                     auto& gp = t.grad_buffer(ids[k]);
                                     for (std::size_t o = 0; o < outer; ++o)
                                       for (std::size_t i = 0; i < e * inner; ++i)
                                         gp[o * e * inner + i] += g[(o * total + off) * inner + i];
                                   }
                                   off += e;
                                 }
                               });
}

Var slice(Var x, int axis, std::size_t start, std::size_t length) {
  const Shape& s = x.shape();
  const std::size_t ax = norm_axis(axis, s.size());
  if (start + length > s[ax]) {
    throw DimensionError("slice [" + std::to_string(start) + ", " + std::to_string(start + length) + ") out of range for " +
                         shape_str(s));
  }
  Shape os = s;
  os[ax] = length;
  const auto [outer, inner] = outer_inner(s, ax);
  const std::size_t full = s[ax];
  Tensor out(os);
  const auto& xv = x.value();
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(xv.storage().data() + (o * full + start) * inner, length * inner, out.storage().data() + o * length * inner);
  const std::size_t xi = x.id;
  return x.tape->record(OpKind::Slice, std::move(out), {xi},
                        [xi, outer = outer, inner = inner, full, start, length](Tape& t, const Tensor& g) {
                          auto& gx = t.grad_buffer(xi);
                          for (std::size_t o = 0; o < outer; ++o)
                            for (std::size_t i = 0; i < length * inner; ++i)
                              gx[(o * full + start) * inner + i] += g[o * length * inner + i];
                        });
}

Var reshape(Var x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  const std::size_t xi = x.id;
  return x.tape->record(OpKind::Reshape, std::move(out), {xi}, [xi](Tape& t, const Tensor& g) {
    auto& gx = t.grad_buffer(xi);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

namespace {
std::size_t rel_distance(std::size_t i, std::size_t offset, std::size_t j) {
  const std::size_t qi = i + offset;
  return qi >= j ? qi - j : j - qi;
}
}  // namespace

Var rel_gather(Var x, std::size_t t2, std::size_t offset) {
  const auto& xv = x.value();
  if (xv.rank() < 2) throw DimensionError("rel_gather needs rank >= 2, got " + shape_str(xv.shape()));
  const std::size_t t1 = xv.dim(-2), r = xv.dim(-1);
  const std::size_t batch = xv.size() / (t1 * r);
  for (std::size_t i = 0; i < t1; ++i)
    for (std::size_t j = 0; j < t2; ++j)
      if (rel_distance(i, offset, j) >= r) {
        throw DimensionError("relative distance " + std::to_string(rel_distance(i, offset, j)) + " out of range (table " +
                             std::to_string(r) + ")");
      }
  Shape os = xv.shape();
  os.back() = t2;
  Tensor out(os);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t i = 0; i < t1; ++i)
      for (std::size_t j = 0; j < t2; ++j)
        out[(b * t1 + i) * t2 + j] = xv[(b * t1 + i) * r + rel_distance(i, offset, j)];
  const std::size_t xi = x.id;
  return x.tape->record(OpKind::RelGather, std::move(out), {xi}, [xi, batch, t1, t2, r, offset](Tape& t, const Tensor& g) {
    auto& gx = t.grad_buffer(xi);
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t i = 0; i < t1; ++i)
        for (std::size_t j = 0; j < t2; ++j) gx[(b * t1 + i) * r + rel_distance(i, offset, j)] += g[(b * t1 + i) * t2 + j];
  });
}

Var rel_table(Var w, std::size_t t1, std::size_t t2, std::size_t offset) {
  const auto& wv = w.value();
  if (wv.rank() != 1) throw DimensionError("rel_table expects a vector, got " + shape_str(wv.shape()));
  const std::size_t r = wv.size();
  Tensor out(Shape{t1, t2});
  for (std::size_t i = 0; i < t1; ++i)
    for (std::size_t j = 0; j < t2; ++j) {
      const std::size_t dist = rel_distance(i, offset, j);
      if (dist >= r) {
        throw DimensionError("relative distance " + std::to_string(dist) + " out of range (table " + std::to_string(r) + ")");
      }
      out[i * t2 + j] = wv[dist];
    }
  const std::size_t wi = w.id;
  return w.tape->record(OpKind::RelTable, std::move(out), {wi}, [wi, t1, t2, offset](Tape& t, const Tensor& g) {
    auto& gw = t.grad_buffer(wi);
    for (std::size_t i = 0; i < t1; ++i)
      for (std::size_t j = 0; j < t2; ++j) gw[rel_distance(i, offset, j)] += g[i * t2 + j];
  });
}

Var broadcast_leading(Var x, std::size_t n) {
  const auto& xv = x.value();
  Shape os{n};
  os.insert(os.end(), xv.shape().begin(), xv.shape().end());
  Tensor out(os);
  const std::size_t m = xv.size();
  for (std::size_t k = 0; k < n; ++k) std::copy_n(xv.storage().data(), m, out.storage().data() + k * m);
  const std::size_t xi = x.id;
  return x.tape->record(OpKind::BroadcastLeading, std::move(out), {xi}, [xi, n, m](Tape& t, const Tensor& g) {
    auto& gx = t.grad_buffer(xi);
    for (std::size_t k = 0; k < n; ++k)
      for (std::size_t i = 0; i < m; ++i) gx[i] += g[k * m + i];
  });
}

Var sum(Var x) {
  double s = 0.0;
  for (double v : x.value().storage()) s += v;
  const std::size_t xi = x.id;
  return x.tape->record(OpKind::Sum, Tensor::scalar(s), {xi}, [xi](Tape& t, const Tensor& g) {
    auto& gx = t.grad_buffer(xi);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[0];
  });
}

Var mean(Var x) {
  const std::size_t n = x.value().size();
  if (n == 0) throw DimensionError("mean of an empty tensor");
  double s = 0.0;
  for (double v : x.value().storage()) s += v;
  const std::size_t xi = x.id;
  return x.tape->record(OpKind::Mean, Tensor::scalar(s / static_cast<double>(n)), {xi}, [xi, n](Tape& t, const Tensor& g) {
    auto& gx = t.grad_buffer(xi);
    const double c = g[0] / static_cast<double>(n);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += c;
  });
}

// --- gradient check -------------------------------------------------------

GradCheckReport grad_check(ParameterStore& params, const std::function<Var(Tape&)>& loss_fn, double tolerance,
                           double step) {
  GradCheckReport report;
  report.tolerance = tolerance;
  params.zero_grad();
  {
    Tape tape;
    Var loss = loss_fn(tape);
    tape.backward(loss);
  }
  auto eval = [&]() {
    Tape tape;
    return loss_fn(tape).value().item();
  };
  for (Parameter* p : params.all()) {
    if (!p->trainable) continue;
    double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double orig = p->value[i];
      p->value[i] = orig + step;
      const double lp = eval();
      p->value[i] = orig - step;
      const double lm = eval();
      p->value[i] = orig;
      const double numeric = (lp - lm) / (2.0 * step);
      const double analytic = p->grad[i];
      diff2 += (numeric - analytic) * (numeric - analytic);
      a2 += analytic * analytic;
      n2 += numeric * numeric;
    }
    const double denom = std::sqrt(a2) + std::sqrt(n2);
    GradCheckEntry e;
    e.name = p->name;
    e.analytic_norm = std::sqrt(a2);
    e.numeric_norm = std::sqrt(n2);
    e.rel_error = denom < 1e-300 ? 0.0 : std::sqrt(diff2) / denom;
    e.pass = e.rel_error < tolerance;
    report.max_rel_error = std::max(report.max_rel_error, e.rel_error);
    report.entries.push_back(std::move(e));
  }
  return report;
}

}  // namespace seqmech
