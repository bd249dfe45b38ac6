#include "seqmech/attention.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace seqmech::attention {

std::string to_string(BiasKind kind) {
  switch (kind) {
    case BiasKind::None: return "none";
    case BiasKind::Independent: return "I";
    case BiasKind::Dependent: return "D";
  }
  return "?";
}

BiasKind parse_bias_kind(std::string_view s) {
  if (s == "none" || s == "None") return BiasKind::None;
  if (s == "I") return BiasKind::Independent;
  if (s == "D") return BiasKind::Dependent;
  throw std::invalid_argument("unknown relative bias kind '" + std::string(s) + "' (expected none, I or D)");
}

void AttentionSpec::validate() const {
  if (d == 0 || heads == 0 || d % heads != 0) {
    throw std::invalid_argument("attention heads (" + std::to_string(heads) + ") must divide model dim (" +
                                std::to_string(d) + ")");
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) throw std::invalid_argument("attention dropout must lie in [0, 1)");
  if (bias != BiasKind::None && max_len == 0) throw std::invalid_argument("relative bias requires max_len > 0");
}

namespace {
Tensor uniform(Shape shape, double bound, Rng rng) {
  Tensor t(std::move(shape));
  for (auto& v : t.storage()) v = rng.uniform(-bound, bound);
  return t;
}
}  // namespace

AttentionParams attention_init(const AttentionSpec& spec, ParameterStore& store, const std::string& prefix,
                               const Rng& rng) {
  spec.validate();
  const std::size_t d = spec.d, src = spec.source_dim(), dk = spec.dk();
  const double in_q = 1.0 / std::sqrt(static_cast<double>(d));
  const double in_kv = 1.0 / std::sqrt(static_cast<double>(src));
  AttentionParams p;
  p.wq = &store.add(prefix + ".Wq", uniform({d, d}, in_q, rng.derive(prefix + ".Wq")));
  p.wk = &store.add(prefix + ".Wk", uniform({d, src}, in_kv, rng.derive(prefix + ".Wk")));
  p.wv = &store.add(prefix + ".Wv", uniform({d, src}, in_kv, rng.derive(prefix + ".Wv")));
  p.wo = &store.add(prefix + ".Wo", uniform({d, d}, in_q, rng.derive(prefix + ".Wo")));
  p.bo = &store.add(prefix + ".bo", Tensor(Shape{d}));
  if (spec.bias == BiasKind::Independent) {
    for (std::size_t h = 0; h < spec.heads; ++h)
      p.omega.push_back(&store.add(prefix + ".omega." + std::to_string(h), Tensor(Shape{spec.max_len})));
  } else if (spec.bias == BiasKind::Dependent) {
    const double b = 1.0 / std::sqrt(static_cast<double>(dk));
    p.r = &store.add(prefix + ".r", uniform({spec.max_len, dk}, b, rng.derive(prefix + ".r")));
    for (std::size_t h = 0; h < spec.heads; ++h) {
      p.u.push_back(&store.add(prefix + ".u." + std::to_string(h), Tensor(Shape{dk})));
      p.v.push_back(&store.add(prefix + ".v." + std::to_string(h), Tensor(Shape{dk})));
    }
  }
  return p;
}

AttentionParams attention_bind(const AttentionSpec& spec, ParameterStore& store, const std::string& prefix) {
  spec.validate();
  AttentionParams p;
  p.wq = &store.get(prefix + ".Wq");
  p.wk = &store.get(prefix + ".Wk");
  p.wv = &store.get(prefix + ".Wv");
  p.wo = &store.get(prefix + ".Wo");
  p.bo = &store.get(prefix + ".bo");
  if (spec.bias == BiasKind::Independent) {
    for (std::size_t h = 0; h < spec.heads; ++h) p.omega.push_back(&store.get(prefix + ".omega." + std::to_string(h)));
  } else if (spec.bias == BiasKind::Dependent) {
    p.r = &store.get(prefix + ".r");
    for (std::size_t h = 0; h < spec.heads; ++h) {
      p.u.push_back(&store.get(prefix + ".u." + std::to_string(h)));
      p.v.push_back(&store.get(prefix + ".v." + std::to_string(h)));
    }
  }
  return p;
}

Tensor causal_mask(std::size_t t) { return causal_mask(t, t, 0); }

Tensor causal_mask(std::size_t t1, std::size_t t2, std::size_t offset) {
  Tensor m(Shape{t1, t2});
  for (std::size_t i = 0; i < t1; ++i)
    for (std::size_t j = 0; j < t2; ++j)
      if (j > i + offset) m[i * t2 + j] = -std::numeric_limits<double>::infinity();
  return m;
}

namespace {
std::size_t distance(std::size_t i, std::size_t j) { return i >= j ? i - j : j - i; }

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += a[k] * b[k];
  return s;
}
}  // namespace

double bias_independent(const Tensor& omega, std::size_t i, std::size_t j) {
  const std::size_t dist = distance(i, j);
  if (dist >= omega.size()) throw DimensionError("relative distance " + std::to_string(dist) + " out of range");
  return omega[dist];
}

double bias_dependent(const Tensor& r, std::span<const double> u, std::span<const double> v, std::span<const double> q_i,
                      std::span<const double> k_j, std::size_t i, std::size_t j) {
  const std::size_t dist = distance(i, j);
  if (r.rank() != 2 || dist >= r.dim(0)) throw DimensionError("relative distance " + std::to_string(dist) + " out of range");
  const std::size_t dk = r.dim(1);
  std::span<const double> rd(r.storage().data() + dist * dk, dk);
  return dot(q_i, k_j) + dot(q_i, rd) + dot(u, k_j) + dot(v, rd);
}

namespace {

// Promotes [T x d] to [1 x T x d].
Var as_batched(Var x) {
  if (x.value().rank() == 3) return x;
  if (x.value().rank() == 2) return reshape(x, Shape{1, x.dim(0), x.dim(1)});
  throw DimensionError("attention expects [T x d] or [B x T x d], got " + shape_str(x.shape()));
}

struct Projected {
  Var q, k, v;  // [B x T x d] each
};

Projected project(Var x, Var y, const AttentionParams& p, const AttentionSpec& spec) {
  Tape& t = *x.tape;
  if (x.dim(-1) != spec.d) throw DimensionError("attention query dim " + std::to_string(x.dim(-1)) + " != " + std::to_string(spec.d));
  if (y.dim(-1) != spec.source_dim()) {
    throw DimensionError("attention source dim " + std::to_string(y.dim(-1)) + " != " + std::to_string(spec.source_dim()));
  }
  if (x.dim(0) != y.dim(0)) throw DimensionError("attention batch mismatch");
  return {linear(x, t.param(*p.wq)), linear(y, t.param(*p.wk)), linear(y, t.param(*p.wv))};
}

Var head_attention(const Projected& pr, const AttentionParams& p, const AttentionSpec& spec, std::size_t head, Mode mode,
                   Rng& rng, std::size_t offset) {
  Tape& t = *pr.q.tape;
  const std::size_t dk = spec.dk();
  const std::size_t t1 = pr.q.dim(1), t2 = pr.k.dim(1);
  if (spec.causal && t1 + offset != t2) {
    throw DimensionError("causal attention requires aligned self-attention (T1=" + std::to_string(t1) +
                         ", T2=" + std::to_string(t2) + ")");
  }
  Var q = slice(pr.q, -1, head * dk, dk);
  Var k = slice(pr.k, -1, head * dk, dk);
  Var v = slice(pr.v, -1, head * dk, dk);
  Var logits;
  switch (spec.bias) {
    case BiasKind::None:
      logits = bmm_nt(q, k);
      break;
    case BiasKind::Independent:
      logits = add_trailing(bmm_nt(q, k), rel_table(t.param(*p.omega.at(head)), t1, t2, offset));
      break;
    case BiasKind::Dependent: {
      // (q + u).k_j + (q + v).r_{|i-j|}
      Var content = bmm_nt(add_trailing(q, t.param(*p.u.at(head))), k);
      Var position = linear(add_trailing(q, t.param(*p.v.at(head))), t.param(*p.r));
      logits = add(content, rel_gather(position, t2, offset));
      break;
    }
  }
  logits = scale(logits, 1.0 / std::sqrt(static_cast<double>(dk)));
  std::optional<Tensor> mask;
  if (spec.causal) mask = causal_mask(t1, t2, offset);
  Var probs = dropout(softmax_lastaxis(logits, mask), spec.dropout, mode, rng);
  return bmm(probs, v);
}

}  // namespace

Var scaled_dot_attention(Var x, Var y, const AttentionParams& params, const AttentionSpec& spec, std::size_t head,
                         Mode mode, Rng& rng, std::size_t query_offset) {
  spec.validate();
  if (head >= spec.heads) throw std::out_of_range("head index out of range");
  const bool unbatched = x.value().rank() == 2;
  Var out = head_attention(project(as_batched(x), as_batched(y), params, spec), params, spec, head, mode, rng, query_offset);
  return unbatched ? reshape(out, Shape{out.dim(1), out.dim(2)}) : out;
}

Var multi_head_attention(Var x, Var y, const AttentionParams& params, const AttentionSpec& spec, Mode mode, Rng& rng,
                         std::size_t query_offset) {
  spec.validate();
  const bool unbatched = x.value().rank() == 2;
  Projected pr = project(as_batched(x), as_batched(y), params, spec);
  std::vector<Var> heads;
  heads.reserve(spec.heads);
  for (std::size_t h = 0; h < spec.heads; ++h) heads.push_back(head_attention(pr, params, spec, h, mode, rng, query_offset));
  Var cat = heads.size() == 1 ? heads[0] : concat(heads, -1);
  Tape& t = *x.tape;
  Var out = linear(cat, t.param(*params.wo), t.param(*params.bo));
  return unbatched ? reshape(out, Shape{out.dim(1), out.dim(2)}) : out;
}

Var rnn_layer_attention(Var h_layer, Var h_source, const AttentionParams& params, const AttentionSpec& spec, Mode mode,
                        Rng& rng) {
  if (h_layer.dim(-2) != h_source.dim(-2)) {
    throw DimensionError("attention window length mismatch: " + std::to_string(h_layer.dim(-2)) + " vs " +
                         std::to_string(h_source.dim(-2)));
  }
  AttentionSpec causal = spec;
  causal.causal = true;
  return multi_head_attention(h_layer, h_source, params, causal, mode, rng);
}

}  // namespace seqmech::attention
