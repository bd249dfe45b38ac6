#include "seqmech/transformer.hpp"

#include <cmath>
#include <stdexcept>

namespace seqmech::transformer {

using gating::GateKind;

std::string to_string(LnOrder order) { return order == LnOrder::Pre ? "pre" : "post"; }

LnOrder parse_ln_order(std::string_view s) {
  if (s == "pre") return LnOrder::Pre;
  if (s == "post") return LnOrder::Post;
  throw std::invalid_argument("unknown layer-norm order '" + std::string(s) + "' (expected pre or post)");
}

void TransformerConfig::validate() const {
  if (d_o == 0 || d_h == 0 || layers == 0 || window == 0) {
    throw std::invalid_argument("transformer dims, layer count and window must be positive");
  }
  for (double p : {p_e, p_f, p_a})
    if (!(p >= 0.0 && p < 1.0)) throw std::invalid_argument("dropout rates must lie in [0, 1)");
  self_attention_spec().validate();
}

attention::AttentionSpec TransformerConfig::self_attention_spec() const {
  attention::AttentionSpec s;
  s.d = d_h;
  s.heads = heads;
  s.causal = true;
  s.bias = bias;
  s.dropout = p_a;
  s.max_len = window;
  return s;
}

attention::AttentionSpec TransformerConfig::memory_attention_spec() const {
  attention::AttentionSpec s;
  s.d = d_h;
  s.heads = heads;
  s.causal = false;
  s.dropout = p_a;
  return s;
}

namespace {

Tensor uniform(Shape shape, std::size_t fan_in, Rng rng) {
  Tensor t(std::move(shape));
  const double a = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (auto& v : t.storage()) v = rng.uniform(-a, a);
  return t;
}

std::pair<Parameter*, Parameter*> affine(ParameterStore& store, const std::string& name, std::size_t out,
                                         std::size_t in, const Rng& rng) {
  Parameter* w = &store.add(name + ".W", uniform({out, in}, in, rng.derive(name + ".W")));
  Parameter* b = &store.add(name + ".b", Tensor(Shape{out}));
  return {w, b};
}

std::pair<Parameter*, Parameter*> norm(ParameterStore& store, const std::string& name, std::size_t d) {
  Parameter* g = &store.add(name + ".g", Tensor(Shape{d}, 1.0));
  Parameter* b = &store.add(name + ".b", Tensor(Shape{d}));
  return {g, b};
}

Var ln(Var x, Parameter* g, Parameter* b) {
  Tape& t = *x.tape;
  return layer_norm(x, t.param(*g), t.param(*b));
}

bool needs_selector(GateKind k) { return k == GateKind::Coupled || k == GateKind::Dependent; }

}  // namespace

BlockParams block_init(const TransformerConfig& cfg, ParameterStore& store, const std::string& prefix, const Rng& rng) {
  BlockParams p;
  std::tie(p.ln1_g, p.ln1_b) = norm(store, prefix + ".ln1", cfg.d_h);
  std::tie(p.ln2_g, p.ln2_b) = norm(store, prefix + ".ln2", cfg.d_h);
  p.attn = attention::attention_init(cfg.self_attention_spec(), store, prefix + ".attn", rng);
  std::tie(p.mlp.w_in, p.mlp.b_in) = affine(store, prefix + ".mlp.in", cfg.hidden(), cfg.d_h, rng);
  std::tie(p.mlp.w_out, p.mlp.b_out) = affine(store, prefix + ".mlp.out", cfg.d_h, cfg.hidden(), rng);
  p.gate_att = gating::gate_init(cfg.residual_gate(cfg.gate_att), store, prefix + ".gate_att", rng);
  p.gate_mlp = gating::gate_init(cfg.residual_gate(cfg.gate_mlp), store, prefix + ".gate_mlp", rng);
  return p;
}

MemoryParams memory_init(const TransformerConfig& cfg, ParameterStore& store, const std::string& prefix,
                         const Rng& rng) {
  MemoryParams p;
  p.m0 = &store.add(prefix + ".M0", uniform({cfg.memory_slots, cfg.d_h}, cfg.d_h, rng.derive(prefix + ".M0")));
  p.write = attention::attention_init(cfg.memory_attention_spec(), store, prefix + ".write", rng);
  p.read = attention::attention_init(cfg.memory_attention_spec(), store, prefix + ".read", rng);
  p.read_gate = gating::gate_init(cfg.residual_gate(cfg.gate_att), store, prefix + ".gate_read", rng);
  if (cfg.memory_gate) {
    p.write_gate = gating::gate_init(cfg.residual_gate(GateKind::Coupled), store, prefix + ".gate_write", rng);
  }
  return p;
}

Var input_lift(Var w_i, Var b_i, Var o, Activation g, double p_e, Mode mode, Rng& rng) {
  return dropout(activate(g, linear(o, w_i, b_i)), p_e, mode, rng);
}

Var mlp_forward(const MlpParams& p, Var x, Activation g, double p_f, Mode mode, Rng& rng) {
  Tape& t = *x.tape;
  Var hidden = activate(g, linear(x, t.param(*p.w_in), t.param(*p.b_in)));
  return dropout(linear(hidden, t.param(*p.w_out), t.param(*p.b_out)), p_f, mode, rng);
}

Var residual_gate(const gating::GateSpec& spec, const gating::GateParams& p, Var x1, Var x2) {
  std::optional<Var> s;
  if (needs_selector(spec.kind)) {
    std::vector<Var> parts{x1, x2};
    s = concat(parts, -1);
  }
  return gating::gate_apply(spec, p, x1, x2, s);
}

Var block_forward(const TransformerConfig& cfg, const BlockParams& p, Var h, Mode mode, Rng& rng) {
  if (h.value().rank() != 3 || h.dim(2) != cfg.d_h) {
    throw DimensionError("block expects [B x T x " + std::to_string(cfg.d_h) + "], got " + shape_str(h.shape()));
  }
  if (h.dim(1) > cfg.window) {
    throw DimensionError("sequence length " + std::to_string(h.dim(1)) + " exceeds window " + std::to_string(cfg.window));
  }
  const auto spec = cfg.self_attention_spec();
  const auto g_att = cfg.residual_gate(cfg.gate_att), g_mlp = cfg.residual_gate(cfg.gate_mlp);
  if (cfg.ln == LnOrder::Pre) {
    Var a = ln(h, p.ln1_g, p.ln1_b);
    Var u = residual_gate(g_att, p.gate_att, h, attention::multi_head_attention(a, a, p.attn, spec, mode, rng));
    Var m = mlp_forward(p.mlp, ln(u, p.ln2_g, p.ln2_b), cfg.activation, cfg.p_f, mode, rng);
    return residual_gate(g_mlp, p.gate_mlp, u, m);
  }
  Var u = ln(residual_gate(g_att, p.gate_att, h, attention::multi_head_attention(h, h, p.attn, spec, mode, rng)),
             p.ln1_g, p.ln1_b);
  Var m = mlp_forward(p.mlp, u, cfg.activation, cfg.p_f, mode, rng);
  return ln(residual_gate(g_mlp, p.gate_mlp, u, m), p.ln2_g, p.ln2_b);
}

Var transformer_predict(Var w_o, Var b_o, Var h, std::optional<std::pair<Var, Var>> final_ln) {
  if (final_ln) h = layer_norm(h, final_ln->first, final_ln->second);
  return linear(h, w_o, b_o);
}

RecurrentOut recurrent_block_forward(const TransformerConfig& cfg, const MemoryParams& p, Var h, Var m_prev, Mode mode,
                                     Rng& rng) {
  if (cfg.memory_slots == 0) throw std::invalid_argument("recurrent memory is disabled");
  const auto spec = cfg.memory_attention_spec();
  Var read = attention::multi_head_attention(h, m_prev, p.read, spec, mode, rng);
  Var h_out = residual_gate(cfg.residual_gate(cfg.gate_att), p.read_gate, h, read);
  Var write = attention::multi_head_attention(m_prev, h, p.write, spec, mode, rng);
  Var m_next = cfg.memory_gate ? residual_gate(cfg.residual_gate(GateKind::Coupled), p.write_gate, m_prev, write)
                               : add(m_prev, write);
  return {h_out, m_next};
}

Tensor history_push(const Tensor& window, const Tensor& obs, std::size_t capacity) {
  if (window.rank() != 3 || obs.rank() != 2 || obs.dim(0) != window.dim(0) || obs.dim(1) != window.dim(2)) {
    throw DimensionError("history push of " + shape_str(obs.shape()) + " into " + shape_str(window.shape()));
  }
  if (capacity == 0) throw std::invalid_argument("history capacity must be positive");
  const std::size_t batch = window.dim(0), w = window.dim(1), d = window.dim(2);
  const std::size_t keep = std::min(w, capacity - 1), drop = w - keep;
  Tensor out(Shape{batch, keep + 1, d});
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t i = 0; i < keep; ++i)
      for (std::size_t k = 0; k < d; ++k) out[(b * (keep + 1) + i) * d + k] = window[(b * w + drop + i) * d + k];
    for (std::size_t k = 0; k < d; ++k) out[(b * (keep + 1) + keep) * d + k] = obs[b * d + k];
  }
  return out;
}

std::size_t block_param_count(const TransformerConfig& cfg) {
  const std::size_t d = cfg.d_h, f = cfg.hidden(), dk = d / cfg.heads;
  std::size_t attn = 4 * d * d + d;
  if (cfg.bias == attention::BiasKind::Independent) attn += cfg.heads * cfg.window;
  if (cfg.bias == attention::BiasKind::Dependent) attn += cfg.window * dk + 2 * cfg.heads * dk;
  const std::size_t mlp = f * d + f + d * f + d;
  return 4 * d + attn + mlp + cfg.residual_gate(cfg.gate_att).param_count() +
         cfg.residual_gate(cfg.gate_mlp).param_count();
}

std::size_t transformer_param_count(const TransformerConfig& cfg) {
  const std::size_t d = cfg.d_h;
  std::size_t n = d * cfg.d_o + d + cfg.layers * block_param_count(cfg) + cfg.d_o * d + cfg.d_o;
  if (cfg.ln == LnOrder::Pre) n += 2 * d;
  if (cfg.memory_slots > 0) {
    n += cfg.memory_slots * d + 2 * (4 * d * d + d) + cfg.residual_gate(cfg.gate_att).param_count();
    if (cfg.memory_gate) n += cfg.residual_gate(GateKind::Coupled).param_count();
  }
  return n;
}

TransformerForecaster::TransformerForecaster(const TransformerConfig& config, std::uint64_t seed) : cfg_(config) {
  cfg_.validate();
  const Rng rng(seed);
  std::tie(w_i_, b_i_) = affine(params_, "lift", cfg_.d_h, cfg_.d_o, rng);
  for (std::size_t l = 0; l < cfg_.layers; ++l) blocks_.push_back(block_init(cfg_, params_, "block" + std::to_string(l), rng));
  if (cfg_.ln == LnOrder::Pre) std::tie(lnf_g_, lnf_b_) = norm(params_, "final_ln", cfg_.d_h);
  if (cfg_.memory_slots > 0) memory_ = memory_init(cfg_, params_, "memory", rng);
  std::tie(w_o_, b_o_) = affine(params_, "readout", cfg_.d_o, cfg_.d_h, rng);
}

ModelState TransformerForecaster::initial_state(std::size_t batch) const {
  ModelState s;
  s.parts.emplace_back(Shape{batch, 0, cfg_.d_o});
  if (memory_) s.parts.emplace_back(Shape{batch, 0, cfg_.d_h});
  return s;
}

Var TransformerForecaster::forward_chunk(Tape& tape, Var inputs, ModelState& state, Mode mode, Rng& rng) {
  if (inputs.value().rank() != 3 || inputs.dim(2) != cfg_.d_o) {
    throw DimensionError("transformer expects inputs [B x T x " + std::to_string(cfg_.d_o) + "], got " +
                         shape_str(inputs.shape()));
  }
  const std::size_t batch = inputs.dim(0), steps = inputs.dim(1);
  if (state.parts.size() != (memory_ ? 2u : 1u)) throw std::invalid_argument("transformer state has the wrong layout");
  Var h = input_lift(tape.param(*w_i_), tape.param(*b_i_), inputs, cfg_.activation, cfg_.p_e, mode, rng);
  for (const auto& block : blocks_) h = block_forward(cfg_, block, h, mode, rng);
  if (memory_) {
    const Tensor& carried = state.parts[1];
    Var m_prev = carried.dim(1) == 0 ? broadcast_leading(tape.param(*memory_->m0), batch) : tape.constant(carried);
    RecurrentOut r = recurrent_block_forward(cfg_, *memory_, h, m_prev, mode, rng);
    h = r.h;
    state.parts[1] = r.memory.value();
    state.parts[0] = Tensor(Shape{batch, 0, cfg_.d_o});
  } else {
    Tensor window = state.parts[0].dim(0) == batch ? state.parts[0] : Tensor(Shape{batch, 0, cfg_.d_o});
    const std::size_t first = steps > cfg_.window ? steps - cfg_.window : 0;
    for (std::size_t s = first; s < steps; ++s) {
      Tensor obs(Shape{batch, cfg_.d_o});
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t k = 0; k < cfg_.d_o; ++k) obs[b * cfg_.d_o + k] = inputs.value()[(b * steps + s) * cfg_.d_o + k];
      window = history_push(window, obs, cfg_.window);
    }
    state.parts[0] = std::move(window);
  }
  std::optional<std::pair<Var, Var>> final_ln;
  if (cfg_.ln == LnOrder::Pre) final_ln = std::make_pair(tape.param(*lnf_g_), tape.param(*lnf_b_));
  return transformer_predict(tape.param(*w_o_), tape.param(*b_o_), h, final_ln);
}

Tensor TransformerForecaster::step(const Tensor& obs, ModelState& state) {
  if (obs.rank() != 2 || obs.dim(1) != cfg_.d_o) throw DimensionError("step expects [B x d_o]");
  const std::size_t batch = obs.dim(0);
  Tensor window = history_push(state.parts.at(0), obs, cfg_.window);
  Tape tape;
  Rng rng(0);
  ModelState scratch = state;
  scratch.parts[0] = Tensor(Shape{batch, 0, cfg_.d_o});
  Var pred = forward_chunk(tape, tape.constant(window), scratch, Mode::Eval, rng);
  if (memory_ && window.dim(1) == cfg_.window) {
    // The block is complete: commit its memory write and start a new block.
    state.parts[1] = scratch.parts[1];
    state.parts[0] = Tensor(Shape{batch, 0, cfg_.d_o});
  } else {
    state.parts[0] = std::move(window);
  }
  const std::size_t w = pred.dim(1);
  Tensor out(Shape{batch, cfg_.d_o});
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t k = 0; k < cfg_.d_o; ++k) out[b * cfg_.d_o + k] = pred.value()[(b * w + w - 1) * cfg_.d_o + k];
  return out;
}

}  // namespace seqmech::transformer
