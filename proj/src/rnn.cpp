#include "seqmech/rnn.hpp"

#include <cmath>
#include <deque>
#include <stdexcept>

namespace seqmech::rnn {

using gating::GateKind;
using gating::GateSpec;

std::string to_string(CellKind kind) {
  switch (kind) {
    case CellKind::LSTM: return "lstm";
    case CellKind::GRU: return "gru";
    case CellKind::RHN: return "rhn";
  }
  return "?";
}

CellKind parse_cell_kind(std::string_view s) {
  if (s == "lstm" || s == "LSTM") return CellKind::LSTM;
  if (s == "gru" || s == "GRU") return CellKind::GRU;
  if (s == "rhn" || s == "RHN") return CellKind::RHN;
  throw std::invalid_argument("unknown cell kind '" + std::string(s) + "' (expected lstm, gru or rhn)");
}

std::string to_string(AttentionSource src) {
  switch (src) {
    case AttentionSource::Off: return "off";
    case AttentionSource::Self: return "self";
    case AttentionSource::Input: return "input";
    case AttentionSource::Previous: return "previous";
  }
  return "?";
}

AttentionSource parse_attention_source(std::string_view s) {
  if (s == "off" || s == "none") return AttentionSource::Off;
  if (s == "self") return AttentionSource::Self;
  if (s == "input") return AttentionSource::Input;
  if (s == "previous") return AttentionSource::Previous;
  throw std::invalid_argument("unknown attention source '" + std::string(s) + "' (expected off, self, input or previous)");
}

void CellConfig::validate() const {
  if (d_h == 0 || d_o == 0 || layers == 0) throw std::invalid_argument("rnn dims and layer count must be positive");
  if (cell == CellKind::RHN && depth == 0) throw std::invalid_argument("RHN transition depth must be >= 1");
  if (attention != AttentionSource::Off) {
    if (window == 0) throw std::invalid_argument("attention window must be positive");
    attention_spec(0).validate();
  }
}

std::size_t CellConfig::attention_source_dim(std::size_t layer) const {
  switch (attention) {
    case AttentionSource::Off: return 0;
    case AttentionSource::Self: return d_h;
    case AttentionSource::Input: return d_o;
    case AttentionSource::Previous: return layer_input_dim(layer);
  }
  return 0;
}

attention::AttentionSpec CellConfig::attention_spec(std::size_t layer) const {
  attention::AttentionSpec s;
  s.d = d_h;
  s.heads = heads;
  s.kv_dim = attention_source_dim(layer);
  s.causal = true;
  s.bias = bias;
  s.dropout = attention_dropout;
  s.max_len = window;
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

Var cat2(Var a, Var b) {
  std::vector<Var> parts{a, b};
  return concat(parts, -1);
}

}  // namespace

GateSpec lstm_gate_spec(GateKind kind, std::size_t d_h, std::size_t d_in) { return {kind, d_h, d_h + d_in}; }
GateSpec gru_gate_spec(GateKind kind, std::size_t d_h, std::size_t d_in) { return {kind, d_h, d_h + d_in}; }
GateSpec rhn_gate_spec(GateKind kind, std::size_t d_h, std::size_t d_in, std::size_t l) {
  return {kind, d_h, l == 1 ? d_in + d_h : d_h};
}

LstmParams lstm_init(GateKind kind, std::size_t d_h, std::size_t d_in, ParameterStore& store, const std::string& prefix,
                     const Rng& rng) {
  LstmParams p;
  std::tie(p.wo, p.bo) = affine(store, prefix + ".out", d_h, d_h + d_in, rng);
  std::tie(p.wc, p.bc) = affine(store, prefix + ".cand", d_h, d_h + d_in, rng);
  p.gate = gating::gate_init(lstm_gate_spec(kind, d_h, d_in), store, prefix + ".gate", rng);
  return p;
}

GruParams gru_init(GateKind kind, std::size_t d_h, std::size_t d_in, ParameterStore& store, const std::string& prefix,
                   const Rng& rng) {
  GruParams p;
  std::tie(p.wr, p.br) = affine(store, prefix + ".reset", d_h, d_h + d_in, rng);
  std::tie(p.wh, p.bh) = affine(store, prefix + ".cand", d_h, d_h + d_in, rng);
  p.gate = gating::gate_init(gru_gate_spec(kind, d_h, d_in), store, prefix + ".gate", rng);
  return p;
}

RhnParams rhn_init(GateKind kind, std::size_t d_h, std::size_t d_in, std::size_t depth, ParameterStore& store,
                   const std::string& prefix, const Rng& rng) {
  RhnParams p;
  std::tie(p.w0, p.b0) = affine(store, prefix + ".in", d_h, d_in + d_h, rng);
  for (std::size_t l = 1; l <= depth; ++l) {
    const GateSpec spec = rhn_gate_spec(kind, d_h, d_in, l);
    auto [w, b] = affine(store, prefix + ".s" + std::to_string(l), d_h, spec.ds, rng);
    p.ws.push_back(w);
    p.bs.push_back(b);
    p.gates.push_back(gating::gate_init(spec, store, prefix + ".gate" + std::to_string(l), rng));
  }
  return p;
}

LstmOut lstm_step(GateKind kind, const LstmParams& p, Var o, Var h_prev, Var c_prev) {
  Tape& t = *o.tape;
  const std::size_t d_h = h_prev.dim(-1);
  if (c_prev.shape() != h_prev.shape()) throw DimensionError("lstm cell state shape mismatch");
  Var z = cat2(h_prev, o);
  Var g_out = sigmoid(linear(z, t.param(*p.wo), t.param(*p.bo)));
  Var cand = tanh(linear(z, t.param(*p.wc), t.param(*p.bc)));
  Var c = gating::gate_apply(lstm_gate_spec(kind, d_h, o.dim(-1)), p.gate, c_prev, cand, z);
  return {mul(g_out, tanh(c)), c};
}

Var gru_step(GateKind kind, const GruParams& p, Var o, Var h_prev) {
  Tape& t = *o.tape;
  Var z = cat2(h_prev, o);
  Var g_reset = sigmoid(linear(z, t.param(*p.wr), t.param(*p.br)));
  Var cand = tanh(linear(cat2(mul(g_reset, h_prev), o), t.param(*p.wh), t.param(*p.bh)));
  return gating::gate_apply(gru_gate_spec(kind, h_prev.dim(-1), o.dim(-1)), p.gate, cand, h_prev, z);
}

Var rhn_step(GateKind kind, const RhnParams& p, Var o, Var h_prev) {
  Tape& t = *o.tape;
  const std::size_t d_h = h_prev.dim(-1);
  Var h = tanh(linear(cat2(o, h_prev), t.param(*p.w0), t.param(*p.b0)));
  for (std::size_t l = 1; l <= p.ws.size(); ++l) {
    Var z = l == 1 ? cat2(o, h) : h;
    Var s = tanh(linear(z, t.param(*p.ws[l - 1]), t.param(*p.bs[l - 1])));
    h = gating::gate_apply(rhn_gate_spec(kind, d_h, o.dim(-1), l), p.gates[l - 1], h, s, z);
  }
  return h;
}

Var rnn_predict(Var w, Var b, Var h) { return linear(h, w, b); }

std::size_t cell_param_count(CellKind cell, GateKind gate, std::size_t d_h, std::size_t d_in, std::size_t depth) {
  const std::size_t full = d_h * (d_h + d_in) + d_h;
  switch (cell) {
    case CellKind::LSTM: return 2 * full + lstm_gate_spec(gate, d_h, d_in).param_count();
    case CellKind::GRU: return 2 * full + gru_gate_spec(gate, d_h, d_in).param_count();
    case CellKind::RHN: {
      std::size_t n = full;
      for (std::size_t l = 1; l <= depth; ++l) {
        const GateSpec s = rhn_gate_spec(gate, d_h, d_in, l);
        n += d_h * s.ds + d_h + s.param_count();
      }
      return n;
    }
  }
  return 0;
}

RnnForecaster::RnnForecaster(const CellConfig& config, std::uint64_t seed) : cfg_(config) {
  cfg_.validate();
  const Rng rng(seed);
  for (std::size_t l = 0; l < cfg_.layers; ++l) {
    const std::string prefix = "layer" + std::to_string(l);
    const std::size_t d_in = cfg_.layer_input_dim(l);
    Layer layer;
    switch (cfg_.cell) {
      case CellKind::LSTM: layer.lstm = lstm_init(cfg_.gate, cfg_.d_h, d_in, params_, prefix + ".lstm", rng); break;
      case CellKind::GRU: layer.gru = gru_init(cfg_.gate, cfg_.d_h, d_in, params_, prefix + ".gru", rng); break;
      case CellKind::RHN:
        layer.rhn = rhn_init(cfg_.gate, cfg_.d_h, d_in, cfg_.depth, params_, prefix + ".rhn", rng);
        break;
    }
    if (cfg_.attention != AttentionSource::Off) {
      layer.attn = attention::attention_init(cfg_.attention_spec(l), params_, prefix + ".attn", rng);
    }
    layers_.push_back(std::move(layer));
  }
  std::tie(w_out_, b_out_) = affine(params_, "readout", cfg_.d_o, cfg_.d_h, rng);
}

std::size_t RnnForecaster::parts_per_layer() const {
  return 1 + (cfg_.cell == CellKind::LSTM ? 1 : 0) + (cfg_.attention != AttentionSource::Off ? 1 : 0);
}

ModelState RnnForecaster::initial_state(std::size_t batch) const {
  ModelState s;
  for (std::size_t l = 0; l < cfg_.layers; ++l) {
    s.parts.emplace_back(Shape{batch, cfg_.d_h});
    if (cfg_.cell == CellKind::LSTM) s.parts.emplace_back(Shape{batch, cfg_.d_h});
    if (cfg_.attention != AttentionSource::Off) s.parts.emplace_back(Shape{batch, 0, cfg_.attention_source_dim(l)});
  }
  return s;
}

namespace {

// Stacks [B x 1 x d] vars into a detached [B x w x d] tensor.
Tensor stack_window(const std::deque<Var>& window, std::size_t batch, std::size_t d) {
  Tensor out(Shape{batch, window.size(), d});
  for (std::size_t i = 0; i < window.size(); ++i) {
    const Tensor& v = window[i].value();
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t k = 0; k < d; ++k) out[(b * window.size() + i) * d + k] = v[b * d + k];
  }
  return out;
}

}  // namespace

Var RnnForecaster::forward_chunk(Tape& tape, Var inputs, ModelState& state, Mode mode, Rng& rng) {
  if (inputs.value().rank() != 3 || inputs.dim(2) != cfg_.d_o) {
    throw DimensionError("rnn expects inputs [B x T x " + std::to_string(cfg_.d_o) + "], got " +
                         shape_str(inputs.shape()));
  }
  const std::size_t batch = inputs.dim(0), steps = inputs.dim(1), per = parts_per_layer();
  if (state.parts.size() != per * cfg_.layers) throw std::invalid_argument("rnn state has the wrong layer count");
  const bool attend = cfg_.attention != AttentionSource::Off;

  std::vector<Var> h(cfg_.layers), c(cfg_.layers);
  std::vector<std::deque<Var>> windows(cfg_.layers);
  for (std::size_t l = 0; l < cfg_.layers; ++l) {
    const Tensor& hs = state.parts[l * per];
    if (hs.shape() != Shape{batch, cfg_.d_h}) throw DimensionError("rnn state batch does not match inputs");
    h[l] = tape.constant(hs);
    if (cfg_.cell == CellKind::LSTM) c[l] = tape.constant(state.parts[l * per + 1]);
    if (attend) {
      Var w = tape.constant(state.parts[l * per + per - 1]);
      for (std::size_t i = 0; i < w.dim(1); ++i) windows[l].push_back(slice(w, 1, i, 1));
    }
  }

  Tape& t = tape;
  Var w_out = t.param(*w_out_), b_out = t.param(*b_out_);
  std::vector<Var> preds;
  preds.reserve(steps);
  for (std::size_t s = 0; s < steps; ++s) {
    Var o = reshape(slice(inputs, 1, s, 1), Shape{batch, cfg_.d_o});
    Var x = o;
    for (std::size_t l = 0; l < cfg_.layers; ++l) {
      const Layer& layer = layers_[l];
      switch (cfg_.cell) {
        case CellKind::LSTM: {
          LstmOut r = lstm_step(cfg_.gate, layer.lstm, x, h[l], c[l]);
          h[l] = r.h;
          c[l] = r.c;
          break;
        }
        case CellKind::GRU: h[l] = gru_step(cfg_.gate, layer.gru, x, h[l]); break;
        case CellKind::RHN: h[l] = rhn_step(cfg_.gate, layer.rhn, x, h[l]); break;
      }
      if (!attend) {
        x = h[l];
        continue;
      }
      const std::size_t d_src = cfg_.attention_source_dim(l);
      Var src = cfg_.attention == AttentionSource::Self ? h[l] : cfg_.attention == AttentionSource::Input ? o : x;
      windows[l].push_back(reshape(src, Shape{batch, 1, d_src}));
      if (windows[l].size() > cfg_.window) windows[l].pop_front();
      std::vector<Var> parts(windows[l].begin(), windows[l].end());
      Var keys = parts.size() == 1 ? parts[0] : concat(parts, 1);
      Var q = reshape(h[l], Shape{batch, 1, cfg_.d_h});
      Var refined = attention::multi_head_attention(q, keys, layer.attn, cfg_.attention_spec(l), mode, rng,
                                                    parts.size() - 1);
      x = reshape(refined, Shape{batch, cfg_.d_h});
    }
    preds.push_back(reshape(rnn_predict(w_out, b_out, x), Shape{batch, 1, cfg_.d_o}));
  }

  for (std::size_t l = 0; l < cfg_.layers; ++l) {
    state.parts[l * per] = h[l].value();
    if (cfg_.cell == CellKind::LSTM) state.parts[l * per + 1] = c[l].value();
    if (attend) state.parts[l * per + per - 1] = stack_window(windows[l], batch, cfg_.attention_source_dim(l));
  }
  return preds.size() == 1 ? preds[0] : concat(preds, 1);
}

}  // namespace seqmech::rnn
