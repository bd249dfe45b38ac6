#pragma once

// Decoder-only Transformer forecaster over a window of past observables.
//
//   lift   h0 = Dropout(g(W_i o + b_i))             (no absolute positions)
//   pre    u = G_att(h, MHA(LN h)),   out = G_mlp(u, MLP(LN u))
//   post   u = LN(G_att(h, MHA(h))),  out = LN(G_mlp(u, MLP(u)))
//   head   W_o LN(h) + b_o (pre) or W_o h + b_o (post)
//
// Residual gates take x1 = residual stream, x2 = branch and select on their
// concatenation. With memory slots enabled a recurrent sublayer follows the
// last block: the chunk reads the memory carried in from earlier chunks and
// then writes itself into it for the next chunk.

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "seqmech/attention.hpp"
#include "seqmech/forecaster.hpp"
#include "seqmech/gating.hpp"

namespace seqmech::transformer {

enum class LnOrder { Pre, Post };
std::string to_string(LnOrder order);
LnOrder parse_ln_order(std::string_view s);

struct TransformerConfig {
  std::size_t d_o = 0;
  std::size_t d_h = 0;
  std::size_t layers = 1;
  std::size_t heads = 1;
  std::size_t mlp_hidden = 0;  // 0 means 4 * d_h
  LnOrder ln = LnOrder::Pre;
  gating::GateKind gate_att = gating::GateKind::Additive;
  gating::GateKind gate_mlp = gating::GateKind::Additive;
  Activation activation = Activation::Relu;
  double p_e = 0.0;
  double p_f = 0.0;
  double p_a = 0.0;
  attention::BiasKind bias = attention::BiasKind::None;
  std::size_t window = 1;        // S, maximum positions per forward pass
  std::size_t memory_slots = 0;  // N; 0 disables the recurrent memory
  bool memory_gate = false;      // gate the memory write as well as the read

  void validate() const;
  std::size_t hidden() const { return mlp_hidden ? mlp_hidden : 4 * d_h; }
  attention::AttentionSpec self_attention_spec() const;
  attention::AttentionSpec memory_attention_spec() const;
  gating::GateSpec residual_gate(gating::GateKind kind) const { return {kind, d_h, 2 * d_h}; }
};

struct MlpParams {
  Parameter* w_in = nullptr;
  Parameter* b_in = nullptr;
  Parameter* w_out = nullptr;
  Parameter* b_out = nullptr;
};

struct BlockParams {
  Parameter* ln1_g = nullptr;
  Parameter* ln1_b = nullptr;
  Parameter* ln2_g = nullptr;
  Parameter* ln2_b = nullptr;
  attention::AttentionParams attn;
  MlpParams mlp;
  gating::GateParams gate_att;
  gating::GateParams gate_mlp;
};

struct MemoryParams {
  Parameter* m0 = nullptr;          // [N x d_h]
  attention::AttentionParams write;  // memory queries the chunk
  attention::AttentionParams read;   // chunk queries the memory
  gating::GateParams read_gate;
  gating::GateParams write_gate;
};

BlockParams block_init(const TransformerConfig& cfg, ParameterStore& store, const std::string& prefix, const Rng& rng);
MemoryParams memory_init(const TransformerConfig& cfg, ParameterStore& store, const std::string& prefix, const Rng& rng);

Var input_lift(Var w_i, Var b_i, Var o, Activation g, double p_e, Mode mode, Rng& rng);
Var mlp_forward(const MlpParams& p, Var x, Activation g, double p_f, Mode mode, Rng& rng);
/// Gate(x1, x2) with the concatenated selector when the gate needs one.
Var residual_gate(const gating::GateSpec& spec, const gating::GateParams& p, Var x1, Var x2);
/// h [B x T x d_h] -> [B x T x d_h], causal.
Var block_forward(const TransformerConfig& cfg, const BlockParams& p, Var h, Mode mode, Rng& rng);
/// Applies the readout to every row of h; `ln` is the final norm (pre-LN only).
Var transformer_predict(Var w_o, Var b_o, Var h, std::optional<std::pair<Var, Var>> ln);

struct RecurrentOut {
  Var h;
  Var memory;
};
/// h' = G(h, MHA(h, M_prev)); M_next = M_prev + MHA(M_prev, h), or a gated
/// write when enabled. Both cross-attentions are unmasked and unbiased.
RecurrentOut recurrent_block_forward(const TransformerConfig& cfg, const MemoryParams& p, Var h, Var m_prev, Mode mode,
                                     Rng& rng);

/// Appends obs [B x d] to window [B x w x d], evicting the oldest row at capacity.
Tensor history_push(const Tensor& window, const Tensor& obs, std::size_t capacity);

/// FIFO of the S most recent observables.
class HistoryCache {
 public:
  HistoryCache(std::size_t batch, std::size_t dim, std::size_t capacity)
      : window_(Shape{batch, 0, dim}), capacity_(capacity) {}
  void push(const Tensor& obs) { window_ = history_push(window_, obs, capacity_); }
  std::size_t size() const { return window_.dim(1); }
  std::size_t capacity() const { return capacity_; }
  const Tensor& window() const { return window_; }

 private:
  Tensor window_;
  std::size_t capacity_;
};

std::size_t block_param_count(const TransformerConfig& cfg);
std::size_t transformer_param_count(const TransformerConfig& cfg);

/// State layout: [history window] or, with memory, [history window, memory
/// [B x N x d_h]]. An empty memory (N = 0 rows) selects the learned M0.
class TransformerForecaster : public Forecaster {
 public:
  TransformerForecaster(const TransformerConfig& config, std::uint64_t seed);

  std::string kind() const override { return "transformer"; }
  std::size_t observable_dim() const override { return cfg_.d_o; }
  bool stateful() const override { return cfg_.memory_slots > 0; }
  ModelState initial_state(std::size_t batch) const override;
  Var forward_chunk(Tape& tape, Var inputs, ModelState& state, Mode mode, Rng& rng) override;
  Tensor step(const Tensor& obs, ModelState& state) override;

  const TransformerConfig& transformer_config() const { return cfg_; }
  const std::vector<BlockParams>& blocks() const { return blocks_; }

 private:
  TransformerConfig cfg_;
  Parameter* w_i_ = nullptr;
  Parameter* b_i_ = nullptr;
  std::vector<BlockParams> blocks_;
  Parameter* lnf_g_ = nullptr;
  Parameter* lnf_b_ = nullptr;
  Parameter* w_o_ = nullptr;
  Parameter* b_o_ = nullptr;
  std::optional<MemoryParams> memory_;
};

}  // namespace seqmech::transformer
