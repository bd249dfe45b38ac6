#pragma once

// Gated recurrent cells (LSTM, GRU, RHN) with substitutable multiplexing
// gates, stacking, optional inter-layer attention and an affine readout.
//
// Gate sites (x1, x2) per cell:
//   LSTM  (c_prev, c~)            canonical kind D: g1 = forget, g2 = input
//   GRU   (h~, h_prev)            canonical kind C: g1 = update gate z
//   RHN   (h^{l-1}, s^l)          canonical kind C: g1 = carry, g2 = 1 - carry
//
// Shapes are [... x d]; concatenated inputs are ordered (h_prev, o) for LSTM
// and GRU and (o, h) for RHN.

#include <cstddef>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "seqmech/attention.hpp"
#include "seqmech/forecaster.hpp"
#include "seqmech/gating.hpp"

namespace seqmech::rnn {

enum class CellKind { LSTM, GRU, RHN };
enum class AttentionSource { Off, Self, Input, Previous };

std::string to_string(CellKind kind);
CellKind parse_cell_kind(std::string_view s);
std::string to_string(AttentionSource src);
AttentionSource parse_attention_source(std::string_view s);

struct CellConfig {
  CellKind cell = CellKind::LSTM;
  std::size_t d_h = 0;
  std::size_t d_o = 0;
  std::size_t layers = 1;
  std::size_t depth = 1;  // RHN transition depth
  gating::GateKind gate = gating::GateKind::Dependent;
  AttentionSource attention = AttentionSource::Off;
  std::size_t heads = 1;
  attention::BiasKind bias = attention::BiasKind::None;
  double attention_dropout = 0.0;
  std::size_t window = 1;  // retained attention window S

  void validate() const;
  std::size_t layer_input_dim(std::size_t layer) const { return layer == 0 ? d_o : d_h; }
  /// Key/value source dimension of the attention in `layer`.
  std::size_t attention_source_dim(std::size_t layer) const;
  attention::AttentionSpec attention_spec(std::size_t layer) const;
};

struct LstmParams {
  Parameter* wo = nullptr;  // output gate
  Parameter* bo = nullptr;
  Parameter* wc = nullptr;  // candidate
  Parameter* bc = nullptr;
  gating::GateParams gate;  // forget/input pair
};

struct GruParams {
  Parameter* wr = nullptr;  // reset gate
  Parameter* br = nullptr;
  Parameter* wh = nullptr;  // candidate
  Parameter* bh = nullptr;
  gating::GateParams gate;  // update gate
};

struct RhnParams {
  Parameter* w0 = nullptr;
  Parameter* b0 = nullptr;
  std::vector<Parameter*> ws;  // per micro-step candidate
  std::vector<Parameter*> bs;
  std::vector<gating::GateParams> gates;
};

gating::GateSpec lstm_gate_spec(gating::GateKind kind, std::size_t d_h, std::size_t d_in);
gating::GateSpec gru_gate_spec(gating::GateKind kind, std::size_t d_h, std::size_t d_in);
/// Gate spec of RHN micro-step `l` (1-based).
gating::GateSpec rhn_gate_spec(gating::GateKind kind, std::size_t d_h, std::size_t d_in, std::size_t l);

LstmParams lstm_init(gating::GateKind kind, std::size_t d_h, std::size_t d_in, ParameterStore& store,
                     const std::string& prefix, const Rng& rng);
GruParams gru_init(gating::GateKind kind, std::size_t d_h, std::size_t d_in, ParameterStore& store,
                   const std::string& prefix, const Rng& rng);
RhnParams rhn_init(gating::GateKind kind, std::size_t d_h, std::size_t d_in, std::size_t depth, ParameterStore& store,
                   const std::string& prefix, const Rng& rng);

struct LstmOut {
  Var h;
  Var c;
};

LstmOut lstm_step(gating::GateKind kind, const LstmParams& p, Var o, Var h_prev, Var c_prev);
Var gru_step(gating::GateKind kind, const GruParams& p, Var o, Var h_prev);
Var rhn_step(gating::GateKind kind, const RhnParams& p, Var o, Var h_prev);

/// W h + b
Var rnn_predict(Var w, Var b, Var h);

/// Scalar count of one cell layer's parameters.
std::size_t cell_param_count(CellKind cell, gating::GateKind gate, std::size_t d_h, std::size_t d_in,
                             std::size_t depth);

/// Stacked RNN forecaster.
///
/// State layout: for each layer h [B x d_h], then c (LSTM), then, with
/// attention on, the retained source window [B x w x d_src] (w <= S).
class RnnForecaster : public Forecaster {
 public:
  RnnForecaster(const CellConfig& config, std::uint64_t seed);

  std::string kind() const override { return to_string(cfg_.cell); }
  std::size_t observable_dim() const override { return cfg_.d_o; }
  bool stateful() const override { return true; }
  ModelState initial_state(std::size_t batch) const override;
  Var forward_chunk(Tape& tape, Var inputs, ModelState& state, Mode mode, Rng& rng) override;

  const CellConfig& cell_config() const { return cfg_; }

  struct Layer {
    LstmParams lstm;
    GruParams gru;
    RhnParams rhn;
    attention::AttentionParams attn;
  };
  const std::vector<Layer>& layers() const { return layers_; }
  Parameter* readout_weight() const { return w_out_; }
  Parameter* readout_bias() const { return b_out_; }

 private:
  std::size_t parts_per_layer() const;

  CellConfig cfg_;
  std::vector<Layer> layers_;
  Parameter* w_out_ = nullptr;
  Parameter* b_out_ = nullptr;
};

}  // namespace seqmech::rnn
