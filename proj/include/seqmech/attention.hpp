#pragma once

// Masked multi-head scaled dot-product attention with optional relative
// position biases.
//
// Sequences are [B x T x d] (a [T x d] input is treated as B = 1). Logits for
// head h are
//
//   none  q_i.k_j / sqrt(dk)
//   I     (q_i.k_j + w_h[|i-j|]) / sqrt(dk)
//   D     (q_i.k_j + q_i.r[|i-j|] + u_h.k_j + v_h.r[|i-j|]) / sqrt(dk)
//
// The causal mask is additive (0 on and below the diagonal, -inf above).

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "seqmech/autodiff.hpp"

namespace seqmech::attention {

enum class BiasKind { None, Independent, Dependent };

/// "none", "I" or "D".
std::string to_string(BiasKind kind);
BiasKind parse_bias_kind(std::string_view s);

struct AttentionSpec {
  std::size_t d = 0;        // query/model dimension
  std::size_t heads = 1;
  std::size_t kv_dim = 0;   // key/value source dimension; 0 means d
  bool causal = false;
  BiasKind bias = BiasKind::None;
  double dropout = 0.0;     // applied to the attention probabilities
  std::size_t max_len = 0;  // relative-bias table length

  std::size_t dk() const { return d / heads; }
  std::size_t source_dim() const { return kv_dim ? kv_dim : d; }
  /// Throws unless heads divides d and the bias table is sized when needed.
  void validate() const;
};

struct AttentionParams {
  Parameter* wq = nullptr;  // [d x d], head h owns rows [h*dk, (h+1)*dk)
  Parameter* wk = nullptr;  // [d x source_dim]
  Parameter* wv = nullptr;  // [d x source_dim]
  Parameter* wo = nullptr;  // [d x d]
  Parameter* bo = nullptr;  // [d]
  std::vector<Parameter*> omega;  // per head [max_len]         (I)
  Parameter* r = nullptr;         // shared [max_len x dk]       (D)
  std::vector<Parameter*> u;      // per head [dk]               (D)
  std::vector<Parameter*> v;      // per head [dk]               (D)
};

AttentionParams attention_init(const AttentionSpec& spec, ParameterStore& store, const std::string& prefix,
                               const Rng& rng);
AttentionParams attention_bind(const AttentionSpec& spec, ParameterStore& store, const std::string& prefix);

/// [T x T] additive mask: 0 where column <= row, -inf elsewhere.
Tensor causal_mask(std::size_t t);
/// [t1 x t2] mask for queries occupying the last t1 positions of a length-(t1+offset) key sequence.
Tensor causal_mask(std::size_t t1, std::size_t t2, std::size_t offset);

/// omega[|i-j|]
double bias_independent(const Tensor& omega, std::size_t i, std::size_t j);
/// q_i.k_j + q_i.r[|i-j|] + u.k_j + v.r[|i-j|] for one head.
double bias_dependent(const Tensor& r, std::span<const double> u, std::span<const double> v, std::span<const double> q_i,
                      std::span<const double> k_j, std::size_t i, std::size_t j);

/// One head: softmax(logits [+ mask]) V_h, shape [B x T1 x dk]. `query_offset`
/// is the position of the first query within the key sequence's timeline.
Var scaled_dot_attention(Var x, Var y, const AttentionParams& params, const AttentionSpec& spec, std::size_t head,
                         Mode mode, Rng& rng, std::size_t query_offset = 0);

/// Concatenated heads followed by W_o (.) + b_o; shape [B x T1 x d].
Var multi_head_attention(Var x, Var y, const AttentionParams& params, const AttentionSpec& spec, Mode mode, Rng& rng,
                         std::size_t query_offset = 0);

/// Causal MHA refining a retained window of hidden states against a source window of equal length.
Var rnn_layer_attention(Var h_layer, Var h_source, const AttentionParams& params, const AttentionSpec& spec, Mode mode,
                        Rng& rng);

}  // namespace seqmech::attention
