#pragma once

// Binary multiplexing gates: G(x1, x2, s) = g1(s) * x1 + g2(s) * x2.
//
//   A  g1 = g2 = 1                                  (no parameters)
//   L  g1 = sigmoid(b),        g2 = 1 - g1          (b)
//   C  g1 = sigmoid(W s + b),  g2 = 1 - g1          (W, b)
//   D  gk = sigmoid(Wk s + bk), k = 1, 2            (W1, b1, W2, b2)

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <utility>

#include "seqmech/autodiff.hpp"
#include "seqmech/rng.hpp"

namespace seqmech::gating {

enum class GateKind { Additive, LearnedRate, Coupled, Dependent };

char to_letter(GateKind kind);
/// Accepts the single letters A, L, C, D.
GateKind parse_gate_kind(std::string_view letter);

struct GateSpec {
  GateKind kind = GateKind::Additive;
  std::size_t dx = 0;  // multiplexed vector dimension
  std::size_t ds = 0;  // selector dimension

  std::size_t param_count() const;
};

/// Non-owning views into a ParameterStore; unused slots are null.
struct GateParams {
  Parameter* w1 = nullptr;
  Parameter* b1 = nullptr;
  Parameter* w2 = nullptr;
  Parameter* b2 = nullptr;
};

/// Registers the gate's parameters under `prefix`. Weights are drawn from
/// uniform(+-1/sqrt(ds)); the x1-branch bias starts at +1, all others at 0.
GateParams gate_init(const GateSpec& spec, ParameterStore& store, const std::string& prefix, const Rng& rng);

/// Looks up previously registered parameters under `prefix`.
GateParams gate_bind(const GateSpec& spec, ParameterStore& store, const std::string& prefix);

/// (g1, g2). For A and L the results have shape [dx] and ignore `s`; for C and
/// D they have the selector's leading shape with a trailing dx.
std::pair<Var, Var> gate_outputs(const GateSpec& spec, const GateParams& params, Tape& tape, std::optional<Var> s);

Var gate_apply(const GateSpec& spec, const GateParams& params, Var x1, Var x2, std::optional<Var> s);

}  // namespace seqmech::gating
