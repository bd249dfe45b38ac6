#include "seqmech/gating.hpp"

#include <cmath>
#include <stdexcept>

namespace seqmech::gating {

char to_letter(GateKind kind) {
  switch (kind) {
    case GateKind::Additive: return 'A';
    case GateKind::LearnedRate: return 'L';
    case GateKind::Coupled: return 'C';
    case GateKind::Dependent: return 'D';
  }
  return '?';
}

GateKind parse_gate_kind(std::string_view letter) {
  if (letter == "A") return GateKind::Additive;
  if (letter == "L") return GateKind::LearnedRate;
  if (letter == "C") return GateKind::Coupled;
  if (letter == "D") return GateKind::Dependent;
  throw std::invalid_argument("unknown gate type '" + std::string(letter) + "' (expected A, L, C or D)");
}

std::size_t GateSpec::param_count() const {
  switch (kind) {
    case GateKind::Additive: return 0;
    case GateKind::LearnedRate: return dx;
    case GateKind::Coupled: return dx * ds + dx;
    case GateKind::Dependent: return 2 * (dx * ds + dx);
  }
  return 0;
}

namespace {
Tensor uniform_matrix(std::size_t rows, std::size_t cols, Rng rng) {
  Tensor w(Shape{rows, cols});
  const double a = 1.0 / std::sqrt(static_cast<double>(cols));
  for (auto& v : w.storage()) v = rng.uniform(-a, a);
  return w;
}
}  // namespace

GateParams gate_init(const GateSpec& spec, ParameterStore& store, const std::string& prefix, const Rng& rng) {
  GateParams p;
  switch (spec.kind) {
    case GateKind::Additive:
      break;
    case GateKind::LearnedRate:
      p.b1 = &store.add(prefix + ".b", Tensor(Shape{spec.dx}, 1.0));
      break;
    case GateKind::Coupled:
      p.w1 = &store.add(prefix + ".W", uniform_matrix(spec.dx, spec.ds, rng.derive(prefix + ".W")));
      p.b1 = &store.add(prefix + ".b", Tensor(Shape{spec.dx}, 1.0));
      break;
    case GateKind::Dependent:
      p.w1 = &store.add(prefix + ".W1", uniform_matrix(spec.dx, spec.ds, rng.derive(prefix + ".W1")));
      p.b1 = &store.add(prefix + ".b1", Tensor(Shape{spec.dx}, 1.0));
      p.w2 = &store.add(prefix + ".W2", uniform_matrix(spec.dx, spec.ds, rng.derive(prefix + ".W2")));
      p.b2 = &store.add(prefix + ".b2", Tensor(Shape{spec.dx}, 0.0));
      break;
  }
  return p;
}

GateParams gate_bind(const GateSpec& spec, ParameterStore& store, const std::string& prefix) {
  GateParams p;
  switch (spec.kind) {
    case GateKind::Additive:
      break;
    case GateKind::LearnedRate:
      p.b1 = &store.get(prefix + ".b");
      break;
    case GateKind::Coupled:
      p.w1 = &store.get(prefix + ".W");
      p.b1 = &store.get(prefix + ".b");
      break;
    case GateKind::Dependent:
      p.w1 = &store.get(prefix + ".W1");
      p.b1 = &store.get(prefix + ".b1");
      p.w2 = &store.get(prefix + ".W2");
      p.b2 = &store.get(prefix + ".b2");
      break;
  }
  return p;
}

namespace {
Var selector(const GateSpec& spec, std::optional<Var> s) {
  if (!s) throw std::invalid_argument("gate " + std::string(1, to_letter(spec.kind)) + " requires a selector");
  if (s->dim(-1) != spec.ds) {
    throw DimensionError("gate selector dim " + std::to_string(s->dim(-1)) + " != " + std::to_string(spec.ds));
  }
  return *s;
}
}  // namespace

std::pair<Var, Var> gate_outputs(const GateSpec& spec, const GateParams& params, Tape& tape, std::optional<Var> s) {
  switch (spec.kind) {
    case GateKind::Additive: {
      Var ones = tape.constant(Tensor(Shape{spec.dx}, 1.0));
      return {ones, ones};
    }
    case GateKind::LearnedRate: {
      Var g1 = sigmoid(tape.param(*params.b1));
      return {g1, one_minus(g1)};
    }
    case GateKind::Coupled: {
      Var sv = selector(spec, s);
      Var g1 = sigmoid(linear(sv, tape.param(*params.w1), tape.param(*params.b1)));
      return {g1, one_minus(g1)};
    }
    case GateKind::Dependent: {
      Var sv = selector(spec, s);
      Var g1 = sigmoid(linear(sv, tape.param(*params.w1), tape.param(*params.b1)));
      Var g2 = sigmoid(linear(sv, tape.param(*params.w2), tape.param(*params.b2)));
      return {g1, g2};
    }
  }
  throw std::logic_error("unreachable gate kind");
}

Var gate_apply(const GateSpec& spec, const GateParams& params, Var x1, Var x2, std::optional<Var> s) {
  if (x1.shape() != x2.shape() || x1.dim(-1) != spec.dx) {
    throw DimensionError("gate inputs " + shape_str(x1.shape()) + " and " + shape_str(x2.shape()) +
                         " do not match gate dim " + std::to_string(spec.dx));
  }
  Tape& tape = *x1.tape;
  switch (spec.kind) {
    case GateKind::Additive:
      return add(x1, x2);
    case GateKind::LearnedRate: {
      auto [g1, g2] = gate_outputs(spec, params, tape, s);
      return add(mul_trailing(x1, g1), mul_trailing(x2, g2));
    }
    case GateKind::Coupled:
    case GateKind::Dependent: {
      auto [g1, g2] = gate_outputs(spec, params, tape, s);
      if (g1.shape() != x1.shape()) {
        throw DimensionError("gate selector leading shape " + shape_str(g1.shape()) + " does not match inputs " +
                             shape_str(x1.shape()));
      }
      return add(mul(g1, x1), mul(g2, x2));
    }
  }
  throw std::logic_error("unreachable gate kind");
}

}  // namespace seqmech::gating
