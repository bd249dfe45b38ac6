#include "seqmech/forecaster.hpp"

#include <set>
#include <stdexcept>

#include "seqmech/rnn.hpp"
#include "seqmech/transformer.hpp"

namespace seqmech {

Tensor Forecaster::step(const Tensor& obs, ModelState& state) {
  if (obs.rank() != 2 || obs.dim(1) != observable_dim()) throw DimensionError("step expects [B x d_o]");
  const std::size_t batch = obs.dim(0), d = obs.dim(1);
  Tape tape;
  Rng rng(0);
  Var pred = forward_chunk(tape, tape.constant(obs.reshaped({batch, 1, d})), state, Mode::Eval, rng);
  return pred.value().reshaped({batch, d});
}

namespace {

using nlohmann::json;

void reject_unknown(const json& j, const std::set<std::string>& allowed) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!allowed.count(it.key())) throw std::invalid_argument("unknown model key '" + it.key() + "'");
  }
}

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
  return j.contains(key) ? j.at(key).get<T>() : fallback;
}

}  // namespace

std::unique_ptr<Forecaster> make_forecaster(const json& model, std::size_t observable_dim, std::size_t window,
                                            std::uint64_t seed) {
  if (!model.is_object()) throw std::invalid_argument("model config must be an object");
  const std::string kind = model.at("kind").get<std::string>();
  if (kind == "transformer") {
    reject_unknown(model, {"kind", "hidden", "layers", "heads", "mlp_hidden", "ln", "gate_att", "gate_mlp",
                           "activation", "p_e", "p_f", "p_a", "bias", "memory_slots", "memory_gate"});
    transformer::TransformerConfig c;
    c.d_o = observable_dim;
    c.window = window;
    c.d_h = model.at("hidden").get<std::size_t>();
    c.layers = get_or<std::size_t>(model, "layers", 1);
    c.heads = get_or<std::size_t>(model, "heads", 1);
    c.mlp_hidden = get_or<std::size_t>(model, "mlp_hidden", 0);
    c.ln = transformer::parse_ln_order(get_or<std::string>(model, "ln", "pre"));
    c.gate_att = gating::parse_gate_kind(get_or<std::string>(model, "gate_att", "A"));
    c.gate_mlp = gating::parse_gate_kind(get_or<std::string>(model, "gate_mlp", "A"));
    c.activation = parse_activation(get_or<std::string>(model, "activation", "relu"));
    c.p_e = get_or(model, "p_e", 0.0);
    c.p_f = get_or(model, "p_f", 0.0);
    c.p_a = get_or(model, "p_a", 0.0);
    c.bias = attention::parse_bias_kind(get_or<std::string>(model, "bias", "none"));
    c.memory_slots = get_or<std::size_t>(model, "memory_slots", 0);
    c.memory_gate = get_or(model, "memory_gate", false);
    auto f = std::make_unique<transformer::TransformerForecaster>(c, seed);
    f->config_ = json{{"kind", kind},
                      {"hidden", c.d_h},
                      {"layers", c.layers},
                      {"heads", c.heads},
                      {"mlp_hidden", c.hidden()},
                      {"ln", transformer::to_string(c.ln)},
                      {"gate_att", std::string(1, gating::to_letter(c.gate_att))},
                      {"gate_mlp", std::string(1, gating::to_letter(c.gate_mlp))},
                      {"activation", to_string(c.activation)},
                      {"p_e", c.p_e},
                      {"p_f", c.p_f},
                      {"p_a", c.p_a},
                      {"bias", attention::to_string(c.bias)},
                      {"memory_slots", c.memory_slots},
                      {"memory_gate", c.memory_slots > 0 && c.memory_gate}};
    return f;
  }
  reject_unknown(model, {"kind", "hidden", "layers", "depth", "gate", "attention", "heads", "bias", "attention_dropout"});
  rnn::CellConfig c;
  c.cell = rnn::parse_cell_kind(kind);
  c.d_o = observable_dim;
  c.window = window;
  c.d_h = model.at("hidden").get<std::size_t>();
  c.layers = get_or<std::size_t>(model, "layers", 1);
  c.depth = get_or<std::size_t>(model, "depth", 1);
  const char* canonical = c.cell == rnn::CellKind::LSTM ? "D" : "C";
  c.gate = gating::parse_gate_kind(get_or<std::string>(model, "gate", canonical));
  c.attention = rnn::parse_attention_source(get_or<std::string>(model, "attention", "off"));
  c.heads = get_or<std::size_t>(model, "heads", 1);
  c.bias = attention::parse_bias_kind(get_or<std::string>(model, "bias", "none"));
  c.attention_dropout = get_or(model, "attention_dropout", 0.0);
  auto f = std::make_unique<rnn::RnnForecaster>(c, seed);
  f->config_ = json{{"kind", rnn::to_string(c.cell)},
                    {"hidden", c.d_h},
                    {"layers", c.layers},
                    {"gate", std::string(1, gating::to_letter(c.gate))},
                    {"attention", rnn::to_string(c.attention)},
                    {"heads", c.heads},
                    {"bias", attention::to_string(c.bias)},
                    {"attention_dropout", c.attention_dropout}};
  if (c.cell == rnn::CellKind::RHN) f->config_["depth"] = c.depth;
  if (c.attention == rnn::AttentionSource::Off) {
    // Attention settings are inert without attention; canonicalise them so
    // equivalent grid points share one run id.
    f->config_["heads"] = 1;
    f->config_["bias"] = "none";
    f->config_["attention_dropout"] = 0.0;
  }
  return f;
}

}  // namespace seqmech
