#pragma once

// Common contract for every sequence model: given the current observable and a
// history (recurrent state or a window of past observables), predict the next
// observable and return the updated history.

#include <cstddef>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"
#include "seqmech/autodiff.hpp"

namespace seqmech {

/// Model-specific carried state. Stateful models keep hidden vectors here;
/// stateless ones keep their observable window.
struct ModelState {
  std::vector<Tensor> parts;
};

class Forecaster {
 public:
  virtual ~Forecaster() = default;

  /// "lstm", "gru", "rhn" or "transformer".
  virtual std::string kind() const = 0;
  virtual std::size_t observable_dim() const = 0;
  /// True when state must be carried between consecutive training chunks.
  virtual bool stateful() const = 0;
  virtual ModelState initial_state(std::size_t batch) const = 0;

  /// inputs [B x T x d_o] -> predictions [B x T x d_o], row t forecasting t+1.
  /// `state` is read at entry and replaced (detached) at exit.
  virtual Var forward_chunk(Tape& tape, Var inputs, ModelState& state, Mode mode, Rng& rng) = 0;

  /// Single evaluation-mode step: obs [B x d_o] -> prediction [B x d_o].
  virtual Tensor step(const Tensor& obs, ModelState& state);

  ParameterStore& params() { return params_; }
  const ParameterStore& params() const { return params_; }
  /// Normalised model configuration (the "model" object of a run config).
  const nlohmann::json& config() const { return config_; }

 protected:
  friend std::unique_ptr<Forecaster> make_forecaster(const nlohmann::json&, std::size_t, std::size_t, std::uint64_t);

  ParameterStore params_;
  nlohmann::json config_;
};

/// Builds a model from its JSON description. `window` is the training
/// sub-sequence length S; it bounds attention windows and the history cache.
std::unique_ptr<Forecaster> make_forecaster(const nlohmann::json& model, std::size_t observable_dim, std::size_t window,
                                            std::uint64_t seed);

}  // namespace seqmech
