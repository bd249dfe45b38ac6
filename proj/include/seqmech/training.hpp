#pragma once

// Teacher-forced BPTT over sub-sequences, AdaBelief updates, a step-wise
// learning-rate schedule with early stopping, and free-running forecasts.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"
#include "seqmech/dataset.hpp"
#include "seqmech/forecaster.hpp"

namespace seqmech::training {

struct TrainConfig {
  std::size_t seq_len = 32;   // S
  std::size_t pred_len = 32;  // S', loss covers the last S' positions
  std::size_t batch = 16;
  double lr = 1e-3;
  double gamma = 0.1;
  std::size_t patience = 10;
  std::size_t rounds = 5;
  double weight_decay = 0.0;
  double clip = 1.0;            // global gradient-norm bound; 0 disables
  std::size_t max_epochs = 500;
  std::size_t max_batches = 0;  // per epoch; 0 = every chunk
  double val_fraction = 0.1;    // used when the dataset has no validation rows
  std::size_t divergence_epochs = 3;

  void validate() const;
};

nlohmann::json to_json(const TrainConfig& c);
/// Missing keys keep their defaults; unknown keys are rejected.
TrainConfig train_config_from_json(const nlohmann::json& j);

// --- batching -------------------------------------------------------------

struct Batch {
  Tensor inputs;   // [B x S x d]
  Tensor targets;  // [B x S x d], inputs shifted forward by one row
};

/// Start rows of the non-overlapping length-S chunks of an n-row series:
/// 0, S, 2S, ... with floor((n - 1) / S) entries.
std::vector<std::size_t> chunk_starts(std::size_t n, std::size_t seq_len);

/// Stateless batching: chunks in shuffled order (identity order if rng is
/// null), grouped into batches of at most `batch`.
std::vector<Batch> shuffled_batches(const Tensor& series, std::size_t seq_len, std::size_t batch, Rng* rng);

/// Stateful batching: `lanes` contiguous streams starting after `offset` rows.
/// Batch k holds chunk k of every lane, so carried state continues each lane.
std::vector<Batch> lane_batches(const Tensor& series, std::size_t seq_len, std::size_t lanes, std::size_t offset);

/// MSE over the last `pred_len` time steps of [B x S x d] predictions.
Var teacher_forced_loss(Var preds, const Tensor& targets, std::size_t pred_len);

// --- optimisation ---------------------------------------------------------

/// AdaBelief with bias correction and decoupled weight decay.
class AdaBelief {
 public:
  explicit AdaBelief(ParameterStore& params, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-16);
  /// Applies one update from the accumulated gradients. Returns false (and
  /// leaves everything untouched) if any gradient is non-finite.
  bool step(double lr, double weight_decay = 0.0);
  std::size_t steps() const { return t_; }

 private:
  std::vector<Parameter*> params_;
  std::vector<Tensor> m_, s_;
  double beta1_, beta2_, eps_;
  std::size_t t_ = 0;
};

/// Scales gradients so their global L2 norm is at most max_norm. Returns the
/// norm before clipping.
double clip_grad_norm(ParameterStore& params, double max_norm);

enum class ScheduleAction { Improved, Continue, Decay, Stop };
std::string to_string(ScheduleAction a);

/// Strict-improvement tracking; P non-improving epochs decay the rate by
/// gamma, and the R-th decay stops training.
class StepSchedule {
 public:
  StepSchedule(double lr, double gamma, std::size_t patience, std::size_t rounds, double baseline);
  ScheduleAction update(double val_loss);
  double lr() const { return lr_; }
  double best() const { return best_; }
  std::size_t decays() const { return decays_; }

 private:
  double lr_, gamma_;
  std::size_t patience_, rounds_;
  double best_;
  std::size_t stale_ = 0, decays_ = 0;
};

// --- training loop --------------------------------------------------------

struct EpochLog {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double lr = 0.0;
  double grad_norm = 0.0;  // mean pre-clip norm over the epoch
  std::size_t skipped_steps = 0;
  double seconds = 0.0;
  std::string event;  // improved / continue / decay / stop / non-finite
};

struct TrainResult {
  std::vector<EpochLog> log;
  double baseline_val = 0.0;
  double best_val = 0.0;
  std::size_t decays = 0;
  std::string status;  // converged, max_epochs or diverged
};

nlohmann::json to_json(const TrainResult& r);

/// Row ranges used for fitting: [0, train_end) and [val_begin, val_end). When
/// the dataset has no validation rows the last val_fraction of train is held out.
struct SplitRanges {
  std::size_t train_end = 0, val_begin = 0, val_end = 0;
};
SplitRanges fitting_ranges(const TrajectoryDataset& ds, double val_fraction);

/// Standardised train and validation series.
struct Splits {
  Tensor train, val;
};
Splits training_splits(const TrajectoryDataset& ds, double val_fraction);

/// Mean teacher-forced loss over a series in eval mode (fixed chunk order).
double evaluation_loss(Forecaster& model, const Tensor& series, const TrainConfig& cfg);

using EpochCallback = std::function<void(const EpochLog&)>;

/// Trains on the dataset's train split and leaves the best weights loaded.
TrainResult train(Forecaster& model, const TrajectoryDataset& ds, const TrainConfig& cfg, std::uint64_t seed,
                  const EpochCallback& on_epoch = {});

// --- forecasting ----------------------------------------------------------

struct FreeRun {
  Tensor pred;  // [horizon x d]; rows from the divergence point on are NaN
  bool diverged = false;
  std::size_t diverged_at = 0;
};

/// Teacher-forces `warmup` [W x d] (stateless models see its last S rows), then
/// feeds predictions back for `horizon` steps. Works in whatever units the
/// model was trained in.
FreeRun free_run_forecast(Forecaster& model, const Tensor& warmup, std::size_t horizon, std::size_t window);

// --- checkpoints ----------------------------------------------------------

inline constexpr char kCheckpointMagic[9] = "SQFCKPT1";
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// `config` must hold "model", "observable_dim", "window" and "seed".
void save_checkpoint(const std::filesystem::path& path, const Forecaster& model, const nlohmann::json& config);

struct LoadedCheckpoint {
  std::unique_ptr<Forecaster> model;
  nlohmann::json config;
};
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace seqmech::training
