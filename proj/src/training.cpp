#include "seqmech/training.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>
#include <stdexcept>

namespace seqmech::training {

using nlohmann::json;

void TrainConfig::validate() const {
  if (seq_len == 0) throw std::invalid_argument("seq_len must be positive");
  if (pred_len == 0 || pred_len > seq_len) throw std::invalid_argument("pred_len must lie in [1, seq_len]");
  if (batch == 0) throw std::invalid_argument("batch must be positive");
  if (!(lr > 0.0)) throw std::invalid_argument("lr must be positive");
  if (!(gamma > 0.0 && gamma < 1.0)) throw std::invalid_argument("gamma must lie in (0, 1)");
  if (patience == 0 || rounds == 0) throw std::invalid_argument("patience and rounds must be at least 1");
  if (weight_decay < 0.0 || clip < 0.0) throw std::invalid_argument("weight_decay and clip must be non-negative");
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) throw std::invalid_argument("val_fraction must lie in (0, 1)");
  if (divergence_epochs == 0) throw std::invalid_argument("divergence_epochs must be at least 1");
}

json to_json(const TrainConfig& c) {
  return {{"seq_len", c.seq_len},       {"pred_len", c.pred_len},     {"batch", c.batch},
          {"lr", c.lr},                 {"gamma", c.gamma},           {"patience", c.patience},
          {"rounds", c.rounds},         {"weight_decay", c.weight_decay}, {"clip", c.clip},
          {"max_epochs", c.max_epochs}, {"max_batches", c.max_batches}, {"val_fraction", c.val_fraction},
          {"divergence_epochs", c.divergence_epochs}};
}

TrainConfig train_config_from_json(const json& j) {
  if (!j.is_object()) throw std::invalid_argument("train config must be an object");
  TrainConfig c;
  const json defaults = to_json(c);
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!defaults.contains(it.key())) throw std::invalid_argument("unknown train key '" + it.key() + "'");
  c.seq_len = j.value("seq_len", c.seq_len);
  c.pred_len = j.value("pred_len", j.contains("seq_len") && !j.contains("pred_len") ? c.seq_len : c.pred_len);
  c.batch = j.value("batch", c.batch);
  c.lr = j.value("lr", c.lr);
  c.gamma = j.value("gamma", c.gamma);
  c.patience = j.value("patience", c.patience);
  c.rounds = j.value("rounds", c.rounds);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.clip = j.value("clip", c.clip);
  c.max_epochs = j.value("max_epochs", c.max_epochs);
  c.max_batches = j.value("max_batches", c.max_batches);
  c.val_fraction = j.value("val_fraction", c.val_fraction);
  c.divergence_epochs = j.value("divergence_epochs", c.divergence_epochs);
  c.validate();
  return c;
}

// --- batching -------------------------------------------------------------

std::vector<std::size_t> chunk_starts(std::size_t n, std::size_t seq_len) {
  if (seq_len == 0) throw std::invalid_argument("seq_len must be positive");
  std::vector<std::size_t> out;
  for (std::size_t s = 0; s + seq_len + 1 <= n; s += seq_len) out.push_back(s);
  return out;
}

namespace {

void copy_chunk(const Tensor& series, std::size_t start, std::size_t seq_len, Batch& b, std::size_t slot) {
  const std::size_t d = series.dim(1);
  const double* src = series.storage().data();
  std::copy(src + start * d, src + (start + seq_len) * d, b.inputs.storage().begin() + slot * seq_len * d);
  std::copy(src + (start + 1) * d, src + (start + 1 + seq_len) * d, b.targets.storage().begin() + slot * seq_len * d);
}

void check_series(const Tensor& series, std::size_t seq_len) {
  if (series.rank() != 2) throw DimensionError("series must be [N x d]");
  if (series.dim(0) < seq_len + 1) {
    throw std::invalid_argument("split of " + std::to_string(series.dim(0)) + " rows is too short for seq_len " +
                                std::to_string(seq_len));
  }
}

}  // namespace

std::vector<Batch> shuffled_batches(const Tensor& series, std::size_t seq_len, std::size_t batch, Rng* rng) {
  check_series(series, seq_len);
  auto starts = chunk_starts(series.dim(0), seq_len);
  if (rng) std::shuffle(starts.begin(), starts.end(), rng->engine());
  const std::size_t d = series.dim(1);
  std::vector<Batch> out;
  for (std::size_t i = 0; i < starts.size(); i += batch) {
    const std::size_t n = std::min(batch, starts.size() - i);
    Batch b{Tensor(Shape{n, seq_len, d}), Tensor(Shape{n, seq_len, d})};
    for (std::size_t k = 0; k < n; ++k) copy_chunk(series, starts[i + k], seq_len, b, k);
    out.push_back(std::move(b));
  }
  return out;
}

std::vector<Batch> lane_batches(const Tensor& series, std::size_t seq_len, std::size_t lanes, std::size_t offset) {
  check_series(series, seq_len);
  if (lanes == 0) throw std::invalid_argument("lane count must be positive");
  const std::size_t n = series.dim(0);
  if (offset + 1 >= n) throw std::invalid_argument("lane offset beyond the series");
  const std::size_t lane_len = (n - 1 - offset) / lanes;
  const std::size_t chunks = lane_len / seq_len;
  if (chunks == 0) {
    throw std::invalid_argument("series of " + std::to_string(n) + " rows cannot hold " + std::to_string(lanes) +
                                " lanes of seq_len " + std::to_string(seq_len));
  }
  const std::size_t d = series.dim(1);
  std::vector<Batch> out;
  for (std::size_t c = 0; c < chunks; ++c) {
    Batch b{Tensor(Shape{lanes, seq_len, d}), Tensor(Shape{lanes, seq_len, d})};
    for (std::size_t l = 0; l < lanes; ++l) copy_chunk(series, offset + l * lane_len + c * seq_len, seq_len, b, l);
    out.push_back(std::move(b));
  }
  return out;
}

Var teacher_forced_loss(Var preds, const Tensor& targets, std::size_t pred_len) {
  if (preds.value().rank() != 3 || preds.shape() != targets.shape()) {
    throw DimensionError("loss needs matching [B x S x d] predictions and targets, got " + shape_str(preds.shape()) +
                         " and " + shape_str(targets.shape()));
  }
  const std::size_t S = preds.dim(1);
  if (pred_len == 0 || pred_len > S) throw std::invalid_argument("pred_len must lie in [1, S]");
  Tape& t = *preds.tape;
  Var target = t.constant(targets);
  Var p = preds, y = target;
  if (pred_len < S) {
    p = slice(preds, 1, S - pred_len, pred_len);
    y = slice(target, 1, S - pred_len, pred_len);
  }
  Var e = sub(p, y);
  return mean(mul(e, e));
}

// --- optimisation ---------------------------------------------------------

AdaBelief::AdaBelief(ParameterStore& params, double beta1, double beta2, double eps)
    : beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (Parameter* p : params.all()) {
    if (!p->trainable) continue;
    params_.push_back(p);
    m_.emplace_back(p->value.shape());
    s_.emplace_back(p->value.shape());
  }
}

bool AdaBelief::step(double lr, double weight_decay) {
  for (Parameter* p : params_)
    if (!p->grad.empty() && !p->grad.all_finite()) return false;
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Parameter& p = *params_[k];
    const bool has_grad = p.grad.size() == p.value.size();
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = has_grad ? p.grad[i] : 0.0;
      double& m = m_[k][i];
      double& s = s_[k][i];
      m = beta1_ * m + (1.0 - beta1_) * g;
      s = beta2_ * s + (1.0 - beta2_) * (g - m) * (g - m) + eps_;
      if (weight_decay > 0.0) p.value[i] *= 1.0 - lr * weight_decay;
      p.value[i] -= lr * (m / c1) / (std::sqrt(s / c2) + eps_);
    }
  }
  return true;
}

double clip_grad_norm(ParameterStore& params, double max_norm) {
  double sq = 0.0;
  for (Parameter* p : params.all())
    for (double g : p->grad.storage()) sq += g * g;
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm && std::isfinite(norm)) {
    const double f = max_norm / norm;
    for (Parameter* p : params.all())
      for (double& g : p->grad.storage()) g *= f;
  }
  return norm;
}

std::string to_string(ScheduleAction a) {
  switch (a) {
    case ScheduleAction::Improved: return "improved";
    case ScheduleAction::Continue: return "continue";
    case ScheduleAction::Decay: return "decay";
    case ScheduleAction::Stop: return "stop";
  }
  return "?";
}

StepSchedule::StepSchedule(double lr, double gamma, std::size_t patience, std::size_t rounds, double baseline)
    : lr_(lr), gamma_(gamma), patience_(patience), rounds_(rounds),
      best_(std::isfinite(baseline) ? baseline : std::numeric_limits<double>::infinity()) {}

ScheduleAction StepSchedule::update(double val_loss) {
  if (val_loss < best_) {
    best_ = val_loss;
    stale_ = 0;
    return ScheduleAction::Improved;
  }
  if (++stale_ < patience_) return ScheduleAction::Continue;
  stale_ = 0;
  ++decays_;
  lr_ *= gamma_;
  return decays_ >= rounds_ ? ScheduleAction::Stop : ScheduleAction::Decay;
}

// --- training loop --------------------------------------------------------

json to_json(const TrainResult& r) {
  json log = json::array();
  for (const auto& e : r.log) {
    log.push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"val_loss", e.val_loss}, {"lr", e.lr},
                   {"grad_norm", e.grad_norm}, {"skipped_steps", e.skipped_steps}, {"seconds", e.seconds},
                   {"event", e.event}});
  }
  return {{"log", log}, {"baseline_val", r.baseline_val}, {"best_val", r.best_val}, {"decays", r.decays},
          {"status", r.status}};
}

SplitRanges fitting_ranges(const TrajectoryDataset& ds, double val_fraction) {
  ds.validate();
  SplitRanges r{ds.train_end, ds.train_end, ds.val_end};
  if (r.val_end == r.val_begin) {
    const auto held = static_cast<std::size_t>(std::floor(static_cast<double>(ds.train_end) * val_fraction));
    r.train_end = r.val_begin = ds.train_end - held;
    r.val_end = ds.train_end;
  }
  if (r.train_end == 0 || r.val_end == r.val_begin) throw std::invalid_argument("training or validation split is empty");
  return r;
}

Splits training_splits(const TrajectoryDataset& ds, double val_fraction) {
  const auto r = fitting_ranges(ds, val_fraction);
  return {standardize(ds, rows(ds.data, 0, r.train_end)), standardize(ds, rows(ds.data, r.val_begin, r.val_end))};
}

namespace {

std::vector<Batch> epoch_batches(const Forecaster& model, const Tensor& series, const TrainConfig& cfg, Rng* rng) {
  if (!model.stateful()) return shuffled_batches(series, cfg.seq_len, cfg.batch, rng);
  // Lanes shrink when the series is short (small validation splits).
  const std::size_t n = series.dim(0);
  const std::size_t lanes = std::max<std::size_t>(1, std::min(cfg.batch, (n - 1) / cfg.seq_len));
  std::size_t offset = 0;
  if (rng) {
    offset = rng->next() % cfg.seq_len;
    if ((n - 1 - offset) / lanes < cfg.seq_len) offset = 0;
  }
  return lane_batches(series, cfg.seq_len, lanes, offset);
}

std::vector<Tensor> snapshot(const Forecaster& model) {
  std::vector<Tensor> out;
  for (const Parameter* p : model.params().all()) out.push_back(p->value);
  return out;
}

void restore(Forecaster& model, const std::vector<Tensor>& values) {
  auto params = model.params().all();
  for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = values[i];
}

}  // namespace

double evaluation_loss(Forecaster& model, const Tensor& series, const TrainConfig& cfg) {
  const auto batches = epoch_batches(model, series, cfg, nullptr);
  ModelState state = model.initial_state(batches.front().inputs.dim(0));
  Rng rng(0);
  double total = 0.0;
  std::size_t count = 0;
  for (const auto& b : batches) {
    Tape tape;
    if (!model.stateful()) state = model.initial_state(b.inputs.dim(0));
    Var preds = model.forward_chunk(tape, tape.constant(b.inputs), state, Mode::Eval, rng);
    const double loss = teacher_forced_loss(preds, b.targets, cfg.pred_len).value().item();
    total += loss * static_cast<double>(b.inputs.dim(0));
    count += b.inputs.dim(0);
  }
  return total / static_cast<double>(count);
}

TrainResult train(Forecaster& model, const TrajectoryDataset& ds, const TrainConfig& cfg, std::uint64_t seed,
                  const EpochCallback& on_epoch) {
  cfg.validate();
  if (ds.dims() != model.observable_dim()) throw DimensionError("dataset and model observable dims differ");
  const Splits splits = training_splits(ds, cfg.val_fraction);
  Rng rng = Rng(seed).derive("train");
  Rng shuffle = Rng(seed).derive("shuffle");
  AdaBelief opt(model.params());

  TrainResult result;
  result.baseline_val = evaluation_loss(model, splits.val, cfg);
  StepSchedule schedule(cfg.lr, cfg.gamma, cfg.patience, cfg.rounds, result.baseline_val);
  auto best = snapshot(model);
  std::size_t bad_epochs = 0;
  result.status = "max_epochs";

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    auto batches = epoch_batches(model, splits.train, cfg, &shuffle);
    if (cfg.max_batches && batches.size() > cfg.max_batches) batches.resize(cfg.max_batches);
    EpochLog e;
    e.epoch = epoch;
    e.lr = schedule.lr();
    ModelState state = model.initial_state(batches.front().inputs.dim(0));
    double loss_sum = 0.0, norm_sum = 0.0;
    for (const auto& b : batches) {
      Tape tape;
      if (!model.stateful()) state = model.initial_state(b.inputs.dim(0));
      Var preds = model.forward_chunk(tape, tape.constant(b.inputs), state, Mode::Train, rng);
      Var loss = teacher_forced_loss(preds, b.targets, cfg.pred_len);
      loss_sum += loss.value().item();
      model.params().zero_grad();
      tape.backward(loss);
      const double norm = clip_grad_norm(model.params(), cfg.clip);
      norm_sum += norm;
      if (!std::isfinite(norm) || !opt.step(schedule.lr(), cfg.weight_decay)) {
        ++e.skipped_steps;
        state = model.initial_state(b.inputs.dim(0));
      }
    }
    e.train_loss = loss_sum / static_cast<double>(batches.size());
    e.grad_norm = norm_sum / static_cast<double>(batches.size());
    e.val_loss = evaluation_loss(model, splits.val, cfg);

    if (!std::isfinite(e.train_loss) || !std::isfinite(e.val_loss)) {
      e.event = "non-finite";
      e.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      result.log.push_back(e);
      if (on_epoch) on_epoch(e);
      restore(model, best);
      if (++bad_epochs >= cfg.divergence_epochs) {
        result.status = "diverged";
        break;
      }
      continue;
    }
    bad_epochs = 0;
    const ScheduleAction action = schedule.update(e.val_loss);
    e.event = to_string(action);
    if (action == ScheduleAction::Improved) best = snapshot(model);
    if (action == ScheduleAction::Decay || action == ScheduleAction::Stop) restore(model, best);
    e.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.log.push_back(e);
    if (on_epoch) on_epoch(e);
    if (action == ScheduleAction::Stop) {
      result.status = "converged";
      break;
    }
  }
  restore(model, best);
  result.best_val = schedule.best();
  result.decays = schedule.decays();
  return result;
}

// --- forecasting ----------------------------------------------------------

FreeRun free_run_forecast(Forecaster& model, const Tensor& warmup, std::size_t horizon, std::size_t window) {
  const std::size_t d = model.observable_dim();
  if (warmup.rank() != 2 || warmup.dim(1) != d || warmup.dim(0) == 0) {
    throw DimensionError("warmup must be a non-empty [W x " + std::to_string(d) + "] matrix");
  }
  FreeRun run;
  run.pred = Tensor(Shape{horizon, d});
  if (horizon == 0) return run;
  if (window == 0) throw std::invalid_argument("window must be positive");

  const std::size_t W = warmup.dim(0);
  ModelState state = model.initial_state(1);
  Rng rng(0);
  Tensor next(Shape{1, d});
  auto feed_chunk = [&](std::size_t begin, std::size_t len) {
    Tape tape;
    Tensor x = rows(warmup, begin, begin + len).reshaped({1, len, d});
    Var p = model.forward_chunk(tape, tape.constant(x), state, Mode::Eval, rng);
    std::copy(p.value().storage().end() - static_cast<std::ptrdiff_t>(d), p.value().storage().end(),
              next.storage().begin());
  };
  if (!model.stateful()) {
    const std::size_t len = std::min(W, window);
    feed_chunk(W - len, len);
  } else {
    // Whole windows go through forward_chunk; the tail is stepped so that
    // block-recurrent models only commit memory on complete blocks.
    std::size_t pos = 0;
    for (; pos + window <= W; pos += window) feed_chunk(pos, window);
    for (; pos < W; ++pos) next = model.step(rows(warmup, pos, pos + 1), state);
  }
  for (std::size_t k = 0; k < horizon; ++k) {
    if (k > 0) next = model.step(next, state);
    if (!next.all_finite()) {
      run.diverged = true;
      run.diverged_at = k;
      std::fill(run.pred.storage().begin() + static_cast<std::ptrdiff_t>(k * d), run.pred.storage().end(),
                std::numeric_limits<double>::quiet_NaN());
      break;
    }
    std::copy(next.storage().begin(), next.storage().end(), run.pred.storage().begin() + static_cast<std::ptrdiff_t>(k * d));
  }
  return run;
}

// --- checkpoints ----------------------------------------------------------

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoints are little-endian");

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T take(std::istream& is) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) throw std::runtime_error("truncated checkpoint");
  return v;
}

std::uint64_t config_hash(const std::string& text) { return fnv1a64(text); }

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Forecaster& model, const json& config) {
  for (const char* key : {"model", "observable_dim", "window", "seed"})
    if (!config.contains(key)) throw std::invalid_argument(std::string("checkpoint config lacks '") + key + "'");
  const std::string text = config.dump();
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + tmp.string());
    os.write(kCheckpointMagic, 8);
    put<std::uint32_t>(os, kCheckpointVersion);
    put<std::uint64_t>(os, config_hash(text));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(text.size()));
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    const auto params = model.params().all();
    put<std::uint32_t>(os, static_cast<std::uint32_t>(params.size()));
    for (const Parameter* p : params) {
      put<std::uint32_t>(os, static_cast<std::uint32_t>(p->name.size()));
      os.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
      put<std::uint32_t>(os, static_cast<std::uint32_t>(p->value.rank()));
      for (std::size_t a = 0; a < p->value.rank(); ++a) put<std::uint64_t>(os, p->value.shape()[a]);
      os.write(reinterpret_cast<const char*>(p->value.storage().data()),
               static_cast<std::streamsize>(p->value.size() * sizeof(double)));
    }
    if (!os) throw std::runtime_error("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint " + path.string());
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, kCheckpointMagic, 8) != 0) {
    throw std::runtime_error(path.string() + " is not a checkpoint");
  }
  if (const auto v = take<std::uint32_t>(is); v != kCheckpointVersion) {
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(v));
  }
  const auto hash = take<std::uint64_t>(is);
  const auto len = take<std::uint32_t>(is);
  std::string text(len, '\0');
  if (!is.read(text.data(), len)) throw std::runtime_error("truncated checkpoint config");
  if (config_hash(text) != hash) throw std::runtime_error("checkpoint config hash mismatch in " + path.string());
  LoadedCheckpoint out;
  out.config = json::parse(text);
  out.model = make_forecaster(out.config.at("model"), out.config.at("observable_dim").get<std::size_t>(),
                              out.config.at("window").get<std::size_t>(), out.config.at("seed").get<std::uint64_t>());
  const auto count = take<std::uint32_t>(is);
  if (count != out.model->params().size()) {
    throw std::runtime_error("checkpoint holds " + std::to_string(count) + " tensors, model expects " +
                             std::to_string(out.model->params().size()));
  }
  for (std::uint32_t k = 0; k < count; ++k) {
    std::string name(take<std::uint32_t>(is), '\0');
    if (!is.read(name.data(), static_cast<std::streamsize>(name.size()))) throw std::runtime_error("truncated checkpoint");
    Shape shape(take<std::uint32_t>(is));
    for (auto& s : shape) s = take<std::uint64_t>(is);
    Parameter& p = out.model->params().get(name);
    if (p.value.shape() != shape) {
      throw DimensionError("checkpoint tensor " + name + " has shape " + shape_str(shape) + ", model expects " +
                           shape_str(p.value.shape()));
    }
    if (!is.read(reinterpret_cast<char*>(p.value.storage().data()),
                 static_cast<std::streamsize>(p.value.size() * sizeof(double)))) {
      throw std::runtime_error("truncated checkpoint");
    }
  }
  return out;
}

}  // namespace seqmech::training
