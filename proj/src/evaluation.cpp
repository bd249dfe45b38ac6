#include "seqmech/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "seqmech/training.hpp"

namespace seqmech::metrics {

std::size_t horizon_steps(double lyap, double dt, double lyapunov) {
  if (!(lyap > 0.0 && dt > 0.0 && lyapunov > 0.0)) throw std::invalid_argument("horizon needs positive scales");
  // The epsilon keeps exact multiples from rounding up a step.
  return static_cast<std::size_t>(std::ceil(lyap / (dt * lyapunov) - 1e-9));
}

EvalReport evaluate(Forecaster& model, const TrajectoryDataset& ds, std::size_t begin, std::size_t end,
                    std::size_t window, const EvalConfig& cfg) {
  ds.validate();
  if (cfg.n_ics == 0) throw std::invalid_argument("evaluation needs at least one initial condition");
  const std::size_t W = cfg.warmup ? cfg.warmup : window;
  const std::size_t H = cfg.horizon ? cfg.horizon : horizon_steps(cfg.horizon_lyap, ds.dt, ds.lyapunov);
  if (end > ds.rows() || begin >= end) throw std::invalid_argument("evaluation range out of bounds");
  const std::size_t span = W + H, slots = (end - begin) / span;
  if (slots < cfg.n_ics) {
    throw std::invalid_argument("range of " + std::to_string(end - begin) + " rows holds " + std::to_string(slots) +
                                " windows of " + std::to_string(span) + ", need " + std::to_string(cfg.n_ics));
  }
  std::vector<std::size_t> order(slots);
  for (std::size_t i = 0; i < slots; ++i) order[i] = i;
  Rng rng = Rng(cfg.seed).derive("eval-ics");
  std::shuffle(order.begin(), order.end(), rng.engine());
  order.resize(cfg.n_ics);
  std::sort(order.begin(), order.end());

  EvalReport r;
  r.dt = ds.dt;
  r.lyapunov = ds.lyapunov;
  const std::size_t d = ds.dims();
  const std::vector<double> unit(d, 1.0);
  std::vector<Tensor> truths, preds;
  for (std::size_t slot : order) {
    const std::size_t start = begin + slot * span;
    const Tensor warm = standardize(ds, rows(ds.data, start, start + W));
    const Tensor truth = standardize(ds, rows(ds.data, start + W, start + span));
    auto run = training::free_run_forecast(model, warm, H, window);
    r.ic_starts.push_back(start + W);
    r.curves.push_back(nrmse_curve(truth, run.pred, unit));
    r.vpt.push_back(vpt(r.curves.back(), cfg.eps, ds.lyapunov, ds.dt));
    r.diverged.push_back(run.diverged);
    truths.push_back(truth);
    if (!run.diverged) preds.push_back(run.pred);
  }
  const double n = static_cast<double>(cfg.n_ics);
  r.mean_curve.assign(H, 0.0);
  r.stderr_curve.assign(H, 0.0);
  for (std::size_t t = 0; t < H; ++t) {
    for (const auto& c : r.curves) r.mean_curve[t] += c[t];
    r.mean_curve[t] /= n;
    if (cfg.n_ics > 1 && std::isfinite(r.mean_curve[t])) {
      double var = 0.0;
      for (const auto& c : r.curves) var += (c[t] - r.mean_curve[t]) * (c[t] - r.mean_curve[t]);
      r.stderr_curve[t] = std::sqrt(var / (n - 1.0) / n);
    }
  }
  for (double v : r.vpt) {
    r.vpt_mean += v / n;
    r.vpt_max = std::max(r.vpt_max, v);
  }
  r.psd_true = psd(truths, ds.dt, cfg.psd_segments);
  if (preds.empty()) {
    r.psd_mse = std::numeric_limits<double>::quiet_NaN();
  } else {
    r.psd_pred = psd(preds, ds.dt, cfg.psd_segments);
    r.psd_mse = psd_mse(r.psd_pred.db, r.psd_true.db);
  }
  return r;
}

EvalReport evaluate_test(Forecaster& model, const TrajectoryDataset& ds, std::size_t window, const EvalConfig& cfg) {
  return evaluate(model, ds, ds.val_end, ds.rows(), window, cfg);
}

nlohmann::json to_json(const EvalReport& r) {
  auto finite_or_null = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
  nlohmann::json curve = nlohmann::json::array();
  for (double v : r.mean_curve) curve.push_back(finite_or_null(v));
  std::size_t diverged = 0;
  for (bool b : r.diverged) diverged += b;
  return {{"n_ics", r.vpt.size()},
          {"ic_starts", r.ic_starts},
          {"vpt", r.vpt},
          {"vpt_mean", r.vpt_mean},
          {"vpt_max", r.vpt_max},
          {"diverged", diverged},
          {"psd_mse", finite_or_null(r.psd_mse)},
          {"mean_nrmse", curve},
          {"dt", r.dt},
          {"lyapunov", r.lyapunov}};
}

}  // namespace seqmech::metrics
