#pragma once

// Free-run evaluation of a trained model over initial conditions drawn from a
// dataset range.

#include <cstddef>
#include <cstdint>
#include <vector>

#include "json.hpp"
#include "seqmech/dataset.hpp"
#include "seqmech/forecaster.hpp"
#include "seqmech/metrics.hpp"

namespace seqmech::metrics {

struct EvalConfig {
  std::size_t n_ics = 100;
  std::size_t horizon = 0;      // steps; 0 derives it from horizon_lyap
  double horizon_lyap = 5.0;    // in Lyapunov times (days for real-world data)
  std::size_t warmup = 0;       // teacher-forced rows before each forecast; 0 means S
  double eps = kDefaultThreshold;
  std::size_t psd_segments = 8;
  std::uint64_t seed = 42;
};

struct EvalReport {
  std::vector<std::size_t> ic_starts;          // first forecast row of each IC
  std::vector<std::vector<double>> curves;     // per-IC NRMSE
  std::vector<double> mean_curve, stderr_curve;
  std::vector<double> vpt;
  double vpt_mean = 0.0, vpt_max = 0.0;
  std::vector<bool> diverged;
  Spectrum psd_true, psd_pred;                 // empty pred if every IC diverged
  double psd_mse = 0.0;                        // NaN when undefined
  double dt = 1.0, lyapunov = 1.0;
};

/// Steps covering `lyap` Lyapunov times: ceil(lyap / (dt * lyapunov)).
std::size_t horizon_steps(double lyap, double dt, double lyapunov);

/// Draws n_ics non-overlapping (warmup + horizon)-row windows from rows
/// [begin, end) of the dataset, forecasts each from its warmup in
/// standardised space and scores the continuation.
EvalReport evaluate(Forecaster& model, const TrajectoryDataset& ds, std::size_t begin, std::size_t end,
                    std::size_t window, const EvalConfig& cfg);

/// The test range [val_end, N).
EvalReport evaluate_test(Forecaster& model, const TrajectoryDataset& ds, std::size_t window, const EvalConfig& cfg);

nlohmann::json to_json(const EvalReport& r);

}  // namespace seqmech::metrics
