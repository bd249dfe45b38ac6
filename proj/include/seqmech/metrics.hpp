#pragma once

// Forecast skill metrics: normalised RMSE, valid prediction time and
// power-spectral-density comparison.

#include <cstddef>
#include <span>
#include <vector>

#include "seqmech/tensor.hpp"

namespace seqmech::metrics {

inline constexpr double kDefaultThreshold = 0.5;

/// sqrt(mean_i ((pred_i - truth_i) / sigma_i)^2) over the state dimensions.
double nrmse(std::span<const double> truth, std::span<const double> pred, std::span<const double> sigma);

/// Row-wise nrmse of two [T x d] trajectories. Non-finite predictions give +inf.
std::vector<double> nrmse_curve(const Tensor& truth, const Tensor& pred, std::span<const double> sigma);

/// Number of leading entries strictly below eps.
std::size_t valid_steps(std::span<const double> curve, double eps);

/// valid_steps * dt * lyapunov, i.e. valid time in Lyapunov times.
double vpt(std::span<const double> curve, double eps, double lyapunov, double dt);

struct Spectrum {
  std::vector<double> freq;  // cycles per unit time, 0 .. Nyquist
  std::vector<double> db;    // 20 log10(2 |U|)
};

/// Welch-averaged amplitude spectrum of each column of [N x d] series, with
/// |U|^2 averaged over segments, columns and series before conversion to dB.
/// U is the DFT of a segment divided by its length (rectangular window).
/// `segments` overlapping by half; 1 uses the whole record.
Spectrum psd(std::span<const Tensor> series, double dt = 1.0, std::size_t segments = 8);
Spectrum psd(const Tensor& series, double dt = 1.0, std::size_t segments = 8);

/// Mean squared difference of two dB spectra.
double psd_mse(std::span<const double> a, std::span<const double> b);

}  // namespace seqmech::metrics
