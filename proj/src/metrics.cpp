#include "seqmech/metrics.hpp"

#include <fftw3.h>

#include <cmath>
#include <complex>
#include <limits>
#include <mutex>
#include <stdexcept>

namespace seqmech::metrics {

double nrmse(std::span<const double> truth, std::span<const double> pred, std::span<const double> sigma) {
  if (truth.size() != pred.size() || truth.size() != sigma.size() || truth.empty()) {
    throw DimensionError("nrmse operands differ in length");
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (!(sigma[i] > 0.0)) throw std::invalid_argument("nrmse needs strictly positive sigma");
    const double e = (pred[i] - truth[i]) / sigma[i];
    acc += e * e;
  }
  return std::sqrt(acc / static_cast<double>(truth.size()));
}

std::vector<double> nrmse_curve(const Tensor& truth, const Tensor& pred, std::span<const double> sigma) {
  if (truth.rank() != 2 || truth.shape() != pred.shape()) {
    throw DimensionError("nrmse curve needs matching [T x d] trajectories, got " + shape_str(truth.shape()) + " and " +
                         shape_str(pred.shape()));
  }
  const std::size_t T = truth.dim(0), d = truth.dim(1);
  std::vector<double> out(T);
  for (std::size_t t = 0; t < T; ++t) {
    std::span<const double> a(truth.storage().data() + t * d, d), b(pred.storage().data() + t * d, d);
    const double v = nrmse(a, b, sigma);
    out[t] = std::isfinite(v) ? v : std::numeric_limits<double>::infinity();
  }
  return out;
}

std::size_t valid_steps(std::span<const double> curve, double eps) {
  std::size_t n = 0;
  while (n < curve.size() && curve[n] < eps) ++n;
  return n;
}

double vpt(std::span<const double> curve, double eps, double lyapunov, double dt) {
  if (!(lyapunov > 0.0) || !(dt > 0.0)) throw std::invalid_argument("vpt needs positive lyapunov exponent and dt");
  return static_cast<double>(valid_steps(curve, eps)) * dt * lyapunov;
}

namespace {
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}
}  // namespace

Spectrum psd(std::span<const Tensor> series, double dt, std::size_t segments) {
  if (series.empty()) throw std::invalid_argument("psd of an empty set of series");
  if (segments == 0) throw std::invalid_argument("psd needs at least one segment");
  std::size_t n = 0;
  for (const auto& s : series) {
    if (s.rank() != 2 || s.dim(0) < 2) throw DimensionError("psd needs [N x d] series with N >= 2");
    n = n ? std::min(n, s.dim(0)) : s.dim(0);
  }
  // Segment length such that `segments` half-overlapping segments span n rows.
  std::size_t seg = segments == 1 ? n : 2 * n / (segments + 1);
  if (seg < 2) {
    seg = n;
    segments = 1;
  }
  const std::size_t hop = segments == 1 ? 0 : seg / 2;
  const std::size_t bins = seg / 2 + 1;

  std::vector<double> in(seg);
  std::vector<std::complex<double>> out(bins);
  fftw_plan plan;
  {
    std::lock_guard lock(planner_mutex());
    plan = fftw_plan_dft_r2c_1d(static_cast<int>(seg), in.data(), reinterpret_cast<fftw_complex*>(out.data()),
                                FFTW_ESTIMATE);
  }
  std::vector<double> power(bins, 0.0);
  std::size_t count = 0;
  for (const auto& s : series) {
    const std::size_t d = s.dim(1);
    for (std::size_t c = 0; c < d; ++c) {
      for (std::size_t k = 0; k < segments; ++k) {
        const std::size_t start = k * hop;
        for (std::size_t i = 0; i < seg; ++i) in[i] = s[(start + i) * d + c];
        fftw_execute(plan);
        for (std::size_t b = 0; b < bins; ++b) power[b] += std::norm(out[b] / static_cast<double>(seg));
        ++count;
      }
    }
  }
  {
    std::lock_guard lock(planner_mutex());
    fftw_destroy_plan(plan);
  }
  Spectrum sp;
  sp.freq.resize(bins);
  sp.db.resize(bins);
  for (std::size_t b = 0; b < bins; ++b) {
    sp.freq[b] = static_cast<double>(b) / (static_cast<double>(seg) * dt);
    const double p = 4.0 * power[b] / static_cast<double>(count);  // (2|U|)^2
    sp.db[b] = 10.0 * std::log10(std::max(p, 1e-12));
  }
  return sp;
}

Spectrum psd(const Tensor& series, double dt, std::size_t segments) {
  return psd(std::span<const Tensor>(&series, 1), dt, segments);
}

double psd_mse(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.empty()) throw DimensionError("psd_mse needs equal-length non-empty spectra");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
  return acc / static_cast<double>(a.size());
}

}  // namespace seqmech::metrics
