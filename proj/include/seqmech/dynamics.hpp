#pragma once

// Ground-truth generators: the three-scale Lorenz-96 system integrated with
// classical RK4, and the Kuramoto-Sivashinsky equation integrated with
// ETDRK4 on a periodic Fourier grid.

#include <complex>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

#include "seqmech/dataset.hpp"

namespace seqmech::dynamics {

/// Raised when an integrator produces a non-finite state.
class IntegrationError : public std::runtime_error {
 public:
  IntegrationError(const std::string& what, std::size_t step) : std::runtime_error(what), step_(step) {}
  std::size_t step() const { return step_; }

 private:
  std::size_t step_;
};

using Rhs = std::function<void(std::span<const double> state, std::span<double> out)>;

/// One classical RK4 step in place. `step_index` is reported on blow-up.
void rk4_step(const Rhs& rhs, std::vector<double>& state, double dt, std::size_t step_index = 0);

// --- Lorenz-96 ------------------------------------------------------------

struct Lorenz96Config {
  std::size_t K = 8, J = 8, I = 8;
  double F = 10.0;
  double h = 1.0;
  double g_z = 1.0;
  double b = 10.0, c = 10.0, d = 10.0, e = 10.0;
  double dt = 0.005;
  double total_time = 2000.0;
  double transient_time = 1000.0;
  std::size_t train_samples = 200000;
  double lyapunov = 2.2;
  std::uint64_t seed = 42;

  /// K + K*J + K*J*I
  std::size_t state_dim() const { return K + K * J + K * J * I; }
};

/// State layout: X[k], then Y[k*J + j], then Z[(k*J + j)*I + i]. Y and Z each
/// form one periodic ring, so Y_{J+1,k} = Y_{1,k+1}.
void lorenz96_rhs(const Lorenz96Config& cfg, std::span<const double> state, std::span<double> out);
std::vector<double> lorenz96_rhs(const Lorenz96Config& cfg, const std::vector<double>& state);

// --- Kuramoto-Sivashinsky -------------------------------------------------

struct KSConfig {
  double nu = 1.0;
  double L = 60.0;
  std::size_t nodes = 128;
  double dt = 0.25;
  std::size_t samples = 240000;
  std::size_t transient_samples = 10000;
  double lyapunov = 0.08844;
  std::uint64_t seed = 42;
  bool nonlinear = true;
  std::size_t contour_points = 16;
};

/// ETDRK4 integrator for u_t = -nu u_xxxx - u_xx - u u_x on the half spectrum
/// of a real field (nodes/2 + 1 modes).
class KSSolver {
 public:
  using Spectrum = std::vector<std::complex<double>>;

  explicit KSSolver(const KSConfig& cfg);
  ~KSSolver();
  KSSolver(const KSSolver&) = delete;
  KSSolver& operator=(const KSSolver&) = delete;

  void step(Spectrum& v, std::size_t step_index = 0);
  Spectrum to_spectral(const std::vector<double>& u);
  std::vector<double> to_physical(const Spectrum& v);

  std::size_t modes() const { return wavenumber_.size(); }
  /// Linear symbol k^2 - nu k^4 per mode.
  const std::vector<double>& linear_symbol() const { return lin_; }
  const std::vector<double>& wavenumber() const { return wavenumber_; }
  /// exp(dt*l), and the contour-averaged ETDRK4 coefficients.
  const std::vector<double>& E() const { return e_; }
  const std::vector<double>& Q() const { return q_; }
  const std::vector<double>& f1() const { return f1_; }
  const std::vector<double>& f2() const { return f2_; }
  const std::vector<double>& f3() const { return f3_; }

 private:
  Spectrum nonlinear(const Spectrum& v);

  KSConfig cfg_;
  std::vector<double> wavenumber_, lin_, e_, e2_, q_, f1_, f2_, f3_;
  std::vector<bool> keep_;  // dealiasing mask
  std::vector<double> real_buf_;
  std::vector<std::complex<double>> spec_buf_;
  void* forward_ = nullptr;
  void* backward_ = nullptr;
};

// --- dataset generation ---------------------------------------------------

/// Observes X only (d_o = K). Rows are solver steps after the transient;
/// the first train_samples rows form the training split.
TrajectoryDataset generate_lorenz96(const Lorenz96Config& cfg);
/// Observes all nodes (d_o = nodes). Post-transient samples are split in half.
TrajectoryDataset generate_ks(const KSConfig& cfg);

}  // namespace seqmech::dynamics
