#include "seqmech/dynamics.hpp"

#include <fftw3.h>

#include <cmath>
#include <mutex>
#include <numbers>

#include "seqmech/rng.hpp"

namespace seqmech::dynamics {

void rk4_step(const Rhs& rhs, std::vector<double>& state, double dt, std::size_t step_index) {
  if (!(dt > 0.0)) throw std::invalid_argument("rk4 step size must be positive");
  const std::size_t n = state.size();
  std::vector<double> k1(n), k2(n), k3(n), k4(n), tmp(n);
  rhs(state, k1);
  for (std::size_t i = 0; i < n; ++i) tmp[i] = state[i] + 0.5 * dt * k1[i];
  rhs(tmp, k2);
  for (std::size_t i = 0; i < n; ++i) tmp[i] = state[i] + 0.5 * dt * k2[i];
  rhs(tmp, k3);
  for (std::size_t i = 0; i < n; ++i) tmp[i] = state[i] + dt * k3[i];
  rhs(tmp, k4);
  for (std::size_t i = 0; i < n; ++i) {
    state[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    if (!std::isfinite(state[i])) {
      throw IntegrationError("integration blew up at step " + std::to_string(step_index), step_index);
    }
  }
}

// --- Lorenz-96 ------------------------------------------------------------

void lorenz96_rhs(const Lorenz96Config& cfg, std::span<const double> s, std::span<double> out) {
  const std::size_t K = cfg.K, J = cfg.J, I = cfg.I, nY = K * J, nZ = K * J * I;
  if (s.size() != cfg.state_dim() || out.size() != s.size()) {
    throw DimensionError("lorenz96 state has " + std::to_string(s.size()) + " entries, expected " +
                         std::to_string(cfg.state_dim()));
  }
  const double* X = s.data();
  const double* Y = X + K;
  const double* Z = Y + nY;
  double* dX = out.data();
  double* dY = dX + K;
  double* dZ = dY + nY;
  const double cx = cfg.h * cfg.c / cfg.b, cy = cfg.h * cfg.e / cfg.d;
  auto at = [](const double* v, std::size_t n, std::size_t i, std::ptrdiff_t off) {
    return v[(i + n + static_cast<std::size_t>(off + static_cast<std::ptrdiff_t>(n))) % n];
  };
  for (std::size_t k = 0; k < K; ++k) {
    double sum_y = 0.0;
    for (std::size_t j = 0; j < J; ++j) sum_y += Y[k * J + j];
    dX[k] = at(X, K, k, -1) * (at(X, K, k, 1) - at(X, K, k, -2)) - X[k] + cfg.F - cx * sum_y;
  }
  for (std::size_t n = 0; n < nY; ++n) {
    double sum_z = 0.0;
    for (std::size_t i = 0; i < I; ++i) sum_z += Z[n * I + i];
    dY[n] = -cfg.c * cfg.b * at(Y, nY, n, 1) * (at(Y, nY, n, 2) - at(Y, nY, n, -1)) - cfg.c * Y[n] + cx * X[n / J] -
            cy * sum_z;
  }
  for (std::size_t m = 0; m < nZ; ++m) {
    dZ[m] = cfg.e * cfg.d * at(Z, nZ, m, -1) * (at(Z, nZ, m, 1) - at(Z, nZ, m, -2)) - cfg.g_z * cfg.e * Z[m] +
            cy * Y[m / I];
  }
}

std::vector<double> lorenz96_rhs(const Lorenz96Config& cfg, const std::vector<double>& state) {
  std::vector<double> out(state.size());
  lorenz96_rhs(cfg, state, out);
  return out;
}

// --- Kuramoto-Sivashinsky -------------------------------------------------

namespace {
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}
}  // namespace

KSSolver::KSSolver(const KSConfig& cfg) : cfg_(cfg) {
  const std::size_t n = cfg.nodes;
  if (n < 4 || n % 2 != 0) throw std::invalid_argument("K-S grid needs an even number of nodes >= 4");
  if (!(cfg.dt > 0.0 && cfg.L > 0.0)) throw std::invalid_argument("K-S step and domain length must be positive");
  const std::size_t m = n / 2 + 1;
  const double dt = cfg.dt;
  wavenumber_.resize(m);
  lin_.resize(m);
  e_.resize(m);
  e2_.resize(m);
  q_.resize(m);
  f1_.resize(m);
  f2_.resize(m);
  f3_.resize(m);
  keep_.resize(m);
  const std::size_t M = cfg.contour_points;
  for (std::size_t j = 0; j < m; ++j) {
    // The Nyquist mode carries no derivative information.
    const double k = j == n / 2 ? 0.0 : 2.0 * std::numbers::pi * static_cast<double>(j) / cfg.L;
    wavenumber_[j] = k;
    lin_[j] = k * k - cfg.nu * k * k * k * k;
    keep_[j] = 3 * j < n;
    const double l = dt * lin_[j];
    e_[j] = std::exp(l);
    e2_[j] = std::exp(l / 2.0);
    std::complex<double> q = 0, a = 0, b = 0, c = 0;
    for (std::size_t p = 1; p <= M; ++p) {
      const std::complex<double> r =
          std::exp(std::complex<double>(0.0, std::numbers::pi * (static_cast<double>(p) - 0.5) / static_cast<double>(M)));
      const std::complex<double> z = l + r, ez = std::exp(z), z3 = z * z * z;
      q += (std::exp(z / 2.0) - 1.0) / z;
      a += (-4.0 - z + ez * (4.0 - 3.0 * z + z * z)) / z3;
      b += (2.0 + z + ez * (-2.0 + z)) / z3;
      c += (-4.0 - 3.0 * z - z * z + ez * (4.0 - z)) / z3;
    }
    const double inv = dt / static_cast<double>(M);
    q_[j] = inv * q.real();
    f1_[j] = inv * a.real();
    f2_[j] = inv * b.real();
    f3_[j] = inv * c.real();
  }
  real_buf_.assign(n, 0.0);
  spec_buf_.assign(m, 0.0);
  std::lock_guard lock(planner_mutex());
  forward_ = fftw_plan_dft_r2c_1d(static_cast<int>(n), real_buf_.data(),
                                  reinterpret_cast<fftw_complex*>(spec_buf_.data()), FFTW_ESTIMATE);
  backward_ = fftw_plan_dft_c2r_1d(static_cast<int>(n), reinterpret_cast<fftw_complex*>(spec_buf_.data()),
                                   real_buf_.data(), FFTW_ESTIMATE);
}

KSSolver::~KSSolver() {
  std::lock_guard lock(planner_mutex());
  if (forward_) fftw_destroy_plan(static_cast<fftw_plan>(forward_));
  if (backward_) fftw_destroy_plan(static_cast<fftw_plan>(backward_));
}

KSSolver::Spectrum KSSolver::to_spectral(const std::vector<double>& u) {
  if (u.size() != cfg_.nodes) throw DimensionError("K-S field has the wrong number of nodes");
  real_buf_ = u;
  fftw_execute(static_cast<fftw_plan>(forward_));
  return spec_buf_;
}

std::vector<double> KSSolver::to_physical(const Spectrum& v) {
  if (v.size() != modes()) throw DimensionError("K-S spectrum has the wrong number of modes");
  spec_buf_ = v;
  fftw_execute(static_cast<fftw_plan>(backward_));
  std::vector<double> u = real_buf_;
  for (double& x : u) x /= static_cast<double>(cfg_.nodes);
  return u;
}

KSSolver::Spectrum KSSolver::nonlinear(const Spectrum& v) {
  // -0.5 d/dx (u^2), dealiased by the 2/3 rule.
  std::vector<double> u = to_physical(v);
  for (double& x : u) x *= x;
  Spectrum w = to_spectral(u);
  for (std::size_t j = 0; j < w.size(); ++j) {
    w[j] = keep_[j] ? std::complex<double>(0.0, -0.5 * wavenumber_[j]) * w[j] : 0.0;
  }
  return w;
}

void KSSolver::step(Spectrum& v, std::size_t step_index) {
  if (v.size() != modes()) throw DimensionError("K-S spectrum has the wrong number of modes");
  const std::size_t m = modes();
  if (!cfg_.nonlinear) {
    for (std::size_t j = 0; j < m; ++j) v[j] *= e_[j];
  } else {
    const Spectrum nv = nonlinear(v);
    Spectrum a(m), b(m), c(m);
    for (std::size_t j = 0; j < m; ++j) a[j] = e2_[j] * v[j] + q_[j] * nv[j];
    const Spectrum na = nonlinear(a);
    for (std::size_t j = 0; j < m; ++j) b[j] = e2_[j] * v[j] + q_[j] * na[j];
    const Spectrum nb = nonlinear(b);
    for (std::size_t j = 0; j < m; ++j) c[j] = e2_[j] * a[j] + q_[j] * (2.0 * nb[j] - nv[j]);
    const Spectrum nc = nonlinear(c);
    for (std::size_t j = 0; j < m; ++j) {
      v[j] = e_[j] * v[j] + nv[j] * f1_[j] + 2.0 * (na[j] + nb[j]) * f2_[j] + nc[j] * f3_[j];
    }
  }
  for (const auto& z : v) {
    if (!std::isfinite(z.real()) || !std::isfinite(z.imag())) {
      throw IntegrationError("K-S spectrum became non-finite at step " + std::to_string(step_index), step_index);
    }
  }
}

// --- dataset generation ---------------------------------------------------

TrajectoryDataset generate_lorenz96(const Lorenz96Config& cfg) {
  const auto transient = static_cast<std::size_t>(std::llround(cfg.transient_time / cfg.dt));
  const auto samples = static_cast<std::size_t>(std::llround(cfg.total_time / cfg.dt));
  if (cfg.train_samples == 0 || cfg.train_samples >= samples) {
    throw std::invalid_argument("Lorenz-96 run yields " + std::to_string(samples) + " samples; cannot hold " +
                                std::to_string(cfg.train_samples) + " training samples plus a test split");
  }
  Rng rng(cfg.seed);
  std::vector<double> state(cfg.state_dim());
  for (double& x : state) x = rng.uniform(-1.0, 1.0);
  const Rhs rhs = [&cfg](std::span<const double> s, std::span<double> out) { lorenz96_rhs(cfg, s, out); };
  for (std::size_t s = 0; s < transient; ++s) rk4_step(rhs, state, cfg.dt, s);
  TrajectoryDataset ds;
  ds.name = "lorenz96";
  ds.data = Tensor(Shape{samples, cfg.K});
  for (std::size_t s = 0; s < samples; ++s) {
    rk4_step(rhs, state, cfg.dt, transient + s);
    for (std::size_t k = 0; k < cfg.K; ++k) ds.data[s * cfg.K + k] = state[k];
  }
  ds.train_end = ds.val_end = cfg.train_samples;
  ds.dt = cfg.dt;
  ds.lyapunov = cfg.lyapunov;
  ds.meta = {{"system", "lorenz96"}, {"K", cfg.K}, {"J", cfg.J}, {"I", cfg.I}, {"F", cfg.F}, {"h", cfg.h},
             {"g_z", cfg.g_z}, {"b", cfg.b}, {"c", cfg.c}, {"d", cfg.d}, {"e", cfg.e}, {"dt", cfg.dt},
             {"total_time", cfg.total_time}, {"transient_time", cfg.transient_time}, {"seed", cfg.seed}};
  compute_stats(ds);
  return ds;
}

TrajectoryDataset generate_ks(const KSConfig& cfg) {
  if (cfg.transient_samples >= cfg.samples || cfg.samples - cfg.transient_samples < 2) {
    throw std::invalid_argument("K-S run has too few post-transient samples to split");
  }
  KSSolver solver(cfg);
  Rng rng(cfg.seed);
  std::vector<double> u(cfg.nodes, 0.0);
  for (std::size_t m = 1; m <= 8; ++m) {
    const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    for (std::size_t i = 0; i < cfg.nodes; ++i) {
      const double x = cfg.L * static_cast<double>(i) / static_cast<double>(cfg.nodes);
      u[i] += 0.1 * std::cos(2.0 * std::numbers::pi * static_cast<double>(m) * x / cfg.L + phase);
    }
  }
  auto v = solver.to_spectral(u);
  const std::size_t kept = cfg.samples - cfg.transient_samples;
  TrajectoryDataset ds;
  ds.name = "kuramoto_sivashinsky";
  ds.data = Tensor(Shape{kept, cfg.nodes});
  for (std::size_t s = 0; s < cfg.samples; ++s) {
    solver.step(v, s);
    if (s < cfg.transient_samples) continue;
    const auto field = solver.to_physical(v);
    std::copy(field.begin(), field.end(), ds.data.storage().begin() + (s - cfg.transient_samples) * cfg.nodes);
  }
  ds.train_end = ds.val_end = kept / 2;
  ds.dt = cfg.dt;
  ds.lyapunov = cfg.lyapunov;
  ds.meta = {{"system", "kuramoto_sivashinsky"}, {"nu", cfg.nu}, {"L", cfg.L}, {"nodes", cfg.nodes}, {"dt", cfg.dt},
             {"samples", cfg.samples}, {"transient_samples", cfg.transient_samples}, {"seed", cfg.seed}};
  compute_stats(ds);
  return ds;
}

}  // namespace seqmech::dynamics
