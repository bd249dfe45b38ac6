#include <cmath>
#include <complex>
#include <numbers>

#include "doctest.h"
#include "seqmech/evaluation.hpp"
#include "seqmech/metrics.hpp"
#include "seqmech/rng.hpp"

using namespace seqmech;
using namespace seqmech::metrics;

TEST_CASE("nrmse values") {
  const std::vector<double> o{1.0, -2.0, 0.5}, s{0.3, 2.0, 1.7};
  CHECK(nrmse(o, o, s) == 0.0);
  std::vector<double> off(3);
  for (int i = 0; i < 3; ++i) off[i] = o[i] + s[i];
  CHECK(std::abs(nrmse(o, off, s) - 1.0) <= 1e-12);
  CHECK(nrmse(std::vector<double>{0, 0}, std::vector<double>{1, 2}, std::vector<double>{1, 1}) ==
        doctest::Approx(std::sqrt(2.5)).epsilon(1e-15));
  CHECK_THROWS(nrmse(o, o, std::vector<double>{1, 0, 1}));
  CHECK_THROWS_AS(nrmse(o, std::vector<double>{1}, s), DimensionError);
}

TEST_CASE("nrmse is invariant to a shared per-dimension affine map") {
  Rng rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> o(4), p(4), s(4), o2(4), p2(4), s2(4);
    for (int i = 0; i < 4; ++i) {
      o[i] = rng.uniform(-3, 3);
      p[i] = rng.uniform(-3, 3);
      s[i] = rng.uniform(0.1, 2);
      const double a = rng.uniform(0.2, 5), b = rng.uniform(-10, 10);
      o2[i] = a * o[i] + b;
      p2[i] = a * p[i] + b;
      s2[i] = a * s[i];
    }
    CHECK(nrmse(o2, p2, s2) == doctest::Approx(nrmse(o, p, s)).epsilon(1e-12));
  }
}

TEST_CASE("vpt counts the valid prefix in Lyapunov times") {
  // 16 steps of 0.25 with exponent 0.5 span exactly 2 Lyapunov times.
  std::vector<double> ok(16, 0.1);
  CHECK(vpt(ok, 0.5, 0.5, 0.25) == 2.0);
  std::vector<double> bad(16, 0.1);
  bad[0] = 0.5;
  CHECK(vpt(bad, 0.5, 0.5, 0.25) == 0.0);

  std::vector<double> c(1000, 0.1);
  c[440] = 0.7;
  CHECK(vpt(c, 0.5, 2.2, 0.005) == doctest::Approx(4.84).epsilon(1e-12));
  CHECK(vpt(c, 0.5, 1.1, 0.005) == doctest::Approx(4.84 / 2).epsilon(1e-12));
  CHECK(valid_steps(c, 0.1) == 0);

  Rng rng(2);
  std::vector<double> r(200);
  for (auto& v : r) v = rng.uniform(0, 1);
  double prev = 0.0;
  for (double eps = 0.0; eps <= 1.01; eps += 0.05) {
    const double v = vpt(r, eps, 1.0, 1.0);
    CHECK(v >= prev);
    prev = v;
  }
}

namespace {
Tensor sine(std::size_t n, std::size_t bin, double amp) {
  Tensor t(Shape{n, 1});
  for (std::size_t i = 0; i < n; ++i) t[i] = amp * std::sin(2.0 * std::numbers::pi * double(bin * i) / double(n));
  return t;
}
}  // namespace

TEST_CASE("psd of a pure sine peaks at its bin with amplitude in dB") {
  const auto a = psd(sine(256, 13, 1.0), 1.0, 1);
  CHECK(a.db.size() == 129);
  const auto peak = std::max_element(a.db.begin(), a.db.end()) - a.db.begin();
  CHECK(peak == 13);
  CHECK(a.db[13] == doctest::Approx(0.0).epsilon(1e-10));
  const auto b = psd(sine(256, 13, 2.0), 1.0, 1);
  CHECK(b.db[13] - a.db[13] == doctest::Approx(20 * std::log10(2.0)).epsilon(1e-10));
  CHECK(a.freq[13] == doctest::Approx(13.0 / 256));
}

TEST_CASE("psd matches a direct DFT oracle") {
  Rng rng(3);
  Tensor x(Shape{60, 2});
  for (auto& v : x.storage()) v = rng.normal();
  const auto sp = psd(x, 0.1, 1);
  const std::size_t n = 60;
  for (std::size_t k = 0; k <= n / 2; ++k) {
    double p = 0.0;
    for (std::size_t c = 0; c < 2; ++c) {
      std::complex<double> u = 0.0;
      for (std::size_t i = 0; i < n; ++i)
        u += x[i * 2 + c] * std::exp(std::complex<double>(0, -2.0 * std::numbers::pi * double(k * i) / double(n)));
      p += std::norm(2.0 * u / double(n));
    }
    CHECK(sp.db[k] == doctest::Approx(10 * std::log10(p / 2)).epsilon(1e-9));
  }
}

TEST_CASE("white noise has a flat smoothed spectrum") {
  Rng rng(4);
  Tensor x(Shape{100000, 1});
  for (auto& v : x.storage()) v = rng.normal();
  const auto sp = psd(x);
  const std::size_t w = 101;
  double lo = 1e300, hi = -1e300;
  for (std::size_t k = 1; k + w < sp.db.size(); k += w) {
    double m = 0;
    for (std::size_t j = 0; j < w; ++j) m += sp.db[k + j];
    m /= w;
    lo = std::min(lo, m);
    hi = std::max(hi, m);
  }
  CHECK(hi - lo < 10.0);
}

TEST_CASE("psd_mse") {
  std::vector<double> a{1, 2, 3, 4}, b{2, 3, 4, 5};
  CHECK(psd_mse(a, a) == 0.0);
  CHECK(psd_mse(a, b) == 1.0);
  Rng rng(5);
  std::vector<double> x(37), y(37);
  double ref = 0;
  for (std::size_t i = 0; i < 37; ++i) {
    x[i] = rng.normal();
    y[i] = rng.normal();
    ref += (x[i] - y[i]) * (x[i] - y[i]);
  }
  CHECK(psd_mse(x, y) == ref / 37);
  CHECK_THROWS(psd_mse(a, std::vector<double>{1}));
}

namespace {

// Exact one-step map x_{t+1} = A x_t.
class LinearMap : public Forecaster {
 public:
  explicit LinearMap(Tensor a) : a_(std::move(a)) {}
  std::string kind() const override { return "linear"; }
  std::size_t observable_dim() const override { return a_.dim(0); }
  bool stateful() const override { return false; }
  ModelState initial_state(std::size_t) const override { return {}; }
  Var forward_chunk(Tape& tape, Var inputs, ModelState&, Mode, Rng&) override {
    return linear(inputs, tape.constant(a_));
  }

 private:
  Tensor a_;
};

TrajectoryDataset rotation(std::size_t n, double theta) {
  TrajectoryDataset ds;
  ds.name = "rotation";
  ds.data = Tensor(Shape{n, 2});
  double x = 1.0, y = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    ds.data[2 * i] = x;
    ds.data[2 * i + 1] = y;
    const double nx = std::cos(theta) * x - std::sin(theta) * y, ny = std::sin(theta) * x + std::cos(theta) * y;
    x = nx;
    y = ny;
  }
  ds.train_end = ds.val_end = n / 2;
  ds.dt = 0.1;
  ds.lyapunov = 0.5;
  compute_stats(ds);
  ds.mean = {0.0, 0.0};  // keeps the map linear in standardised space
  ds.stddev = {1.0, 1.0};
  return ds;
}

}  // namespace

TEST_CASE("evaluation of an exact model") {
  const double th = 0.3;
  auto ds = rotation(2000, th);
  LinearMap model(Tensor::matrix({{std::cos(th), -std::sin(th)}, {std::sin(th), std::cos(th)}}));
  EvalConfig cfg;
  cfg.n_ics = 5;
  cfg.horizon = 40;
  cfg.warmup = 4;
  const auto r = evaluate_test(model, ds, 4, cfg);
  CHECK(r.vpt.size() == 5);
  for (double v : r.vpt) CHECK(v == doctest::Approx(40 * 0.1 * 0.5));
  CHECK(r.psd_mse == doctest::Approx(0.0).epsilon(1e-12));
  for (std::size_t s : r.ic_starts) CHECK(s >= ds.val_end);

  LinearMap off(Tensor::matrix({{std::cos(0.33), -std::sin(0.33)}, {std::sin(0.33), std::cos(0.33)}}));
  const auto q = evaluate_test(off, ds, 4, cfg);
  for (std::size_t t = 0; t < cfg.horizon; ++t) {
    double m = 0;
    for (const auto& c : q.curves) m += c[t];
    CHECK(q.mean_curve[t] == doctest::Approx(m / 5).epsilon(1e-14));
  }
  CHECK(q.vpt_mean < 2.0);

  cfg.n_ics = 1000;
  CHECK_THROWS(evaluate_test(model, ds, 4, cfg));
}

TEST_CASE("horizon steps") {
  CHECK(horizon_steps(2.0, 0.25, 0.5) == 16);
  CHECK(horizon_steps(5.0, 0.005, 2.2) == 455);
}
