#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>

#include "doctest.h"
#include "helpers.hpp"
#include "seqmech/training.hpp"

using namespace seqmech;
using namespace seqmech::training;

namespace {
Tensor ramp(std::size_t n, std::size_t d) {
  Tensor t(Shape{n, d});
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<double>(i);
  return t;
}

TrajectoryDataset sine_dataset(std::size_t n) {
  TrajectoryDataset ds;
  ds.name = "sines";
  ds.data = Tensor(Shape{n, 2});
  for (std::size_t i = 0; i < n; ++i) {
    const double t = 0.1 * static_cast<double>(i);
    ds.data[2 * i] = std::sin(t) + 0.5 * std::sin(2.3 * t);
    ds.data[2 * i + 1] = std::cos(0.7 * t);
  }
  ds.train_end = ds.val_end = n * 3 / 4;
  ds.dt = 0.1;
  compute_stats(ds);
  return ds;
}
}  // namespace

TEST_CASE("chunk counts and teacher-forcing targets") {
  CHECK(chunk_starts(11, 5).size() == 2);
  CHECK(chunk_starts(10, 5).size() == 1);
  CHECK(chunk_starts(6, 5) == std::vector<std::size_t>{0});
  CHECK(chunk_starts(5, 5).empty());

  const Tensor s = ramp(23, 2);
  const auto batches = shuffled_batches(s, 5, 3, nullptr);
  REQUIRE(batches.size() == 2);
  CHECK(batches[0].inputs.shape() == Shape{3, 5, 2});
  CHECK(batches[1].inputs.dim(0) == 1);
  for (const auto& b : batches)
    for (std::size_t i = 0; i < b.inputs.size(); ++i) CHECK(b.targets[i] == b.inputs[i] + 2.0);
  CHECK_THROWS(shuffled_batches(ramp(5, 2), 5, 1, nullptr));
}

TEST_CASE("reshuffling permutes chunks without changing them") {
  const Tensor s = ramp(101, 1);
  Rng rng(9);
  auto first = [](const std::vector<Batch>& bs) {
    std::vector<double> out;
    for (const auto& b : bs)
      for (std::size_t k = 0; k < b.inputs.dim(0); ++k) out.push_back(b.inputs[k * 4]);
    return out;
  };
  const auto a = first(shuffled_batches(s, 4, 5, &rng));
  const auto b = first(shuffled_batches(s, 4, 5, &rng));
  CHECK(a != b);
  CHECK(std::multiset<double>(a.begin(), a.end()) == std::multiset<double>(b.begin(), b.end()));
}

TEST_CASE("lanes are contiguous across consecutive batches") {
  const Tensor s = ramp(100, 1);
  const auto bs = lane_batches(s, 4, 3, 2);
  // lane length (100 - 1 - 2) / 3 = 32 -> 8 chunks
  REQUIRE(bs.size() == 8);
  for (std::size_t l = 0; l < 3; ++l) {
    CHECK(bs[0].inputs[l * 4] == 2.0 + 32.0 * l);
    for (std::size_t c = 0; c + 1 < bs.size(); ++c) CHECK(bs[c + 1].inputs[l * 4] == bs[c].inputs[l * 4 + 3] + 1.0);
  }
}

TEST_CASE("loss covers only the last S' positions") {
  Tape t;
  const Tensor p = random_tensor({2, 6, 3}, 1, 1.0);
  Tensor y = random_tensor({2, 6, 3}, 2, 1.0);
  Var pv = t.constant(p);
  const double full = teacher_forced_loss(pv, y, 6).value().item();
  double ref = 0;
  for (std::size_t i = 0; i < p.size(); ++i) ref += (p[i] - y[i]) * (p[i] - y[i]);
  CHECK(full == doctest::Approx(ref / p.size()).epsilon(1e-14));

  const double last2 = teacher_forced_loss(pv, y, 2).value().item();
  Tensor z = y;
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t s = 0; s < 4; ++s)
      for (std::size_t k = 0; k < 3; ++k) z[(b * 6 + s) * 3 + k] = 0.0;
  CHECK(teacher_forced_loss(pv, z, 2).value().item() == last2);
  CHECK(teacher_forced_loss(pv, p, 6).value().item() == 0.0);
  CHECK_THROWS(teacher_forced_loss(pv, y, 7));
}

TEST_CASE("adabelief matches a scalar reference") {
  ParameterStore store;
  Parameter& w = store.add("w", Tensor(Shape{1}, 0.0));
  AdaBelief opt(store);
  w.grad = Tensor(Shape{1}, 1.0);
  REQUIRE(opt.step(1e-2));
  // m = 0.1, s = 0.001 * 0.81 + 1e-16; hat m = 1, hat s = 0.81 -> 0.01 / 0.9
  CHECK(w.value[0] == doctest::Approx(-0.01 / 0.9).epsilon(1e-12));

  ParameterStore s2;
  Parameter& v = s2.add("v", Tensor(Shape{1}, 0.7));
  AdaBelief opt2(s2);
  double theta = 0.7, m = 0, s = 0;
  Rng rng(4);
  for (int t = 1; t <= 50; ++t) {
    const double g = rng.uniform(-2, 2);
    v.grad = Tensor(Shape{1}, g);
    opt2.step(3e-3, 0.1);
    m = 0.9 * m + 0.1 * g;
    s = 0.999 * s + 0.001 * (g - m) * (g - m) + 1e-16;
    theta *= 1 - 3e-3 * 0.1;
    theta -= 3e-3 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(s / (1 - std::pow(0.999, t))) + 1e-16);
    CHECK(v.value[0] == doctest::Approx(theta).epsilon(1e-13));
  }
}

TEST_CASE("adabelief leaves parameters alone on zero or non-finite gradients") {
  ParameterStore store;
  Parameter& w = store.add("w", Tensor(Shape{3}, 0.5));
  AdaBelief opt(store);
  w.grad = Tensor(Shape{3}, 0.0);
  for (int i = 0; i < 10; ++i) opt.step(1e-2);
  CHECK(w.value == Tensor(Shape{3}, 0.5));
  w.grad[1] = std::nan("");
  CHECK_FALSE(opt.step(1e-2));
  CHECK(opt.steps() == 10);
}

TEST_CASE("adabelief minimises a convex quadratic") {
  ParameterStore store;
  Parameter& w = store.add("w", Tensor::vector({4.0, -3.0}));
  AdaBelief opt(store);
  const double target[2] = {1.0, 2.0}, curv[2] = {1.0, 5.0};
  for (int t = 0; t < 5000; ++t) {
    w.grad = Tensor(Shape{2});
    for (int i = 0; i < 2; ++i) w.grad[i] = curv[i] * (w.value[i] - target[i]);
    opt.step(1e-2);
  }
  CHECK(std::abs(w.value[0] - 1.0) < 1e-6);
  CHECK(std::abs(w.value[1] - 2.0) < 1e-6);
}

TEST_CASE("gradient clipping") {
  ParameterStore store;
  Parameter& a = store.add("a", Tensor(Shape{2}));
  Parameter& b = store.add("b", Tensor(Shape{1}));
  a.grad = Tensor::vector({3.0, 0.0});
  b.grad = Tensor::vector({4.0});
  CHECK(clip_grad_norm(store, 1.0) == 5.0);
  CHECK(a.grad[0] == doctest::Approx(0.6));
  CHECK(b.grad[0] == doctest::Approx(0.8));
  CHECK(clip_grad_norm(store, 2.0) == doctest::Approx(1.0));
  CHECK(b.grad[0] == doctest::Approx(0.8));
}

TEST_CASE("step schedule") {
  StepSchedule up(1e-2, 0.1, 10, 5, 1.0);
  for (int e = 0; e < 100; ++e) CHECK(up.update(0.9 - 0.001 * e) == ScheduleAction::Improved);
  CHECK(up.decays() == 0);

  StepSchedule flat(1e-2, 0.1, 10, 5, 1.0);
  int epoch = 0;
  ScheduleAction a = ScheduleAction::Continue;
  while (a != ScheduleAction::Stop) {
    a = flat.update(1.0);
    ++epoch;
    if (flat.decays() == 2 && a == ScheduleAction::Decay) CHECK(flat.lr() == doctest::Approx(1e-4));
  }
  CHECK(epoch == 50);
  CHECK(flat.decays() == 5);
}

TEST_CASE("config json round-trip and validation") {
  TrainConfig c;
  c.seq_len = 12;
  c.pred_len = 4;
  c.lr = 3e-3;
  auto back = train_config_from_json(to_json(c));
  CHECK(to_json(back) == to_json(c));
  CHECK(train_config_from_json({{"seq_len", 20}}).pred_len == 20);
  CHECK_THROWS(train_config_from_json({{"seq_len", 4}, {"pred_len", 5}}));
  CHECK_THROWS(train_config_from_json({{"learning_rate", 1}}));
}

TEST_CASE("training is deterministic and checkpoints restore predictions") {
  const auto ds = sine_dataset(400);
  TrainConfig cfg;
  cfg.seq_len = 10;
  cfg.pred_len = 5;
  cfg.batch = 4;
  cfg.max_epochs = 3;
  cfg.lr = 1e-2;
  const nlohmann::json mcfg{{"kind", "gru"}, {"hidden", 8}};
  auto a = make_forecaster(mcfg, 2, cfg.seq_len, 42);
  auto b = make_forecaster(mcfg, 2, cfg.seq_len, 42);
  const auto ra = train(*a, ds, cfg, 42), rb = train(*b, ds, cfg, 42);
  REQUIRE(ra.log.size() == 3);
  for (std::size_t i = 0; i < ra.log.size(); ++i) {
    CHECK(ra.log[i].train_loss == rb.log[i].train_loss);
    CHECK(ra.log[i].val_loss == rb.log[i].val_loss);
  }
  CHECK(ra.best_val <= ra.baseline_val);

  const auto path = std::filesystem::temp_directory_path() / "seqmech_ckpt_test.bin";
  save_checkpoint(path, *a, {{"model", a->config()}, {"observable_dim", 2}, {"window", 10}, {"seed", 42}});
  auto loaded = load_checkpoint(path);
  const Tensor warm = rows(standardize(ds, ds.data), 0, 10);
  const auto fa = free_run_forecast(*a, warm, 20, 10), fb = free_run_forecast(*loaded.model, warm, 20, 10);
  CHECK(fa.pred == fb.pred);
  std::filesystem::remove(path);
}

TEST_CASE("lstm memorises a short sequence with stateful lanes") {
  const auto ds = sine_dataset(300);
  TrainConfig cfg;
  cfg.seq_len = 10;
  cfg.pred_len = 10;
  cfg.batch = 2;
  cfg.max_epochs = 40;
  cfg.lr = 1e-2;
  auto m = make_forecaster({{"kind", "lstm"}, {"hidden", 16}}, 2, cfg.seq_len, 1);
  const auto r = train(*m, ds, cfg, 1);
  CHECK(r.log.back().train_loss < 0.1 * r.log.front().train_loss);
}

TEST_CASE("free run horizon and window dependence") {
  auto m = make_forecaster({{"kind", "transformer"}, {"hidden", 8}, {"layers", 1}, {"heads", 2}}, 2, 6, 3);
  const Tensor warm = random_tensor({10, 2}, 5, 1.0);
  CHECK(free_run_forecast(*m, warm, 0, 6).pred.dim(0) == 0);
  auto a = free_run_forecast(*m, warm, 15, 6);
  Tensor w2 = warm;
  for (std::size_t i = 0; i < 8; ++i) w2[i] += 1.0;  // rows 0..3 lie outside the last 6
  auto b = free_run_forecast(*m, w2, 15, 6);
  CHECK(a.pred == b.pred);
  w2[9 * 2] += 1e-3;
  CHECK_FALSE(free_run_forecast(*m, w2, 15, 6).pred == a.pred);
}
