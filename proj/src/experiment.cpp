#include "seqmech/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <stdexcept>
#include <thread>

#include "seqmech/evaluation.hpp"
#include "seqmech/io.hpp"

namespace seqmech::experiment {

using nlohmann::json;

json to_json(const EvalSettings& e) {
  return {{"val_ics", e.val_ics},
          {"val_horizon_lyap", e.val_horizon_lyap},
          {"test_ics", e.test_ics},
          {"test_horizon_lyap", e.test_horizon_lyap},
          {"eps", e.eps},
          {"test", e.test}};
}

EvalSettings eval_settings_from_json(const json& j) {
  EvalSettings e;
  const json defaults = to_json(e);
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!defaults.contains(it.key())) throw std::invalid_argument("unknown eval key '" + it.key() + "'");
  e.val_ics = j.value("val_ics", e.val_ics);
  e.val_horizon_lyap = j.value("val_horizon_lyap", e.val_horizon_lyap);
  e.test_ics = j.value("test_ics", e.test_ics);
  e.test_horizon_lyap = j.value("test_horizon_lyap", e.test_horizon_lyap);
  e.eps = j.value("eps", e.eps);
  e.test = j.value("test", e.test);
  if (e.val_ics == 0 || !(e.val_horizon_lyap > 0) || !(e.test_horizon_lyap > 0) || !(e.eps > 0)) {
    throw std::invalid_argument("eval settings must be positive");
  }
  return e;
}

json normalize_run_config(const json& run) {
  if (!run.is_object()) throw std::invalid_argument("run config must be a JSON object");
  for (auto it = run.begin(); it != run.end(); ++it) {
    const auto& k = it.key();
    if (k != "model" && k != "train" && k != "eval" && k != "seed") {
      throw std::invalid_argument("unknown run config key '" + k + "'");
    }
  }
  if (!run.contains("model")) throw std::invalid_argument("run config needs a 'model' object");
  const auto train = training::train_config_from_json(run.value("train", json::object()));
  const auto eval = eval_settings_from_json(run.value("eval", json::object()));
  // Building a throwaway model validates the model object and yields its
  // normalised form.
  auto probe = make_forecaster(run.at("model"), 1, train.seq_len, 0);
  return {{"model", probe->config()},
          {"train", training::to_json(train)},
          {"eval", to_json(eval)},
          {"seed", run.value("seed", std::uint64_t{42})}};
}

std::string run_id(const json& normalized_run) { return io::hex(fnv1a64(normalized_run.dump())); }

double validation_vpt(Forecaster& model, const TrajectoryDataset& ds, std::size_t window, double val_fraction,
                      const EvalSettings& settings, std::uint64_t seed) {
  const auto r = training::fitting_ranges(ds, val_fraction);
  metrics::EvalConfig ec;
  ec.horizon = metrics::horizon_steps(settings.val_horizon_lyap, ds.dt, ds.lyapunov);
  ec.warmup = window;
  ec.eps = settings.eps;
  ec.seed = seed;
  const std::size_t slots = (r.val_end - r.val_begin) / (window + ec.horizon);
  if (slots == 0) {
    // Shorten the horizon to fit a single window.
    if (r.val_end - r.val_begin <= window + 1) throw std::invalid_argument("validation range shorter than the window");
    ec.horizon = r.val_end - r.val_begin - window;
  }
  ec.n_ics = std::max<std::size_t>(1, std::min(settings.val_ics, slots));
  return metrics::evaluate(model, ds, r.val_begin, r.val_end, window, ec).vpt_mean;
}

RunResult run_experiment(const json& run_in, const TrajectoryDataset& ds, const std::filesystem::path& run_dir,
                         const training::EpochCallback& on_epoch) {
  const json run = normalize_run_config(run_in);
  const auto train_cfg = training::train_config_from_json(run.at("train"));
  const auto eval = eval_settings_from_json(run.at("eval"));
  const auto seed = run.at("seed").get<std::uint64_t>();
  const auto t0 = std::chrono::steady_clock::now();

  RunResult out;
  out.model = make_forecaster(run.at("model"), ds.dims(), train_cfg.seq_len, seed);
  const auto result = training::train(*out.model, ds, train_cfg, seed, on_epoch);
  const double vvpt = validation_vpt(*out.model, ds, train_cfg.seq_len, train_cfg.val_fraction, eval, seed);

  json metrics_j{{"val_vpt", vvpt}, {"best_val_loss", result.best_val}, {"baseline_val_loss", result.baseline_val}};
  if (eval.test) {
    metrics::EvalConfig ec;
    ec.n_ics = eval.test_ics;
    ec.horizon_lyap = eval.test_horizon_lyap;
    ec.eps = eval.eps;
    ec.seed = seed;
    metrics_j["test"] = metrics::to_json(metrics::evaluate_test(*out.model, ds, train_cfg.seq_len, ec));
  }
  out.manifest = {{"id", run_id(run)},
                  {"status", "complete"},
                  {"seed", seed},
                  {"config", run},
                  {"dataset", {{"name", ds.name}, {"hash", io::hex(io::dataset_hash(ds))}}},
                  {"parameters", out.model->params().scalar_count()},
                  {"train", training::to_json(result)},
                  {"metrics", metrics_j}};
  if (!run_dir.empty()) {
    std::filesystem::create_directories(run_dir);
    const auto ckpt = run_dir / "model.ckpt";
    training::save_checkpoint(ckpt, *out.model,
                              {{"model", run.at("model")},
                               {"observable_dim", ds.dims()},
                               {"window", train_cfg.seq_len},
                               {"seed", seed},
                               {"run", run},
                               {"dataset", {{"name", ds.name}, {"mean", ds.mean}, {"std", ds.stddev}, {"dt", ds.dt},
                                            {"lyapunov", ds.lyapunov}}}});
    out.manifest["checkpoint"] = ckpt.string();
  }
  out.manifest["wall_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (!run_dir.empty()) std::ofstream(run_dir / "manifest.json") << out.manifest.dump(2) << '\n';
  return out;
}

// --- grids ----------------------------------------------------------------

void set_dotted(json& j, const std::string& path, const json& value) {
  json* cur = &j;
  std::size_t pos = 0;
  while (true) {
    const auto dot = path.find('.', pos);
    const std::string key = path.substr(pos, dot == std::string::npos ? std::string::npos : dot - pos);
    if (key.empty()) throw std::invalid_argument("malformed axis path '" + path + "'");
    if (dot == std::string::npos) {
      (*cur)[key] = value;
      return;
    }
    if (!cur->contains(key)) (*cur)[key] = json::object();
    cur = &(*cur)[key];
    if (!cur->is_object()) throw std::invalid_argument("axis path '" + path + "' crosses a non-object");
    pos = dot + 1;
  }
}

Grid parse_grid(const json& j) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (it.key() != "base" && it.key() != "axes" && it.key() != "seeds" && it.key() != "name" &&
        it.key() != "description") {
      throw std::invalid_argument("unknown grid key '" + it.key() + "'");
    }
  }
  Grid g;
  g.base = j.at("base");
  if (j.contains("axes")) {
    for (auto it = j["axes"].begin(); it != j["axes"].end(); ++it) {
      if (!it.value().is_array() || it.value().empty()) {
        throw std::invalid_argument("axis '" + it.key() + "' must be a non-empty array");
      }
      g.axes.emplace_back(it.key(), it.value().get<std::vector<json>>());
    }
  }
  if (j.contains("seeds")) g.seeds = j["seeds"].get<std::vector<std::uint64_t>>();
  if (g.seeds.empty()) throw std::invalid_argument("grid needs at least one seed");
  return g;
}

std::vector<json> expand_grid(const Grid& grid) {
  std::vector<json> points{grid.base};
  for (const auto& [path, values] : grid.axes) {
    std::vector<json> next;
    for (const auto& p : points)
      for (const auto& v : values) {
        json q = p;
        std::size_t start = 0;
        while (true) {
          const auto comma = path.find(',', start);
          set_dotted(q, path.substr(start, comma == std::string::npos ? std::string::npos : comma - start), v);
          if (comma == std::string::npos) break;
          start = comma + 1;
        }
        next.push_back(std::move(q));
      }
    points = std::move(next);
  }
  std::vector<json> out;
  std::set<std::string> seen;
  for (const auto& p : points)
    for (auto seed : grid.seeds) {
      json q = p;
      q["seed"] = seed;
      q = normalize_run_config(q);
      if (seen.insert(run_id(q)).second) out.push_back(std::move(q));
    }
  return out;
}

std::vector<LeaderEntry> leaderboard(const std::vector<json>& manifests) {
  std::map<std::string, LeaderEntry> groups;
  for (const auto& m : manifests) {
    json cfg = m.at("config");
    cfg.erase("seed");
    auto& e = groups[cfg.dump()];
    e.config = cfg;
    if (m.value("status", "") != "complete") {
      ++e.failures;
      continue;
    }
    e.seeds.push_back(m.at("seed").get<std::uint64_t>());
    e.val_vpt.push_back(m.at("metrics").at("val_vpt").get<double>());
  }
  std::vector<LeaderEntry> out;
  for (auto& [key, e] : groups) {
    double s = 0;
    for (double v : e.val_vpt) s += v;
    e.mean_val_vpt = e.val_vpt.empty() ? 0.0 : s / static_cast<double>(e.val_vpt.size());
    out.push_back(std::move(e));
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const LeaderEntry& a, const LeaderEntry& b) { return a.mean_val_vpt > b.mean_val_vpt; });
  return out;
}

json to_json(const std::vector<LeaderEntry>& board) {
  json out = json::array();
  for (std::size_t i = 0; i < board.size(); ++i) {
    const auto& e = board[i];
    out.push_back({{"rank", i + 1},
                   {"mean_val_vpt", e.mean_val_vpt},
                   {"val_vpt", e.val_vpt},
                   {"seeds", e.seeds},
                   {"failures", e.failures},
                   {"config", e.config}});
  }
  return out;
}

std::vector<LeaderEntry> sweep(const Grid& grid, const TrajectoryDataset& ds, const std::filesystem::path& out_dir,
                               const SweepOptions& opt) {
  const auto runs = expand_grid(grid);
  const auto manifest_path = out_dir / "manifests.jsonl";
  std::set<std::string> done;
  if (!opt.force)
    for (const auto& m : io::read_manifests(manifest_path)) done.insert(m.value("id", ""));

  std::vector<const json*> todo;
  for (const auto& r : runs)
    if (!done.count(run_id(r))) todo.push_back(&r);
  if (opt.log) {
    opt.log("sweep: " + std::to_string(runs.size()) + " runs, " + std::to_string(runs.size() - todo.size()) +
            " already recorded");
  }

  std::atomic<std::size_t> next{0};
  std::mutex log_mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < todo.size(); i = next++) {
      const json& run = *todo[i];
      const std::string id = run_id(run);
      json manifest;
      try {
        manifest = run_experiment(run, ds, out_dir / "runs" / id).manifest;
      } catch (const std::exception& e) {
        manifest = {{"id", id}, {"status", "failed"}, {"seed", run.at("seed")}, {"config", run}, {"error", e.what()}};
      }
      io::append_manifest(manifest_path, manifest);
      if (opt.log) {
        std::lock_guard lock(log_mutex);
        opt.log("run " + id + " " + manifest.value("status", "") +
                (manifest.contains("metrics") ? " val_vpt=" + std::to_string(manifest["metrics"]["val_vpt"].get<double>())
                                              : ""));
      }
    }
  };
  const std::size_t n_threads = std::max<std::size_t>(1, std::min(opt.parallel, todo.size()));
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < n_threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  // Only manifests belonging to this grid enter its leaderboard.
  std::set<std::string> ids;
  for (const auto& r : runs) ids.insert(run_id(r));
  std::map<std::string, json> latest;
  for (auto& m : io::read_manifests(manifest_path))
    if (ids.count(m.value("id", ""))) latest[m["id"]] = m;
  std::vector<json> mine;
  for (auto& [id, m] : latest) mine.push_back(m);
  auto board = leaderboard(mine);
  std::ofstream(out_dir / "leaderboard.json") << to_json(board).dump(2) << '\n';
  return board;
}

}  // namespace seqmech::experiment
