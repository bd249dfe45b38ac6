#pragma once

// Single training runs described by a JSON run config, and grid sweeps over
// such configs with per-run manifests and a validation-VPT leaderboard.
//
// Run config:
//   { "model": {...}, "train": {...}, "eval": {...}, "seed": 42 }
// Grid:
//   { "base": <run config>, "axes": { "model.gate": ["A", "D"], ... },
//     "seeds": [42, 117, 12345] }

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "seqmech/dataset.hpp"
#include "seqmech/forecaster.hpp"
#include "seqmech/training.hpp"

namespace seqmech::experiment {

inline const std::vector<std::uint64_t> kDefaultSeeds{42, 117, 12345};

struct EvalSettings {
  std::size_t val_ics = 10;      // upper bound; fewer if the validation range is short
  double val_horizon_lyap = 2.0;
  std::size_t test_ics = 100;
  double test_horizon_lyap = 5.0;
  double eps = 0.5;
  bool test = false;             // also score the test split after training
};

nlohmann::json to_json(const EvalSettings& e);
EvalSettings eval_settings_from_json(const nlohmann::json& j);

/// Fills defaults and rejects unknown keys. The result is canonical: equal
/// runs produce equal dumps.
nlohmann::json normalize_run_config(const nlohmann::json& run);

/// 16 hex digits of FNV-1a over the canonical config.
std::string run_id(const nlohmann::json& normalized_run);

struct RunResult {
  nlohmann::json manifest;
  std::unique_ptr<Forecaster> model;
};

/// Trains, scores validation VPT (and test metrics if requested) and, when
/// run_dir is non-empty, writes model.ckpt and manifest.json there.
RunResult run_experiment(const nlohmann::json& run, const TrajectoryDataset& ds, const std::filesystem::path& run_dir,
                         const training::EpochCallback& on_epoch = {});

/// Mean VPT over as many non-overlapping validation windows as fit (at most
/// settings.val_ics).
double validation_vpt(Forecaster& model, const TrajectoryDataset& ds, std::size_t window, double val_fraction,
                      const EvalSettings& settings, std::uint64_t seed);

struct Grid {
  nlohmann::json base;
  std::vector<std::pair<std::string, std::vector<nlohmann::json>>> axes;
  std::vector<std::uint64_t> seeds = kDefaultSeeds;
};

Grid parse_grid(const nlohmann::json& j);
/// Sets a dotted path such as "model.gate" inside a JSON object.
void set_dotted(nlohmann::json& j, const std::string& path, const nlohmann::json& value);
/// Cartesian product of the axes times the seeds, as normalised run configs.
/// An axis key may list several comma-separated paths that share each value.
std::vector<nlohmann::json> expand_grid(const Grid& grid);

struct LeaderEntry {
  nlohmann::json config;  // run config without its seed
  std::vector<std::uint64_t> seeds;
  std::vector<double> val_vpt;
  double mean_val_vpt = 0.0;
  std::size_t failures = 0;
};

/// Groups complete manifests by config and orders by descending mean validation VPT.
std::vector<LeaderEntry> leaderboard(const std::vector<nlohmann::json>& manifests);
nlohmann::json to_json(const std::vector<LeaderEntry>& board);

struct SweepOptions {
  std::size_t parallel = 1;
  bool force = false;  // re-run configs that already have a manifest
  std::function<void(const std::string&)> log;
};

/// Runs every grid point not yet recorded in out_dir/manifests.jsonl, then
/// writes out_dir/leaderboard.json. Individual failures are recorded and the
/// sweep continues.
std::vector<LeaderEntry> sweep(const Grid& grid, const TrajectoryDataset& ds, const std::filesystem::path& out_dir,
                               const SweepOptions& options);

}  // namespace seqmech::experiment
