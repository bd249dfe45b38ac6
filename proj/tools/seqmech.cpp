// seqmech: generate data, ingest CSVs, train, sweep, forecast, evaluate, export.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "seqmech/dynamics.hpp"
#include "seqmech/evaluation.hpp"
#include "seqmech/experiment.hpp"
#include "seqmech/io.hpp"
#include "seqmech/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace seqmech;

namespace {

// Malformed configs and arguments map to exit code 2.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Globals {
  std::optional<std::uint64_t> seed;
  fs::path out_dir = ".";
  std::size_t parallel = 1;
};

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open " + path.string());
  try {
    return json::parse(in, nullptr, true, true);
  } catch (const json::parse_error& e) {
    throw UsageError(path.string() + ": " + e.what());
  }
}

fs::path resolve_out(const Globals& g, const std::string& out, const std::string& fallback_name) {
  if (out.empty()) return g.out_dir / fallback_name;
  fs::path p(out);
  if (out.back() == '/' || fs::is_directory(p)) return p / fallback_name;
  return p;
}

void emit(const json& j) { std::cout << j.dump() << std::endl; }

std::string fmt_number(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

// --- generate ---------------------------------------------------------------

struct GenerateArgs {
  std::string system = "lorenz96";
  std::string out;
  std::string config;
  double forcing = 10.0;
  std::size_t K = 8, J = 8, I = 8;
  double dt = 0.0;
  double total_time = 2000.0, transient_time = 1000.0;
  std::size_t train_samples = 200000;
  double lyapunov = 0.0;
  std::size_t samples = 240000, transient_samples = 10000, nodes = 128;
};

void run_generate(const Globals& g, const GenerateArgs& a) {
  const std::uint64_t seed = g.seed.value_or(42);
  TrajectoryDataset ds;
  std::string name;
  if (a.system == "lorenz96") {
    dynamics::Lorenz96Config c;
    c.K = a.K;
    c.J = a.J;
    c.I = a.I;
    c.F = a.forcing;
    if (a.dt > 0) c.dt = a.dt;
    c.total_time = a.total_time;
    c.transient_time = a.transient_time;
    c.train_samples = a.train_samples;
    c.lyapunov = a.lyapunov > 0 ? a.lyapunov : (a.forcing >= 20.0 ? 4.5 : 2.2);
    c.seed = seed;
    if (!a.config.empty()) {
      const json j = read_json(a.config);
      c.F = j.value("F", c.F);
      c.K = j.value("K", c.K);
      c.J = j.value("J", c.J);
      c.I = j.value("I", c.I);
      c.dt = j.value("dt", c.dt);
      c.total_time = j.value("total_time", c.total_time);
      c.transient_time = j.value("transient_time", c.transient_time);
      c.train_samples = j.value("train_samples", c.train_samples);
      c.lyapunov = j.value("lyapunov", c.lyapunov);
    }
    ds = dynamics::generate_lorenz96(c);
    name = "lorenz96_F" + fmt_number(c.F) + ".sqf";
  } else if (a.system == "ks") {
    dynamics::KSConfig c;
    c.nodes = a.nodes;
    if (a.dt > 0) c.dt = a.dt;
    c.samples = a.samples;
    c.transient_samples = a.transient_samples;
    if (a.lyapunov > 0) c.lyapunov = a.lyapunov;
    c.seed = seed;
    ds = dynamics::generate_ks(c);
    name = "ks.sqf";
  } else {
    throw UsageError("unknown system '" + a.system + "' (expected lorenz96 or ks)");
  }
  const fs::path out = resolve_out(g, a.out, name);
  save_dataset(out, ds);
  json meta{{"name", ds.name}, {"n", ds.rows()}, {"d", ds.dims()}, {"dt", ds.dt}, {"lyapunov", ds.lyapunov},
            {"train_end", ds.train_end}, {"val_end", ds.val_end}, {"meta", ds.meta}};
  std::ofstream(out.string() + ".json") << meta.dump(2) << '\n';
  emit({{"dataset", out.string()}, {"rows", ds.rows()}, {"dims", ds.dims()}});
}

// --- ingest -----------------------------------------------------------------

struct IngestArgs {
  std::string csv, timestamp = "date", columns, ratio = "6:2:2", name, out;
  double resolution = 0.0;
};

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep))
    if (!item.empty()) out.push_back(item);
  return out;
}

void run_ingest(const Globals& g, const IngestArgs& a) {
  io::CsvSeriesSpec spec;
  spec.path = a.csv;
  spec.timestamp_column = a.timestamp;
  spec.value_columns = split(a.columns, ',');
  spec.resolution_seconds = a.resolution;
  spec.name = a.name;
  const auto parts = split(a.ratio, ':');
  if (parts.size() != 3) throw UsageError("ratio must look like 6:2:2");
  for (int i = 0; i < 3; ++i) spec.ratio[i] = std::stoul(parts[i]);
  const auto ds = io::ingest_csv(spec);
  const fs::path out = resolve_out(g, a.out, fs::path(a.csv).stem().string() + ".sqf");
  save_dataset(out, ds);
  emit({{"dataset", out.string()},
        {"rows", ds.rows()},
        {"dims", ds.dims()},
        {"train", ds.train_end},
        {"val", ds.val_end - ds.train_end},
        {"test", ds.rows() - ds.val_end},
        {"steps_per_day", ds.meta["steps_per_day"]}});
}

// --- train / sweep ----------------------------------------------------------

json parse_override_value(const std::string& v) {
  auto j = json::parse(v, nullptr, false);
  return j.is_discarded() ? json(v) : j;
}

void run_train(const Globals& g, const std::string& config, const std::string& dataset,
               const std::vector<std::string>& sets, const std::string& name) {
  json run = read_json(config);
  for (const auto& s : sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0) throw UsageError("--set expects key=value, got '" + s + "'");
    experiment::set_dotted(run, s.substr(0, eq), parse_override_value(s.substr(eq + 1)));
  }
  if (g.seed) run["seed"] = *g.seed;
  try {
    run = experiment::normalize_run_config(run);
  } catch (const std::exception& e) {
    throw UsageError(config + ": " + e.what());
  }
  const auto ds = load_dataset(dataset);
  const fs::path dir = g.out_dir / (name.empty() ? experiment::run_id(run) : name);
  auto result = experiment::run_experiment(run, ds, dir, [](const training::EpochLog& e) {
    std::cerr << "epoch " << e.epoch << " train " << e.train_loss << " val " << e.val_loss << " lr " << e.lr << " "
              << e.event << "\n";
  });
  io::append_manifest(g.out_dir / "manifests.jsonl", result.manifest);
  emit({{"run", result.manifest["id"]},
        {"dir", dir.string()},
        {"status", result.manifest["train"]["status"]},
        {"val_vpt", result.manifest["metrics"]["val_vpt"]}});
}

void run_sweep(const Globals& g, const std::string& grid_path, const std::string& dataset, bool force) {
  experiment::Grid grid;
  try {
    grid = experiment::parse_grid(read_json(grid_path));
    experiment::expand_grid(grid);
  } catch (const UsageError&) {
    throw;
  } catch (const std::exception& e) {
    throw UsageError(grid_path + ": " + e.what());
  }
  if (g.seed) grid.seeds = {*g.seed};
  const auto ds = load_dataset(dataset);
  experiment::SweepOptions opt;
  opt.parallel = g.parallel;
  opt.force = force;
  opt.log = [](const std::string& line) { std::cerr << line << "\n"; };
  const auto board = experiment::sweep(grid, ds, g.out_dir, opt);
  json top = board.empty() ? json(nullptr) : experiment::to_json(board).at(0);
  emit({{"leaderboard", (g.out_dir / "leaderboard.json").string()}, {"entries", board.size()}, {"best", top}});
}

// --- forecast / evaluate / export -------------------------------------------

void run_forecast(const Globals& g, const std::string& ckpt, const std::string& dataset, std::size_t start,
                  std::size_t warmup, std::size_t horizon, const std::string& out) {
  auto loaded = training::load_checkpoint(ckpt);
  const auto ds = load_dataset(dataset);
  const std::size_t window = loaded.config.at("window").get<std::size_t>();
  const std::size_t W = warmup ? warmup : window;
  if (start == 0) start = ds.val_end;
  if (start < W) throw UsageError("--start must leave room for the warmup");
  const Tensor warm = standardize(ds, rows(ds.data, start - W, start));
  auto run = training::free_run_forecast(*loaded.model, warm, horizon, window);
  const Tensor pred = destandardize(ds, run.pred);
  const fs::path path = resolve_out(g, out, "forecast.csv");
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path);
  os << "step,time";
  for (std::size_t k = 0; k < ds.dims(); ++k) os << ",pred" << k;
  for (std::size_t k = 0; k < ds.dims(); ++k) os << ",true" << k;
  os << '\n' << std::setprecision(17);
  for (std::size_t t = 0; t < horizon; ++t) {
    os << t + 1 << ',' << static_cast<double>(t + 1) * ds.dt;
    for (std::size_t k = 0; k < ds.dims(); ++k) os << ',' << pred[t * ds.dims() + k];
    for (std::size_t k = 0; k < ds.dims(); ++k) {
      os << ',';
      if (start + t < ds.rows()) os << ds.data[(start + t) * ds.dims() + k];
    }
    os << '\n';
  }
  emit({{"forecast", path.string()}, {"horizon", horizon}, {"diverged", run.diverged}});
}

void run_evaluate(const Globals& g, const std::string& ckpt, const std::string& dataset, std::size_t ics,
                  double horizon_lyap, std::size_t horizon, double eps, const std::string& split) {
  auto loaded = training::load_checkpoint(ckpt);
  const auto ds = load_dataset(dataset);
  const std::size_t window = loaded.config.at("window").get<std::size_t>();
  metrics::EvalConfig ec;
  ec.n_ics = ics;
  ec.horizon_lyap = horizon_lyap;
  ec.horizon = horizon;
  ec.eps = eps;
  ec.seed = g.seed.value_or(42);
  metrics::EvalReport report;
  if (split == "test") {
    report = metrics::evaluate_test(*loaded.model, ds, window, ec);
  } else if (split == "val") {
    const double frac = loaded.config.contains("run") ? loaded.config["run"]["train"].value("val_fraction", 0.1) : 0.1;
    const auto r = training::fitting_ranges(ds, frac);
    report = metrics::evaluate(*loaded.model, ds, r.val_begin, r.val_end, window, ec);
  } else {
    throw UsageError("--split must be test or val");
  }
  fs::create_directories(g.out_dir);
  json summary = metrics::to_json(report);
  summary["checkpoint"] = ckpt;
  summary["dataset"] = ds.name;
  summary["split"] = split;
  std::ofstream(g.out_dir / "report.json") << summary.dump(2) << '\n';
  io::export_plot_data(report, g.out_dir, fs::path(ckpt).parent_path().filename().string());
  emit({{"report", (g.out_dir / "report.json").string()},
        {"vpt_mean", report.vpt_mean},
        {"vpt_max", report.vpt_max},
        {"psd_mse", summary["psd_mse"]}});
}

void run_export(const Globals& g, const std::string& dataset, const std::string& out) {
  const auto ds = load_dataset(dataset);
  const fs::path path = resolve_out(g, out, ds.name + ".csv");
  io::export_csv(ds, path);
  emit({{"csv", path.string()}, {"rows", ds.rows()}});
}

void error_line(int code, const std::string& kind, const std::string& message) {
  std::cerr << json{{"error", {{"code", code}, {"kind", kind}, {"message", message}}}}.dump() << std::endl;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sequence-model forecasting toolkit for chaotic and real-world series"};
  app.require_subcommand(1);
  Globals g;
  std::uint64_t seed = 0;
  auto* seed_opt = app.add_option("--seed", seed, "Random seed (overrides configs)");
  app.add_option("--out-dir", g.out_dir, "Directory for outputs");
  app.add_option("--parallel", g.parallel, "Worker threads for sweeps")->check(CLI::PositiveNumber);

  GenerateArgs ga;
  auto* gen = app.add_subcommand("generate", "Integrate a chaotic system into a dataset file");
  gen->add_option("--system", ga.system, "lorenz96 or ks")->check(CLI::IsMember({"lorenz96", "ks"}));
  gen->add_option("--out", ga.out, "Output file or directory");
  gen->add_option("--config", ga.config, "JSON file with Lorenz-96 settings");
  gen->add_option("--forcing", ga.forcing, "Lorenz-96 forcing F");
  gen->add_option("--K", ga.K, "Lorenz-96 macro-scale count");
  gen->add_option("--J", ga.J, "Lorenz-96 meso-scale count per X");
  gen->add_option("--I", ga.I, "Lorenz-96 micro-scale count per Y");
  gen->add_option("--dt", ga.dt, "Solver step");
  gen->add_option("--total-time", ga.total_time, "Lorenz-96 recorded time");
  gen->add_option("--transient-time", ga.transient_time, "Lorenz-96 discarded time");
  gen->add_option("--train-samples", ga.train_samples, "Lorenz-96 training rows");
  gen->add_option("--lyapunov", ga.lyapunov, "Maximal Lyapunov exponent to record");
  gen->add_option("--samples", ga.samples, "K-S total steps including transient");
  gen->add_option("--transient-samples", ga.transient_samples, "K-S discarded steps");
  gen->add_option("--nodes", ga.nodes, "K-S grid points");

  IngestArgs ia;
  auto* ing = app.add_subcommand("ingest", "Convert a timestamped CSV into a dataset file");
  ing->add_option("--csv", ia.csv, "Input CSV")->required()->check(CLI::ExistingFile);
  ing->add_option("--timestamp-column", ia.timestamp, "Timestamp column name");
  ing->add_option("--columns", ia.columns, "Comma-separated value columns (default: all others)");
  ing->add_option("--ratio", ia.ratio, "train:val:test ratio, e.g. 6:2:2");
  ing->add_option("--resolution-seconds", ia.resolution, "Expected row spacing");
  ing->add_option("--name", ia.name, "Dataset name");
  ing->add_option("--out", ia.out, "Output file or directory");

  std::string config, dataset, run_name;
  std::vector<std::string> sets;
  auto* tr = app.add_subcommand("train", "Train one model from a run config");
  tr->add_option("--config", config, "Run config JSON")->required()->check(CLI::ExistingFile);
  tr->add_option("--dataset", dataset, "Dataset file")->required()->check(CLI::ExistingFile);
  tr->add_option("--set", sets, "Override a config entry, e.g. model.gate=D");
  tr->add_option("--name", run_name, "Run directory name (default: run id)");

  std::string grid;
  bool force = false;
  auto* sw = app.add_subcommand("sweep", "Train every point of a grid");
  sw->add_option("--grid", grid, "Grid JSON")->required()->check(CLI::ExistingFile);
  sw->add_option("--dataset", dataset, "Dataset file")->required()->check(CLI::ExistingFile);
  sw->add_flag("--force", force, "Re-run configs that already have manifests");

  std::string ckpt, out;
  std::size_t start = 0, warmup = 0, horizon = 0, ics = 100;
  double horizon_lyap = 5.0, eps = 0.5;
  std::string split = "test";
  auto* fc = app.add_subcommand("forecast", "Free-run a checkpoint from a dataset row");
  fc->add_option("--checkpoint", ckpt, "Checkpoint file")->required()->check(CLI::ExistingFile);
  fc->add_option("--dataset", dataset, "Dataset file")->required()->check(CLI::ExistingFile);
  fc->add_option("--start", start, "First forecast row (default: start of test split)");
  fc->add_option("--warmup", warmup, "Teacher-forced rows before start (default: S)");
  fc->add_option("--horizon", horizon, "Steps to forecast")->required();
  fc->add_option("--out", out, "Output CSV");

  auto* ev = app.add_subcommand("evaluate", "Score a checkpoint over many initial conditions");
  ev->add_option("--checkpoint", ckpt, "Checkpoint file")->required()->check(CLI::ExistingFile);
  ev->add_option("--dataset", dataset, "Dataset file")->required()->check(CLI::ExistingFile);
  ev->add_option("--ics", ics, "Initial conditions")->check(CLI::PositiveNumber);
  ev->add_option("--horizon-lyap", horizon_lyap, "Forecast length in Lyapunov times (days for real data)");
  ev->add_option("--horizon", horizon, "Forecast length in steps (overrides --horizon-lyap)");
  ev->add_option("--eps", eps, "NRMSE threshold for VPT");
  ev->add_option("--split", split, "test or val")->check(CLI::IsMember({"test", "val"}));

  auto* ex = app.add_subcommand("export", "Write a dataset file as CSV");
  ex->add_option("--dataset", dataset, "Dataset file")->required()->check(CLI::ExistingFile);
  ex->add_option("--out", out, "Output CSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    error_line(2, "usage", e.what());
    return 2;
  }
  if (*seed_opt) g.seed = seed;

  try {
    if (*gen) run_generate(g, ga);
    else if (*ing) run_ingest(g, ia);
    else if (*tr) run_train(g, config, dataset, sets, run_name);
    else if (*sw) run_sweep(g, grid, dataset, force);
    else if (*fc) run_forecast(g, ckpt, dataset, start, warmup, horizon, out);
    else if (*ev) run_evaluate(g, ckpt, dataset, ics, horizon_lyap, horizon, eps, split);
    else if (*ex) run_export(g, dataset, out);
  } catch (const UsageError& e) {
    std::cerr << app.help() << "\n";
    error_line(2, "usage", e.what());
    return 2;
  } catch (const std::exception& e) {
    error_line(1, "runtime", e.what());
    return 1;
  }
  return 0;
}
