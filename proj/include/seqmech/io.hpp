#pragma once

// CSV ingestion of real-world series, chronological splits, plot-data export
// and append-only run manifests.

#include <array>
#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "seqmech/dataset.hpp"
#include "seqmech/evaluation.hpp"

namespace seqmech::io {

struct CsvSeriesSpec {
  std::filesystem::path path;
  std::string timestamp_column = "date";
  std::vector<std::string> value_columns;  // empty: every other column
  double resolution_seconds = 0.0;         // 0: inferred from the first two rows
  std::array<std::size_t, 3> ratio{6, 2, 2};
  std::string name;                        // default: file stem
};

/// Parses "YYYY-MM-DD[ T]HH:MM[:SS]" or a plain number of seconds.
double parse_timestamp(const std::string& s);

/// Rows must be equally spaced and strictly increasing; every value cell must
/// be numeric. dt is stored in days and the Lyapunov exponent as 1, so VPT
/// comes out in days.
TrajectoryDataset ingest_csv(const CsvSeriesSpec& spec);

struct SplitIndices {
  std::size_t train_end = 0, val_end = 0, n = 0;
};

/// Validation and test sizes are floor(n * r / sum(r)); train takes the rest.
SplitIndices chrono_split(std::size_t n, const std::array<std::size_t, 3>& ratio);

/// Writes a timestamp column ("t", seconds from the first row) and the values
/// with round-trip precision.
void export_csv(const TrajectoryDataset& ds, const std::filesystem::path& path);

/// nrmse_curve.csv, vpt.csv and psd.csv in `dir`.
void export_plot_data(const metrics::EvalReport& report, const std::filesystem::path& dir, const std::string& run);

/// FNV-1a over the raw matrix bytes and split indices.
std::uint64_t dataset_hash(const TrajectoryDataset& ds);
std::string hex(std::uint64_t v);

/// Appends one JSON line; safe to call from several threads.
void append_manifest(const std::filesystem::path& path, const nlohmann::json& manifest);
std::vector<nlohmann::json> read_manifests(const std::filesystem::path& path);

}  // namespace seqmech::io
