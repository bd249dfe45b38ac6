#pragma once

// Multivariate trajectories with chronological splits, train-split
// standardisation statistics and Lyapunov metadata.
//
// Rows [0, train_end) are training data, [train_end, val_end) validation and
// [val_end, N) test. Generated datasets leave the validation range empty; the
// trainer then holds out the tail of the training range.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "seqmech/tensor.hpp"

namespace seqmech {

struct TrajectoryDataset {
  std::string name;
  Tensor data;  // [N x d], raw units
  std::size_t train_end = 0;
  std::size_t val_end = 0;
  std::vector<double> mean;    // per dimension, over the training rows
  std::vector<double> stddev;  // population standard deviation, same rows
  double dt = 1.0;             // sample interval
  double lyapunov = 1.0;       // maximal Lyapunov exponent (1/dt-units)
  nlohmann::json meta = nlohmann::json::object();

  std::size_t rows() const { return data.rank() == 2 ? data.dim(0) : 0; }
  std::size_t dims() const { return data.rank() == 2 ? data.dim(1) : 0; }
  /// Throws unless the splits are ordered and within range and stats match d.
  void validate() const;
};

/// Recomputes mean and stddev over [0, train_end). Throws on a constant dimension.
void compute_stats(TrajectoryDataset& ds);

/// (x - mean) / stddev applied to the trailing axis of x.
Tensor standardize(const TrajectoryDataset& ds, const Tensor& x);
Tensor destandardize(const TrajectoryDataset& ds, const Tensor& z);

/// Rows [begin, end) of the dataset as a [n x d] tensor.
Tensor rows(const Tensor& data, std::size_t begin, std::size_t end);

inline constexpr char kDatasetMagic[9] = "SQFDSET1";
inline constexpr std::uint32_t kDatasetVersion = 1;

void save_dataset(const std::filesystem::path& path, const TrajectoryDataset& ds);
TrajectoryDataset load_dataset(const std::filesystem::path& path);

}  // namespace seqmech
