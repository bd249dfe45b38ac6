#include "seqmech/dataset.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace seqmech {

void TrajectoryDataset::validate() const {
  if (data.rank() != 2) throw DimensionError("dataset matrix must be [N x d]");
  if (!(train_end <= val_end && val_end <= rows())) {
    throw std::invalid_argument("dataset splits out of order: train_end=" + std::to_string(train_end) +
                                " val_end=" + std::to_string(val_end) + " N=" + std::to_string(rows()));
  }
  if (mean.size() != dims() || stddev.size() != dims()) throw DimensionError("dataset stats do not match d");
}

void compute_stats(TrajectoryDataset& ds) {
  const std::size_t n = ds.train_end, d = ds.dims();
  if (n == 0) throw std::invalid_argument("cannot compute statistics of an empty training split");
  ds.mean.assign(d, 0.0);
  ds.stddev.assign(d, 0.0);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t k = 0; k < d; ++k) ds.mean[k] += ds.data[r * d + k];
  for (double& m : ds.mean) m /= static_cast<double>(n);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t k = 0; k < d; ++k) {
      const double e = ds.data[r * d + k] - ds.mean[k];
      ds.stddev[k] += e * e;
    }
  for (std::size_t k = 0; k < d; ++k) {
    ds.stddev[k] = std::sqrt(ds.stddev[k] / static_cast<double>(n));
    if (!(ds.stddev[k] > 0.0)) throw std::invalid_argument("dimension " + std::to_string(k) + " has zero variance");
  }
}

namespace {
void check_stats(const TrajectoryDataset& ds, const Tensor& x) {
  if (x.rank() == 0 || x.dim(-1) != ds.mean.size()) {
    throw DimensionError("expected trailing dim " + std::to_string(ds.mean.size()) + ", got " + shape_str(x.shape()));
  }
  for (double s : ds.stddev)
    if (!(s > 0.0)) throw std::invalid_argument("zero standard deviation");
}
}  // namespace

Tensor standardize(const TrajectoryDataset& ds, const Tensor& x) {
  check_stats(ds, x);
  Tensor z = x;
  const std::size_t d = ds.mean.size();
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = (z[i] - ds.mean[i % d]) / ds.stddev[i % d];
  return z;
}

Tensor destandardize(const TrajectoryDataset& ds, const Tensor& z) {
  check_stats(ds, z);
  Tensor x = z;
  const std::size_t d = ds.mean.size();
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = x[i] * ds.stddev[i % d] + ds.mean[i % d];
  return x;
}

Tensor rows(const Tensor& data, std::size_t begin, std::size_t end) {
  if (data.rank() != 2 || begin > end || end > data.dim(0)) throw DimensionError("row range out of bounds");
  const std::size_t d = data.dim(1);
  return Tensor(Shape{end - begin, d},
                std::vector<double>(data.storage().begin() + begin * d, data.storage().begin() + end * d));
}

namespace {

static_assert(std::endian::native == std::endian::little, "dataset files are little-endian");

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T take(std::istream& is, const std::filesystem::path& path) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) throw std::runtime_error("truncated file " + path.string());
  return v;
}

}  // namespace

void save_dataset(const std::filesystem::path& path, const TrajectoryDataset& ds) {
  ds.validate();
  nlohmann::json header{{"name", ds.name},         {"n", ds.rows()},        {"d", ds.dims()},
                        {"dt", ds.dt},             {"lyapunov", ds.lyapunov}, {"train_end", ds.train_end},
                        {"val_end", ds.val_end},   {"mean", ds.mean},       {"std", ds.stddev},
                        {"meta", ds.meta}};
  const std::string text = header.dump();
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os.write(kDatasetMagic, 8);
  put<std::uint32_t>(os, kDatasetVersion);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(text.size()));
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  os.write(reinterpret_cast<const char*>(ds.data.storage().data()),
           static_cast<std::streamsize>(ds.data.size() * sizeof(double)));
  if (!os) throw std::runtime_error("failed writing " + path.string());
}

TrajectoryDataset load_dataset(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open dataset " + path.string());
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, kDatasetMagic, 8) != 0) {
    throw std::runtime_error(path.string() + " is not a dataset file");
  }
  const auto version = take<std::uint32_t>(is, path);
  if (version != kDatasetVersion) throw std::runtime_error("unsupported dataset version " + std::to_string(version));
  const auto len = take<std::uint32_t>(is, path);
  std::string text(len, '\0');
  if (!is.read(text.data(), len)) throw std::runtime_error("truncated header in " + path.string());
  const auto header = nlohmann::json::parse(text);
  TrajectoryDataset ds;
  ds.name = header.at("name").get<std::string>();
  const auto n = header.at("n").get<std::size_t>(), d = header.at("d").get<std::size_t>();
  ds.dt = header.at("dt").get<double>();
  ds.lyapunov = header.at("lyapunov").get<double>();
  ds.train_end = header.at("train_end").get<std::size_t>();
  ds.val_end = header.at("val_end").get<std::size_t>();
  ds.mean = header.at("mean").get<std::vector<double>>();
  ds.stddev = header.at("std").get<std::vector<double>>();
  ds.meta = header.value("meta", nlohmann::json::object());
  std::vector<double> values(n * d);
  if (!is.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(double)))) {
    throw std::runtime_error("truncated data in " + path.string());
  }
  ds.data = Tensor(Shape{n, d}, std::move(values));
  ds.validate();
  return ds;
}

}  // namespace seqmech
