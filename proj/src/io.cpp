#include "seqmech/io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <sstream>
#include <stdexcept>

#include "seqmech/rng.hpp"

namespace seqmech::io {

namespace {

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (char c : line) {
    if (c == '"') {
      quoted = !quoted;
    } else if (c == ',' && !quoted) {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  for (auto& f : out) {
    const auto a = f.find_first_not_of(" \t"), b = f.find_last_not_of(" \t");
    f = a == std::string::npos ? "" : f.substr(a, b - a + 1);
  }
  return out;
}

bool parse_double(const std::string& s, double& v) {
  if (s.empty()) return false;
  const char* end = s.data() + s.size();
  auto [p, ec] = std::from_chars(s.data(), end, v);
  return ec == std::errc() && p == end && std::isfinite(v);
}

}  // namespace

double parse_timestamp(const std::string& s) {
  double v;
  if (parse_double(s, v)) return v;
  std::tm tm{};
  int sec = 0;
  char sep = 0;
  const int got = std::sscanf(s.c_str(), "%d-%d-%d%c%d:%d:%d", &tm.tm_year, &tm.tm_mon, &tm.tm_mday, &sep, &tm.tm_hour,
                              &tm.tm_min, &sec);
  if (got < 3 || (got > 3 && got < 6) || (got >= 4 && sep != ' ' && sep != 'T')) {
    throw std::invalid_argument("unparseable timestamp '" + s + "'");
  }
  tm.tm_year -= 1900;
  tm.tm_mon -= 1;
  tm.tm_sec = got == 7 ? sec : 0;
  return static_cast<double>(timegm(&tm));
}

SplitIndices chrono_split(std::size_t n, const std::array<std::size_t, 3>& ratio) {
  const std::size_t total = ratio[0] + ratio[1] + ratio[2];
  if (total == 0) throw std::invalid_argument("split ratio must not be all zero");
  const std::size_t val = n * ratio[1] / total, test = n * ratio[2] / total;
  const std::size_t train = n - val - test;
  if (train == 0 || val == 0 || test == 0) {
    throw std::invalid_argument("split " + std::to_string(ratio[0]) + ":" + std::to_string(ratio[1]) + ":" +
                                std::to_string(ratio[2]) + " of " + std::to_string(n) + " rows leaves a partition empty");
  }
  return {train, train + val, n};
}

TrajectoryDataset ingest_csv(const CsvSeriesSpec& spec) {
  std::ifstream in(spec.path);
  if (!in) throw std::runtime_error("cannot open " + spec.path.string());
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error(spec.path.string() + " is empty");
  const auto header = split_line(line);
  std::size_t ts_col = header.size();
  for (std::size_t c = 0; c < header.size(); ++c)
    if (header[c] == spec.timestamp_column) ts_col = c;
  if (ts_col == header.size()) throw std::invalid_argument("timestamp column '" + spec.timestamp_column + "' not found");
  std::vector<std::size_t> cols;
  std::vector<std::string> names;
  if (spec.value_columns.empty()) {
    for (std::size_t c = 0; c < header.size(); ++c)
      if (c != ts_col) {
        cols.push_back(c);
        names.push_back(header[c]);
      }
  } else {
    for (const auto& want : spec.value_columns) {
      auto it = std::find(header.begin(), header.end(), want);
      if (it == header.end()) throw std::invalid_argument("column '" + want + "' not found");
      cols.push_back(static_cast<std::size_t>(it - header.begin()));
      names.push_back(want);
    }
  }
  if (cols.empty()) throw std::invalid_argument("no value columns");

  std::vector<double> values, times;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto f = split_line(line);
    if (f.size() != header.size()) {
      throw std::invalid_argument("line " + std::to_string(lineno) + " has " + std::to_string(f.size()) +
                                  " cells, header has " + std::to_string(header.size()));
    }
    times.push_back(parse_timestamp(f[ts_col]));
    for (std::size_t c : cols) {
      double v;
      if (!parse_double(f[c], v)) {
        throw std::invalid_argument("line " + std::to_string(lineno) + ": non-numeric cell '" + f[c] + "' in column " +
                                    header[c]);
      }
      values.push_back(v);
    }
  }
  const std::size_t n = times.size();
  if (n < 3) throw std::invalid_argument("need at least 3 rows, got " + std::to_string(n));
  const double step = spec.resolution_seconds > 0 ? spec.resolution_seconds : times[1] - times[0];
  for (std::size_t i = 1; i < n; ++i) {
    const double gap = times[i] - times[i - 1];
    if (!(gap > 0)) throw std::invalid_argument("timestamps not strictly increasing at row " + std::to_string(i + 1));
    if (std::abs(gap - step) > 1e-6 * std::max(1.0, step)) {
      throw std::invalid_argument("irregular spacing at row " + std::to_string(i + 1) + " (" + std::to_string(gap) +
                                  " s, expected " + std::to_string(step) + " s)");
    }
  }
  TrajectoryDataset ds;
  ds.name = spec.name.empty() ? spec.path.stem().string() : spec.name;
  ds.data = Tensor(Shape{n, cols.size()}, std::move(values));
  const auto split = chrono_split(n, spec.ratio);
  ds.train_end = split.train_end;
  ds.val_end = split.val_end;
  ds.dt = step / 86400.0;
  ds.lyapunov = 1.0;
  ds.meta = {{"source", spec.path.filename().string()},
             {"columns", names},
             {"resolution_seconds", step},
             {"steps_per_day", 86400.0 / step},
             {"start_time", times.front()},
             {"ratio", spec.ratio}};
  compute_stats(ds);
  return ds;
}

void export_csv(const TrajectoryDataset& ds, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  std::vector<std::string> names;
  if (ds.meta.contains("columns")) names = ds.meta["columns"].get<std::vector<std::string>>();
  names.resize(ds.dims());
  for (std::size_t k = 0; k < names.size(); ++k)
    if (names[k].empty()) names[k] = "x" + std::to_string(k);
  const double seconds = ds.dt * 86400.0;
  os << "t";
  for (const auto& n : names) os << ',' << n;
  os << '\n' << std::setprecision(17);
  for (std::size_t r = 0; r < ds.rows(); ++r) {
    os << static_cast<double>(r) * seconds;
    for (std::size_t k = 0; k < ds.dims(); ++k) os << ',' << ds.data[r * ds.dims() + k];
    os << '\n';
  }
}

void export_plot_data(const metrics::EvalReport& r, const std::filesystem::path& dir, const std::string& run) {
  if (r.vpt.empty() || r.mean_curve.empty() || r.psd_true.db.empty()) {
    throw std::invalid_argument("cannot export an incomplete evaluation report");
  }
  std::filesystem::create_directories(dir);
  std::ofstream c(dir / "nrmse_curve.csv"), v(dir / "vpt.csv"), p(dir / "psd.csv");
  if (!c || !v || !p) throw std::runtime_error("cannot write plot data in " + dir.string());
  c << std::setprecision(17) << "step,time,lyap_time,mean,stderr\n";
  for (std::size_t k = 0; k < r.mean_curve.size(); ++k) {
    const double t = static_cast<double>(k + 1) * r.dt;
    c << k + 1 << ',' << t << ',' << t * r.lyapunov << ',' << r.mean_curve[k] << ',' << r.stderr_curve[k] << '\n';
  }
  v << std::setprecision(17) << "run,ic,vpt\n";
  for (std::size_t i = 0; i < r.vpt.size(); ++i) v << run << ',' << i << ',' << r.vpt[i] << '\n';
  p << std::setprecision(17) << "freq,true_db,pred_db\n";
  for (std::size_t k = 0; k < r.psd_true.db.size(); ++k) {
    p << r.psd_true.freq[k] << ',' << r.psd_true.db[k] << ',';
    if (!r.psd_pred.db.empty()) p << r.psd_pred.db[k];
    p << '\n';
  }
}

std::uint64_t dataset_hash(const TrajectoryDataset& ds) {
  std::string bytes(reinterpret_cast<const char*>(ds.data.storage().data()), ds.data.size() * sizeof(double));
  bytes += std::to_string(ds.train_end) + ":" + std::to_string(ds.val_end);
  return fnv1a64(bytes);
}

std::string hex(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

namespace {
std::mutex& manifest_mutex() {
  static std::mutex m;
  return m;
}
}  // namespace

void append_manifest(const std::filesystem::path& path, const nlohmann::json& manifest) {
  std::lock_guard lock(manifest_mutex());
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::app);
  if (!os) throw std::runtime_error("cannot append to " + path.string());
  os << manifest.dump() << '\n';
  os.flush();
}

std::vector<nlohmann::json> read_manifests(const std::filesystem::path& path) {
  std::lock_guard lock(manifest_mutex());
  std::vector<nlohmann::json> out;
  std::ifstream in(path);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    // A torn final line from an interrupted run is ignored.
    auto j = nlohmann::json::parse(line, nullptr, false);
    if (!j.is_discarded()) out.push_back(std::move(j));
  }
  return out;
}

}  // namespace seqmech::io
