#pragma once

// Straight-loop reference implementations used to cross-check the library.

#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

namespace oracle {

using Mat = std::vector<std::vector<double>>;

inline Mat matmul(const Mat& a, const Mat& b) {
  const std::size_t m = a.size(), k = b.size(), n = b[0].size();
  Mat c(m, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t p = 0; p < k; ++p) c[i][j] += a[i][p] * b[p][j];
  return c;
}

inline Mat transpose(const Mat& a) {
  Mat t(a[0].size(), std::vector<double>(a.size()));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a[0].size(); ++j) t[j][i] = a[i][j];
  return t;
}

inline std::vector<double> softmax(const std::vector<double>& x) {
  double m = -std::numeric_limits<double>::infinity();
  for (double v : x) m = std::max(m, v);
  std::vector<double> e(x.size());
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += (e[i] = std::isinf(x[i]) && x[i] < 0 ? 0.0 : std::exp(x[i] - m));
  for (double& v : e) v /= s;
  return e;
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// y = x W^T + b for one row.
inline std::vector<double> affine(const Mat& w, const std::vector<double>& b, const std::vector<double>& x) {
  std::vector<double> y(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) y[i] = dot(w[i], x) + (b.empty() ? 0.0 : b[i]);
  return y;
}

}  // namespace oracle
