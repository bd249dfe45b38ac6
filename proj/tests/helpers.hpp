#pragma once

#include <cstddef>
#include <vector>

#include "oracles.hpp"
#include "seqmech/rng.hpp"
#include "seqmech/tensor.hpp"

inline oracle::Mat to_mat(const seqmech::Tensor& t) {
  const std::size_t c = t.shape().back(), r = t.size() / c;
  oracle::Mat m(r, std::vector<double>(c));
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) m[i][j] = t[i * c + j];
  return m;
}

inline seqmech::Tensor from_mat(const oracle::Mat& m) {
  std::vector<double> d;
  for (const auto& row : m) d.insert(d.end(), row.begin(), row.end());
  return seqmech::Tensor({m.size(), m[0].size()}, d);
}

inline seqmech::Tensor random_tensor(seqmech::Shape shape, std::uint64_t seed, double a = 1.0) {
  seqmech::Rng rng(seed);
  seqmech::Tensor t(std::move(shape));
  for (auto& v : t.storage()) v = rng.uniform(-a, a);
  return t;
}
