#pragma once

// Independent reference computations used by unit and acceptance tests. Every
// routine here is written directly from the defining formula in double
// precision and shares no code with the library paths it checks.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

#include "semsam/embedding_io.hpp"

namespace oracle {

struct KnnRow {
  std::vector<std::uint32_t> ids;
  std::vector<double> vals;
};

/// Full |C|x|C| cosine matrix, then per-row ranking: self first, the rest by
/// descending cosine with ascending-id ties.
inline std::vector<KnnRow> brute_force_knn(const semsam::EmbeddingMatrix& e, const std::vector<std::uint32_t>& content,
                                           std::size_t k, double eps) {
  const std::size_t n = content.size();
  const std::size_t d = e.dim;
  std::vector<double> unit(n * d);
  for (std::size_t i = 0; i < n; ++i) {
    double norm = 0.0;
    for (std::size_t j = 0; j < d; ++j) norm += double(e.data[content[i] * d + j]) * e.data[content[i] * d + j];
    norm = std::sqrt(norm);
    for (std::size_t j = 0; j < d; ++j) unit[i * d + j] = e.data[content[i] * d + j] / (norm + eps);
  }
  std::vector<double> cos(n * n);
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = 0; b < n; ++b) {
      double s = 0.0;
      for (std::size_t j = 0; j < d; ++j) s += unit[a * d + j] * unit[b * d + j];
      cos[a * n + b] = s;
    }

  std::vector<KnnRow> rows(n);
  for (std::size_t a = 0; a < n; ++a) {
    std::vector<std::size_t> others;
    for (std::size_t b = 0; b < n; ++b)
      if (b != a) others.push_back(b);
    std::stable_sort(others.begin(), others.end(), [&](std::size_t x, std::size_t y) {
      if (cos[a * n + x] != cos[a * n + y]) return cos[a * n + x] > cos[a * n + y];
      return content[x] < content[y];
    });
    rows[a].ids.push_back(content[a]);
    rows[a].vals.push_back(cos[a * n + a]);
    for (std::size_t j = 0; j + 1 < k; ++j) {
      rows[a].ids.push_back(content[others[j]]);
      rows[a].vals.push_back(cos[a * n + others[j]]);
    }
  }
  return rows;
}

/// Direct evaluation of exp(l/T)/sum exp(l/T) in long double.
inline std::vector<double> softmax(std::span<const float> logits, double t) {
  long double mx = *std::max_element(logits.begin(), logits.end());
  std::vector<long double> e(logits.size());
  long double s = 0;
  for (std::size_t i = 0; i < logits.size(); ++i) s += e[i] = std::exp((logits[i] - mx) / t);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = static_cast<double>(e[i] / s);
  return out;
}

}  // namespace oracle
