#pragma once

#include <cmath>
#include <vector>

#include "opcc/common.hpp"

namespace opcc {

struct PcaResult {
  std::vector<std::vector<double>> coords;  // n rows x k components
  std::vector<double> eigenvalues;          // descending
  std::vector<std::vector<double>> components;  // k x d unit vectors
};

// Principal components by power iteration with deflation on the covariance
// matrix. Deterministic: fixed start vector, fixed sign convention (largest
// magnitude entry of each component is positive).
inline PcaResult pca_project(const std::vector<std::vector<double>>& rows,
                             int k) {
  if (rows.empty()) throw Error("pca: no rows");
  const size_t n = rows.size(), d = rows[0].size();
  for (const auto& r : rows)
    if (r.size() != d) throw Error("pca: ragged input");
  if (k < 1 || static_cast<size_t>(k) > d)
    throw Error("pca: bad component count");

  std::vector<double> mean(d, 0.0);
  for (const auto& r : rows)
    for (size_t j = 0; j < d; ++j) mean[j] += r[j];
  for (auto& m : mean) m /= static_cast<double>(n);

  std::vector<std::vector<double>> X(n, std::vector<double>(d));
  for (size_t i = 0; i < n; ++i)
    for (size_t j = 0; j < d; ++j) X[i][j] = rows[i][j] - mean[j];

  const double denom = n > 1 ? static_cast<double>(n - 1) : 1.0;
  std::vector<std::vector<double>> C(d, std::vector<double>(d, 0.0));
  for (size_t i = 0; i < n; ++i)
    for (size_t a = 0; a < d; ++a) {
      const double xa = X[i][a];
      if (xa == 0.0) continue;
      for (size_t b = 0; b < d; ++b) C[a][b] += xa * X[i][b];
    }
  for (auto& row : C)
    for (auto& v : row) v /= denom;

  PcaResult res;
  res.components.assign(k, std::vector<double>(d, 0.0));
  res.eigenvalues.assign(k, 0.0);

  for (int c = 0; c < k; ++c) {
    std::vector<double> v(d);
    for (size_t j = 0; j < d; ++j)
      v[j] = 1.0 / std::sqrt(static_cast<double>(d)) +
             1e-3 * std::cos(static_cast<double>(j + 1) * (c + 1));
    double lambda = 0.0;
    for (int it = 0; it < 2000; ++it) {
      std::vector<double> w(d, 0.0);
      for (size_t a = 0; a < d; ++a) {
        double s = 0.0;
        for (size_t b = 0; b < d; ++b) s += C[a][b] * v[b];
        w[a] = s;
      }
      // deflate previously found components
      for (int pc = 0; pc < c; ++pc) {
        double proj = 0.0;
        for (size_t j = 0; j < d; ++j) proj += res.components[pc][j] * w[j];
        for (size_t j = 0; j < d; ++j) w[j] -= proj * res.components[pc][j];
      }
      double norm = 0.0;
      for (double x : w) norm += x * x;
      norm = std::sqrt(norm);
      if (norm == 0.0) break;  // spectrum exhausted
      for (auto& x : w) x /= norm;
      double nl = 0.0;
      for (size_t a = 0; a < d; ++a) {
        double s = 0.0;
        for (size_t b = 0; b < d; ++b) s += C[a][b] * w[b];
        nl += w[a] * s;
      }
      v.swap(w);
      if (std::abs(nl - lambda) <= 1e-14 * std::max(1.0, std::abs(nl))) {
        lambda = nl;
        break;
      }
      lambda = nl;
    }
    // sign convention
    size_t arg = 0;
    for (size_t j = 1; j < d; ++j)
      if (std::abs(v[j]) > std::abs(v[arg])) arg = j;
    if (v[arg] < 0)
      for (auto& x : v) x = -x;
    res.components[c] = v;
    res.eigenvalues[c] = lambda;
  }

  res.coords.assign(n, std::vector<double>(k, 0.0));
  for (size_t i = 0; i < n; ++i)
    for (int c = 0; c < k; ++c) {
      double s = 0.0;
      for (size_t j = 0; j < d; ++j) s += X[i][j] * res.components[c][j];
      res.coords[i][c] = s;
    }
  return res;
}

}  // namespace opcc
