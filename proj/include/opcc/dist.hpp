#pragma once

#include <array>
#include <cmath>
#include <cstdint>

#include "opcc/common.hpp"

namespace opcc {

// Probabilities for occupancy symbols 1..255; index i holds symbol i + 1.
using Distribution255 = std::array<double, 255>;

constexpr int kFreqBits = 16;
constexpr uint32_t kFreqTotal = 1u << kFreqBits;

// Cumulative integer frequencies over the 255 symbols. cum[0] == 0,
// cum[255] == 2^16, strictly increasing, so every symbol keeps a nonzero
// coding probability.
struct QuantizedCDF {
  std::array<uint32_t, 256> cum{};

  uint32_t freq(int index) const { return cum[index + 1] - cum[index]; }

  // largest index with cum[index] <= f
  int find(uint32_t f) const {
    int lo = 0, hi = 255;
    while (lo + 1 < hi) {
      const int mid = (lo + hi) / 2;
      if (cum[mid] <= f)
        lo = mid;
      else
        hi = mid;
    }
    return lo;
  }
};

// Rounds a probability vector onto the 2^16 integer grid. Every symbol gets
// frequency >= 1; the residual after rounding is settled on the entries whose
// rounding error is largest, lowest index first on ties.
inline QuantizedCDF quantize_dist(const Distribution255& p) {
  std::array<double, 255> raw;
  double total = 0.0;
  for (int i = 0; i < 255; ++i) {
    const double v = (std::isfinite(p[i]) && p[i] > 0.0) ? p[i] : 0.0;
    raw[i] = v;
    total += v;
  }
  if (total <= 0.0) {
    for (auto& v : raw) v = 1.0;
    total = 255.0;
  }

  std::array<int64_t, 255> f;
  int64_t sum = 0;
  for (int i = 0; i < 255; ++i) {
    raw[i] = raw[i] / total * static_cast<double>(kFreqTotal);
    f[i] = std::llround(raw[i]);
    if (f[i] < 1) f[i] = 1;
    sum += f[i];
  }
  int64_t diff = static_cast<int64_t>(kFreqTotal) - sum;
  while (diff > 0) {
    // most under-represented entry gains one
    int best = 0;
    double best_err = raw[0] - static_cast<double>(f[0]);
    for (int i = 1; i < 255; ++i) {
      const double e = raw[i] - static_cast<double>(f[i]);
      if (e > best_err) {
        best_err = e;
        best = i;
      }
    }
    ++f[best];
    --diff;
  }
  while (diff < 0) {
    // most over-represented entry that can still shrink loses one
    int best = -1;
    double best_err = 0.0;
    for (int i = 0; i < 255; ++i) {
      if (f[i] <= 1) continue;
      const double e = raw[i] - static_cast<double>(f[i]);
      if (best < 0 || e < best_err) {
        best_err = e;
        best = i;
      }
    }
    if (best < 0) throw Error("quantize_dist: cannot balance frequencies");
    --f[best];
    ++diff;
  }

  QuantizedCDF q;
  q.cum[0] = 0;
  for (int i = 0; i < 255; ++i)
    q.cum[i + 1] = q.cum[i] + static_cast<uint32_t>(f[i]);
  return q;
}

}  // namespace opcc
