#include <gtest/gtest.h>

#include <cmath>
#include <cstring>

#include "opcc/dist.hpp"
#include "opcc/math.hpp"

namespace {

using namespace opcc;

void check_well_formed(const QuantizedCDF& q) {
  ASSERT_EQ(q.cum[0], 0u);
  ASSERT_EQ(q.cum[255], kFreqTotal);
  for (int i = 0; i < 255; ++i) ASSERT_GT(q.cum[i + 1], q.cum[i]);
}

// KL(p || q) in bits, p renormalized the same way quantize_dist sees it
double kl_bits(const Distribution255& p, const QuantizedCDF& q) {
  double total = 0.0;
  for (double v : p) total += (std::isfinite(v) && v > 0.0) ? v : 0.0;
  double kl = 0.0;
  for (int i = 0; i < 255; ++i) {
    if (!(p[i] > 0.0)) continue;
    const double pi = p[i] / total;
    const double qi = static_cast<double>(q.freq(i)) / kFreqTotal;
    kl += pi * std::log2(pi / qi);
  }
  return kl;
}

TEST(QuantizeDist, UniformSplitsEvenly) {
  Distribution255 p;
  p.fill(1.0 / 255.0);
  const QuantizedCDF q = quantize_dist(p);
  check_well_formed(q);
  uint32_t lo = kFreqTotal, hi = 0;
  uint32_t total = 0;
  for (int i = 0; i < 255; ++i) {
    lo = std::min(lo, q.freq(i));
    hi = std::max(hi, q.freq(i));
    total += q.freq(i);
  }
  EXPECT_EQ(total, kFreqTotal);
  EXPECT_LE(hi - lo, 1u);  // 65536 = 254*257 + 258
}

TEST(QuantizeDist, TinyTailKeepsFrequencyOne) {
  Distribution255 p;
  p.fill(0.0);
  p[0] = 1.0 - 1e-12;
  p[200] = 1e-12;
  const QuantizedCDF q = quantize_dist(p);
  check_well_formed(q);
  EXPECT_EQ(q.freq(200), 1u);
  // zero-probability symbols still get the floor frequency
  EXPECT_EQ(q.freq(17), 1u);
  EXPECT_EQ(q.freq(0), kFreqTotal - 254u);
}

TEST(QuantizeDist, RandomSweepsStayClose) {
  Rng rng(99);
  for (int trial = 0; trial < 200; ++trial) {
    Distribution255 p;
    double total = 0.0;
    if (trial % 2 == 0) {
      // Dirichlet(1): normalized exponentials
      for (auto& v : p) {
        v = -std::log(std::max(rng.uniform(0.0, 1.0), 1e-300));
        total += v;
      }
    } else {
      // softmax of gaussians, the shape the model head produces
      double mx = -1e300;
      for (auto& v : p) {
        v = rng.normal() * 2.0;
        mx = std::max(mx, v);
      }
      for (auto& v : p) {
        v = std::exp(v - mx);
        total += v;
      }
    }
    for (auto& v : p) v /= total;
    const QuantizedCDF q = quantize_dist(p);
    check_well_formed(q);
    EXPECT_LT(kl_bits(p, q), 1e-3);
  }
}

TEST(QuantizeDist, Deterministic) {
  Rng rng(7);
  Distribution255 p;
  double total = 0.0;
  for (auto& v : p) {
    v = rng.uniform(0.0, 1.0) + 1e-6;
    total += v;
  }
  for (auto& v : p) v /= total;
  const QuantizedCDF a = quantize_dist(p);
  const QuantizedCDF b = quantize_dist(p);
  EXPECT_EQ(std::memcmp(a.cum.data(), b.cum.data(), sizeof a.cum), 0);
}

TEST(QuantizeDist, FindInvertsCum) {
  Rng rng(3);
  Distribution255 p;
  double total = 0.0;
  for (auto& v : p) {
    v = std::exp(rng.normal());
    total += v;
  }
  for (auto& v : p) v /= total;
  const QuantizedCDF q = quantize_dist(p);
  for (int s = 0; s < 255; ++s) {
    EXPECT_EQ(q.find(q.cum[s]), s);
    EXPECT_EQ(q.find(q.cum[s + 1] - 1), s);
  }
}

TEST(QuantizeDist, GarbageInputFallsBackToUniform) {
  Distribution255 p;
  p.fill(0.0);
  const QuantizedCDF q0 = quantize_dist(p);
  check_well_formed(q0);
  p.fill(std::nan(""));
  const QuantizedCDF qn = quantize_dist(p);
  check_well_formed(qn);
  EXPECT_EQ(std::memcmp(q0.cum.data(), qn.cum.data(), sizeof q0.cum), 0);
}

}  // namespace
