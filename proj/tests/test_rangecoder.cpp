#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "opcc/dist.hpp"
#include "opcc/math.hpp"
#include "opcc/rangecoder.hpp"

namespace {

using namespace opcc;

Distribution255 random_dist(Rng& rng, double sharpness) {
  Distribution255 p;
  double total = 0.0;
  for (auto& v : p) {
    v = std::exp(rng.normal() * sharpness);
    total += v;
  }
  for (auto& v : p) v /= total;
  return p;
}

TEST(RangeCoder, RoundtripRandomStreams) {
  Rng rng(42);
  for (int trial = 0; trial < 30; ++trial) {
    // a fresh context distribution per symbol, like the adaptive coder uses
    const size_t n = 1 + rng.below(2000);
    std::vector<QuantizedCDF> cdfs;
    std::vector<int> symbols;
    cdfs.reserve(n);
    symbols.reserve(n);
    Rng side(trial * 977 + 5);
    for (size_t i = 0; i < n; ++i) {
      cdfs.push_back(quantize_dist(random_dist(side, 0.5 + trial * 0.1)));
      symbols.push_back(static_cast<int>(rng.below(255)));
    }
    RangeEncoder enc;
    for (size_t i = 0; i < n; ++i) enc.encode(cdfs[i], symbols[i]);
    const std::vector<uint8_t> bytes = enc.finish();

    RangeDecoder dec(bytes.data(), bytes.size());
    for (size_t i = 0; i < n; ++i) EXPECT_EQ(dec.decode(cdfs[i]), symbols[i]);
  }
}

TEST(RangeCoder, PayloadTracksInformationContent) {
  // every encode in this suite must stay within 64 bits of the ideal
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const Distribution255 p = random_dist(rng, 1.5);
    const QuantizedCDF cdf = quantize_dist(p);
    const size_t n = 50 + rng.below(1500);
    double ideal_bits = 0.0;
    RangeEncoder enc;
    std::vector<int> symbols;
    for (size_t i = 0; i < n; ++i) {
      const int s = static_cast<int>(rng.below(255));
      symbols.push_back(s);
      enc.encode(cdf, s);
      ideal_bits -= std::log2(static_cast<double>(cdf.freq(s)) / kFreqTotal);
    }
    const auto bytes = enc.finish();
    EXPECT_LE(8.0 * bytes.size(), ideal_bits + 64.0);
    RangeDecoder dec(bytes.data(), bytes.size());
    for (size_t i = 0; i < n; ++i) EXPECT_EQ(dec.decode(cdf), symbols[i]);
  }
}

TEST(RangeCoder, UniformStreamHitsEntropy) {
  // 10000 uniform symbols carry 10000 * log2(255) = 79940.7 bits
  Distribution255 p;
  p.fill(1.0 / 255.0);
  const QuantizedCDF cdf = quantize_dist(p);
  Rng rng(123);
  RangeEncoder enc;
  std::vector<int> symbols;
  for (int i = 0; i < 10000; ++i) {
    const int s = static_cast<int>(rng.below(255));
    symbols.push_back(s);
    enc.encode(cdf, s);
  }
  const auto bytes = enc.finish();
  const double bits = 8.0 * static_cast<double>(bytes.size());
  const double ideal = 10000.0 * std::log2(255.0);
  EXPECT_NEAR(bits, ideal, 0.002 * ideal);
  RangeDecoder dec(bytes.data(), bytes.size());
  for (int i = 0; i < 10000; ++i) EXPECT_EQ(dec.decode(cdf), symbols[i]);
}

TEST(RangeCoder, SingleCoinFlipCostsOnlyTheFlush) {
  // one symbol at probability 1/2 is one bit of content; everything beyond
  // 65 bits would mean the coder leaks real rate
  Distribution255 p;
  p.fill(0.5 / 254.0);
  p[0] = 0.5;
  const QuantizedCDF cdf = quantize_dist(p);
  ASSERT_EQ(cdf.freq(0), kFreqTotal / 2);
  RangeEncoder enc;
  enc.encode(cdf, 0);
  const auto bytes = enc.finish();
  EXPECT_LE(8.0 * bytes.size(), 65.0);
  RangeDecoder dec(bytes.data(), bytes.size());
  EXPECT_EQ(dec.decode(cdf), 0);
}

TEST(RangeCoder, SkewedAdaptiveLikeStream) {
  // drive the coder the way the adaptive baseline does: counts update as
  // symbols arrive, encoder and decoder must stay in lockstep
  auto make_cdf = [](const std::vector<uint32_t>& counts) {
    Distribution255 p;
    double total = 0;
    for (int i = 0; i < 255; ++i) total += counts[i];
    for (int i = 0; i < 255; ++i) p[i] = counts[i] / total;
    return quantize_dist(p);
  };
  Rng rng(77);
  std::vector<uint32_t> counts(255, 1);
  RangeEncoder enc;
  std::vector<int> symbols;
  for (int i = 0; i < 3000; ++i) {
    const int s = (i % 10 == 0) ? static_cast<int>(rng.below(255)) : 254;
    symbols.push_back(s);
    enc.encode(make_cdf(counts), s);
    counts[s] += 32;
  }
  const auto bytes = enc.finish();
  // nearly-constant stream: far below a byte per symbol
  EXPECT_LT(bytes.size(), 1500u);
  std::fill(counts.begin(), counts.end(), 1u);
  RangeDecoder dec(bytes.data(), bytes.size());
  for (int i = 0; i < 3000; ++i) {
    const int s = dec.decode(make_cdf(counts));
    EXPECT_EQ(s, symbols[i]);
    counts[s] += 32;
  }
}

}  // namespace
