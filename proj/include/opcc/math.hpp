#pragma once

#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <random>
#include <vector>

namespace opcc {

// Dot product with a fixed four-lane accumulation order. The coder depends on
// bit-identical results across builds, so none of these kernels may be
// reordered by vectorization-dependent reductions.
template <typename T>
inline T dot(const T* a, const T* b, int n) {
  T s0 = 0, s1 = 0, s2 = 0, s3 = 0;
  int i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += a[i] * b[i];
    s1 += a[i + 1] * b[i + 1];
    s2 += a[i + 2] * b[i + 2];
    s3 += a[i + 3] * b[i + 3];
  }
  for (; i < n; ++i) s0 += a[i] * b[i];
  return (s0 + s1) + (s2 + s3);
}

template <typename T>
inline void axpy(T alpha, const T* x, T* y, int n) {
  for (int i = 0; i < n; ++i) y[i] += alpha * x[i];
}

// y = W x + b with W row-major, shape (out, in).
template <typename T>
inline void gemv(const T* w, const T* b, const T* x, T* y, int out, int in) {
  for (int o = 0; o < out; ++o)
    y[o] = b[o] + dot(w + static_cast<size_t>(o) * in, x, in);
}

// grad accumulation counterpart: dW += dy x^T, db += dy, dx += W^T dy
template <typename T>
inline void gemv_backward(const T* w, const T* x, const T* dy, T* dw, T* db,
                          T* dx, int out, int in) {
  for (int o = 0; o < out; ++o) {
    const T g = dy[o];
    db[o] += g;
    T* dwrow = dw + static_cast<size_t>(o) * in;
    const T* wrow = w + static_cast<size_t>(o) * in;
    for (int i = 0; i < in; ++i) {
      dwrow[i] += g * x[i];
      dx[i] += g * wrow[i];
    }
  }
}

// Summation with O(log n) error growth; used where many small terms meet a
// large total (distortion sums over millions of points).
template <typename T>
inline T pairwise_sum(const T* x, size_t n) {
  if (n <= 16) {
    T s = 0;
    for (size_t i = 0; i < n; ++i) s += x[i];
    return s;
  }
  const size_t h = n / 2;
  return pairwise_sum(x, h) + pairwise_sum(x + h, n - h);
}

template <typename T>
inline T pairwise_sum(const std::vector<T>& x) {
  return pairwise_sum(x.data(), x.size());
}

// exp for float with a pinned instruction sequence. libm's expf may differ
// between libc builds; probabilities that drive the range coder go through
// this instead. Max observed relative error vs double exp is below 3e-7.
inline float det_expf(float x) {
  if (x > 88.0f) return std::numeric_limits<float>::infinity();
  if (x < -87.0f) return 0.0f;
  const float log2e = 1.442695040888963f;
  const float ln2_hi = 0.693359375f;
  const float ln2_lo = -2.12194440e-4f;
  const float kf = std::floor(x * log2e + 0.5f);
  const int k = static_cast<int>(kf);
  const float r = (x - kf * ln2_hi) - kf * ln2_lo;
  // degree-7 Taylor polynomial of exp on [-ln2/2, ln2/2], Horner order
  float p = 1.0f / 5040.0f;
  p = p * r + 1.0f / 720.0f;
  p = p * r + 1.0f / 120.0f;
  p = p * r + 1.0f / 24.0f;
  p = p * r + 1.0f / 6.0f;
  p = p * r + 0.5f;
  p = p * r + 1.0f;
  p = p * r + 1.0f;
  const float scale = std::bit_cast<float>(static_cast<uint32_t>(k + 127) << 23);
  return p * scale;
}

inline float det_tanhf(float x) {
  // tanh(x) = 1 - 2 / (exp(2x) + 1), saturation handled by det_expf clamps
  const float e = det_expf(2.0f * x);
  return 1.0f - 2.0f / (e + 1.0f);
}

// Deterministic RNG wrapper. mt19937_64 output is pinned by the standard;
// the distribution mappings here are written out because the std ones are
// implementation-defined.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  uint64_t next_u64() { return gen_(); }

  // uniform in [0, 1)
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // unbiased integer in [0, n)
  uint64_t below(uint64_t n) {
    const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t v = gen_();
    while (v >= limit) v = gen_();
    return v % n;
  }

  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double mag = std::sqrt(-2.0 * std::log(u1));
    spare_ = mag * std::sin(2.0 * M_PI * u2);
    have_spare_ = true;
    return mag * std::cos(2.0 * M_PI * u2);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      const size_t j = below(i);
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 gen_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace opcc
