#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "opcc/common.hpp"

namespace opcc {

using PointCloud = std::vector<Vec3>;

struct QuantizedCloud {
  std::vector<Vec3i> pts;  // sorted lexicographically, duplicates merged
  double qs = 1.0;         // quantization step
  Vec3 offset = {0, 0, 0};
  int levels = 0;            // tree depth; coordinates lie in [0, 2^levels)
  uint64_t source_count = 0; // points before duplicate merging
};

// round half away from zero, the rounding the reconstruction bound assumes
inline int64_t round_half_away(double v) { return std::llround(v); }

inline Vec3 min_corner(const PointCloud& pc) {
  Vec3 m = pc.front();
  for (const auto& p : pc)
    for (int d = 0; d < 3; ++d) m[d] = std::min(m[d], p[d]);
  return m;
}

inline Vec3 max_corner(const PointCloud& pc) {
  Vec3 m = pc.front();
  for (const auto& p : pc)
    for (int d = 0; d < 3; ++d) m[d] = std::max(m[d], p[d]);
  return m;
}

// Scalar step so that the longest bounding-box edge maps onto 2^levels - 1
// cells. Returned value is the smallest step that keeps every coordinate in
// range; callers may pass any larger step to quantize().
inline double default_step(const PointCloud& pc, int levels) {
  const Vec3 lo = min_corner(pc), hi = max_corner(pc);
  double extent = 0.0;
  for (int d = 0; d < 3; ++d) extent = std::max(extent, hi[d] - lo[d]);
  return extent / (static_cast<double>((1ll << levels) - 1));
}

inline QuantizedCloud quantize(const PointCloud& pc, int levels, double qs,
                               const Vec3& offset) {
  if (pc.empty()) throw Error("quantize: empty point cloud");
  if (levels < 1 || levels > 16) throw Error("quantize: levels out of range");
  if (!(qs > 0.0)) throw Error("quantize: step must be positive");
  QuantizedCloud q;
  q.qs = qs;
  q.offset = offset;
  q.levels = levels;
  q.source_count = pc.size();
  const int64_t hi = (1ll << levels) - 1;
  q.pts.reserve(pc.size());
  for (const auto& p : pc) {
    Vec3i v;
    for (int d = 0; d < 3; ++d) {
      v[d] = round_half_away((p[d] - offset[d]) / qs);
      if (v[d] < 0 || v[d] > hi)
        throw Error("quantize: point outside the representable grid");
    }
    q.pts.push_back(v);
  }
  std::sort(q.pts.begin(), q.pts.end());
  q.pts.erase(std::unique(q.pts.begin(), q.pts.end()), q.pts.end());
  return q;
}

inline QuantizedCloud quantize(const PointCloud& pc, int levels, double qs) {
  if (pc.empty()) throw Error("quantize: empty point cloud");
  return quantize(pc, levels, qs, min_corner(pc));
}

inline QuantizedCloud quantize(const PointCloud& pc, int levels) {
  if (pc.empty()) throw Error("quantize: empty point cloud");
  const double qs = default_step(pc, levels);
  if (!(qs > 0.0))
    throw Error("quantize: degenerate extent, all points coincide");
  return quantize(pc, levels, qs, min_corner(pc));
}

inline PointCloud dequantize(const QuantizedCloud& q) {
  PointCloud pc;
  pc.reserve(q.pts.size());
  for (const auto& v : q.pts) {
    Vec3 p;
    for (int d = 0; d < 3; ++d)
      p[d] = static_cast<double>(v[d]) * q.qs + q.offset[d];
    pc.push_back(p);
  }
  return pc;
}

}  // namespace opcc
