#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "opcc/common.hpp"
#include "opcc/geometry.hpp"
#include "opcc/math.hpp"

namespace opcc {

namespace detail {

inline Vec3 random_unit(Rng& rng) {
  // uniform direction via normalized gaussian triple
  for (;;) {
    Vec3 v = {rng.normal(), rng.normal(), rng.normal()};
    const double n = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
    if (n > 1e-9) return {v[0] / n, v[1] / n, v[2] / n};
  }
}

inline void orthobasis(const Vec3& n, Vec3& u, Vec3& v) {
  const Vec3 a = std::abs(n[0]) < 0.9 ? Vec3{1, 0, 0} : Vec3{0, 1, 0};
  u = {n[1] * a[2] - n[2] * a[1], n[2] * a[0] - n[0] * a[2],
       n[0] * a[1] - n[1] * a[0]};
  const double un =
      std::sqrt(u[0] * u[0] + u[1] * u[1] + u[2] * u[2]);
  u = {u[0] / un, u[1] / un, u[2] / un};
  v = {n[1] * u[2] - n[2] * u[1], n[2] * u[0] - n[0] * u[2],
       n[0] * u[1] - n[1] * u[0]};
}

}  // namespace detail

// flat rectangular patch with a random orientation and mild off-plane noise
inline PointCloud synth_plane(size_t n, uint64_t seed, double extent = 100.0,
                              double noise = 0.2) {
  Rng rng(seed);
  const Vec3 nrm = detail::random_unit(rng);
  Vec3 u, v;
  detail::orthobasis(nrm, u, v);
  const Vec3 origin = {rng.uniform(-50, 50), rng.uniform(-50, 50),
                       rng.uniform(-50, 50)};
  PointCloud pc;
  pc.reserve(n);
  for (size_t i = 0; i < n; ++i) {
    const double a = rng.uniform(0, extent);
    const double b = rng.uniform(0, extent);
    const double c = noise > 0 ? rng.normal() * noise : 0.0;
    Vec3 p;
    for (int d = 0; d < 3; ++d)
      p[d] = origin[d] + a * u[d] + b * v[d] + c * nrm[d];
    pc.push_back(p);
  }
  return pc;
}

inline PointCloud synth_sphere(size_t n, uint64_t seed, double radius = 60.0,
                               double noise = 0.2) {
  Rng rng(seed);
  const Vec3 center = {rng.uniform(-20, 20), rng.uniform(-20, 20),
                       rng.uniform(-20, 20)};
  PointCloud pc;
  pc.reserve(n);
  for (size_t i = 0; i < n; ++i) {
    const Vec3 dir = detail::random_unit(rng);
    const double r = radius + (noise > 0 ? rng.normal() * noise : 0.0);
    pc.push_back({center[0] + r * dir[0], center[1] + r * dir[1],
                  center[2] + r * dir[2]});
  }
  return pc;
}

// spinning-scanner look: concentric ground circles from a set of beam
// elevation angles, plus range jitter
inline PointCloud synth_rings(size_t n, uint64_t seed, int beams = 16,
                              double sensor_height = 2.0,
                              double max_range = 80.0, double noise = 0.05) {
  Rng rng(seed);
  PointCloud pc;
  pc.reserve(n);
  for (size_t i = 0; i < n; ++i) {
    const int beam = static_cast<int>(rng.below(static_cast<uint64_t>(beams)));
    // elevations from steep (close ring) to shallow (far ring)
    const double frac = (beam + 1.0) / (beams + 1.0);
    const double ground_r = max_range * frac * frac;
    const double az = rng.uniform(0.0, 2.0 * M_PI);
    const double r = ground_r * (1.0 + (noise > 0 ? rng.normal() * noise : 0.0));
    pc.push_back({r * std::cos(az), r * std::sin(az),
                  -sensor_height + (noise > 0 ? rng.normal() * noise * 0.5 : 0.0)});
  }
  return pc;
}

inline PointCloud synth_uniform(size_t n, uint64_t seed, double extent = 100.0) {
  Rng rng(seed);
  PointCloud pc;
  pc.reserve(n);
  for (size_t i = 0; i < n; ++i)
    pc.push_back({rng.uniform(0, extent), rng.uniform(0, extent),
                  rng.uniform(0, extent)});
  return pc;
}

// mixed corpus for training runs: planes, spheres and scan rings
inline std::vector<PointCloud> synth_corpus(int per_kind, size_t pts_per_scene,
                                            uint64_t seed) {
  std::vector<PointCloud> out;
  out.reserve(static_cast<size_t>(per_kind) * 3);
  for (int i = 0; i < per_kind; ++i) {
    out.push_back(synth_plane(pts_per_scene, seed * 3 + 100 + i));
    out.push_back(synth_sphere(pts_per_scene, seed * 3 + 200 + i));
    out.push_back(synth_rings(pts_per_scene, seed * 3 + 300 + i));
  }
  return out;
}

}  // namespace opcc
