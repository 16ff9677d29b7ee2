#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "opcc/common.hpp"
#include "opcc/geometry.hpp"

namespace opcc {

// One octree node in breadth-first order. Levels are 1-based: the root sits
// at level 1 and owns the full cube, nodes at level == depth are leaves whose
// occupancy bits are unit voxels.
struct OctreeNode {
  uint8_t occupancy = 0;  // 1..255, bit c set = child c occupied
  uint8_t level = 0;
  uint8_t octant = 0;  // child slot within the parent, 0 for the root
  int64_t parent = -1; // index into the BFS array, -1 for the root
};

using NodeSequence = std::vector<OctreeNode>;

// child index packs the coordinate bits as (x << 2) | (y << 1) | z
inline int child_index(int xbit, int ybit, int zbit) {
  return (xbit << 2) | (ybit << 1) | zbit;
}

inline void code_to_children(int code, std::vector<int>& out) {
  if (code < 1 || code > 255)
    throw Error("occupancy code out of range: " + std::to_string(code));
  out.clear();
  for (int c = 0; c < 8; ++c)
    if (code & (1 << c)) out.push_back(c);
}

inline uint8_t children_to_code(const std::vector<int>& children) {
  if (children.empty()) throw Error("children_to_code: empty child set");
  unsigned code = 0;
  for (int c : children) {
    if (c < 0 || c > 7)
      throw Error("child index out of range: " + std::to_string(c));
    code |= 1u << c;
  }
  return static_cast<uint8_t>(code);
}

namespace detail {

inline unsigned __int128 morton_key(const Vec3i& p, int levels) {
  unsigned __int128 key = 0;
  for (int b = levels - 1; b >= 0; --b) {
    const int c = child_index(static_cast<int>((p[0] >> b) & 1),
                              static_cast<int>((p[1] >> b) & 1),
                              static_cast<int>((p[2] >> b) & 1));
    key = (key << 3) | static_cast<unsigned>(c);
  }
  return key;
}

}  // namespace detail

// Breadth-first construction. Points are grouped level by level along their
// interleaved coordinate bits; sibling groups appear in ascending child
// order, which fixes the serialization uniquely.
inline NodeSequence build_octree(const QuantizedCloud& q) {
  if (q.pts.empty()) throw Error("build_octree: empty cloud");
  const int L = q.levels;
  const int64_t side = int64_t{1} << L;
  std::vector<std::pair<unsigned __int128, Vec3i>> sorted;
  sorted.reserve(q.pts.size());
  for (const auto& p : q.pts) {
    for (int a = 0; a < 3; ++a)
      if (p[a] < 0 || p[a] >= side)
        throw Error("build_octree: coordinate outside the depth-" +
                    std::to_string(L) + " grid");
    sorted.emplace_back(detail::morton_key(p, L), p);
  }
  std::sort(sorted.begin(), sorted.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });

  struct Span {
    size_t begin, end;  // range in sorted[]
    int64_t parent;
    uint8_t level, octant;
  };
  NodeSequence nodes;
  std::vector<Span> cur, next;
  cur.push_back({0, sorted.size(), -1, 1, 0});
  for (int level = 1; level <= L; ++level) {
    next.clear();
    for (const auto& s : cur) {
      const int bit = L - level;  // coordinate bit split at this level
      OctreeNode n;
      n.level = s.level;
      n.octant = s.octant;
      n.parent = s.parent;
      const int64_t self = static_cast<int64_t>(nodes.size());
      size_t i = s.begin;
      while (i < s.end) {
        const auto& p = sorted[i].second;
        const int c = child_index(static_cast<int>((p[0] >> bit) & 1),
                                  static_cast<int>((p[1] >> bit) & 1),
                                  static_cast<int>((p[2] >> bit) & 1));
        size_t j = i + 1;
        while (j < s.end) {
          const auto& r = sorted[j].second;
          if (child_index(static_cast<int>((r[0] >> bit) & 1),
                          static_cast<int>((r[1] >> bit) & 1),
                          static_cast<int>((r[2] >> bit) & 1)) != c)
            break;
          ++j;
        }
        n.occupancy |= static_cast<uint8_t>(1u << c);
        if (level < L)
          next.push_back({i, j, self, static_cast<uint8_t>(level + 1),
                          static_cast<uint8_t>(c)});
        i = j;
      }
      nodes.push_back(n);
    }
    cur.swap(next);
  }
  return nodes;
}

// Replays a breadth-first occupancy sequence back into voxel coordinates.
// Throws DecodeError when the sequence cannot be a valid serialization.
inline std::vector<Vec3i> reconstruct_points(const std::vector<uint8_t>& codes,
                                             int levels) {
  struct Cell {
    int64_t x, y, z;
    int level;
  };
  std::vector<Vec3i> out;
  std::vector<Cell> cur, next;
  cur.push_back({0, 0, 0, 1});
  size_t pos = 0;
  for (int level = 1; level <= levels && !cur.empty(); ++level) {
    next.clear();
    for (const auto& cell : cur) {
      if (pos >= codes.size())
        throw DecodeError("occupancy sequence truncated");
      const uint8_t code = codes[pos++];
      if (code == 0) throw DecodeError("zero occupancy code");
      for (int c = 0; c < 8; ++c) {
        if (!(code & (1u << c))) continue;
        const Cell ch{(cell.x << 1) | ((c >> 2) & 1),
                      (cell.y << 1) | ((c >> 1) & 1), (cell.z << 1) | (c & 1),
                      level + 1};
        if (level == levels)
          out.push_back({ch.x, ch.y, ch.z});
        else
          next.push_back(ch);
      }
    }
    cur.swap(next);
  }
  if (pos != codes.size())
    throw DecodeError("trailing data after occupancy sequence");
  return out;
}

inline std::vector<uint8_t> occupancy_codes(const NodeSequence& ns) {
  std::vector<uint8_t> codes;
  codes.reserve(ns.size());
  for (const auto& n : ns) codes.push_back(n.occupancy);
  return codes;
}

// Grid-space centers of each node's cube, computed by accumulating the
// octant bit path from the root. A node at level l spans 2^(levels-l+1)
// voxels per axis; the center is the mean of the contained voxel coords.
inline std::vector<Vec3> node_cell_centers(const NodeSequence& ns,
                                           int levels) {
  std::vector<Vec3i> origin(ns.size());
  std::vector<Vec3> centers(ns.size());
  for (size_t i = 0; i < ns.size(); ++i) {
    const auto& n = ns[i];
    Vec3i o{0, 0, 0};
    if (n.parent >= 0) {
      const auto& po = origin[static_cast<size_t>(n.parent)];
      o = {(po[0] << 1) | ((n.octant >> 2) & 1),
           (po[1] << 1) | ((n.octant >> 1) & 1),
           (po[2] << 1) | (n.octant & 1)};
    }
    origin[i] = o;
    const int shift = levels - n.level + 1;
    const double half = (static_cast<double>(int64_t{1} << shift) - 1.0) / 2.0;
    for (int a = 0; a < 3; ++a)
      centers[i][a] = static_cast<double>(o[a] << shift) + half;
  }
  return centers;
}

}  // namespace opcc
