#include <gtest/gtest.h>

#include <algorithm>
#include <bit>
#include <numeric>

#include "opcc/math.hpp"
#include "opcc/octree.hpp"
#include "opcc/synth.hpp"

namespace {

using namespace opcc;

QuantizedCloud grid_cloud(std::vector<Vec3i> pts, int levels) {
  std::sort(pts.begin(), pts.end());
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
  QuantizedCloud q;
  q.pts = std::move(pts);
  q.levels = levels;
  q.qs = 1.0;
  q.source_count = q.pts.size();
  return q;
}

TEST(ChildIndex, PacksXYZ) {
  EXPECT_EQ(child_index(0, 0, 0), 0);
  EXPECT_EQ(child_index(0, 0, 1), 1);
  EXPECT_EQ(child_index(0, 1, 0), 2);
  EXPECT_EQ(child_index(1, 0, 0), 4);
  EXPECT_EQ(child_index(1, 1, 1), 7);
}

TEST(OccupancyCode, RoundtripAndErrors) {
  std::vector<int> ch;
  code_to_children(170, ch);
  EXPECT_EQ(ch, (std::vector<int>{1, 3, 5, 7}));
  EXPECT_EQ(children_to_code({1, 3, 5, 7}), 170);
  for (int c = 1; c <= 255; ++c) {
    code_to_children(c, ch);
    EXPECT_EQ(children_to_code(ch), c);
  }
  EXPECT_THROW(code_to_children(0, ch), Error);
  EXPECT_THROW(code_to_children(256, ch), Error);
  EXPECT_THROW(code_to_children(-1, ch), Error);
  EXPECT_THROW(children_to_code({}), Error);
  EXPECT_THROW(children_to_code({8}), Error);
}

TEST(BuildOctree, SinglePointDepthOne) {
  const NodeSequence ns = build_octree(grid_cloud({{0, 0, 0}}, 1));
  ASSERT_EQ(ns.size(), 1u);
  EXPECT_EQ(ns[0].occupancy, 1);
  EXPECT_EQ(ns[0].level, 1);
  EXPECT_EQ(ns[0].octant, 0);
  EXPECT_EQ(ns[0].parent, -1);
}

TEST(BuildOctree, FarCornerDepthOne) {
  const NodeSequence ns = build_octree(grid_cloud({{1, 1, 1}}, 1));
  ASSERT_EQ(ns.size(), 1u);
  EXPECT_EQ(ns[0].occupancy, 128);
}

TEST(BuildOctree, FullRootDepthOne) {
  std::vector<Vec3i> pts;
  for (int x = 0; x < 2; ++x)
    for (int y = 0; y < 2; ++y)
      for (int z = 0; z < 2; ++z) pts.push_back({x, y, z});
  const NodeSequence ns = build_octree(grid_cloud(pts, 1));
  ASSERT_EQ(ns.size(), 1u);
  EXPECT_EQ(ns[0].occupancy, 255);
}

TEST(BuildOctree, BreadthFirstInvariants) {
  Rng rng(17);
  std::vector<Vec3i> pts;
  for (int i = 0; i < 400; ++i)
    pts.push_back({static_cast<int64_t>(rng.below(32)),
                   static_cast<int64_t>(rng.below(32)),
                   static_cast<int64_t>(rng.below(32))});
  const int L = 5;
  const NodeSequence ns = build_octree(grid_cloud(pts, L));

  // levels non-decreasing, root first
  EXPECT_EQ(ns[0].level, 1);
  for (size_t i = 1; i < ns.size(); ++i) {
    EXPECT_GE(ns[i].level, ns[i - 1].level);
    EXPECT_GT(ns[i].parent, -1);
    EXPECT_LT(ns[i].parent, static_cast<int64_t>(i));
    EXPECT_EQ(ns[ns[i].parent].level + 1, ns[i].level);
    // the node's octant bit is set in its parent's occupancy
    EXPECT_NE(ns[ns[i].parent].occupancy & (1u << ns[i].octant), 0u);
  }
  // population accounting: children of level l == nodes at level l+1
  for (int l = 1; l < L; ++l) {
    int64_t children = 0, nodes_next = 0;
    for (const auto& n : ns) {
      if (n.level == l) children += std::popcount(n.occupancy);
      if (n.level == l + 1) ++nodes_next;
    }
    EXPECT_EQ(children, nodes_next);
  }
  for (const auto& n : ns) {
    EXPECT_GE(n.occupancy, 1);
  }
}

TEST(Reconstruct, InverseOfBuild) {
  Rng rng(23);
  for (int trial = 0; trial < 100; ++trial) {
    const int L = 1 + static_cast<int>(rng.below(6));
    const int64_t side = int64_t{1} << L;
    std::vector<Vec3i> pts;
    const int n = 1 + static_cast<int>(rng.below(300));
    for (int i = 0; i < n; ++i)
      pts.push_back({static_cast<int64_t>(rng.below(static_cast<uint64_t>(side))),
                     static_cast<int64_t>(rng.below(static_cast<uint64_t>(side))),
                     static_cast<int64_t>(rng.below(static_cast<uint64_t>(side)))});
    const QuantizedCloud q = grid_cloud(pts, L);
    const NodeSequence ns = build_octree(q);
    std::vector<Vec3i> back = reconstruct_points(occupancy_codes(ns), L);
    std::sort(back.begin(), back.end());
    EXPECT_EQ(back, q.pts);
  }
}

TEST(Reconstruct, SingleFullNodeGivesCubeCorners) {
  const auto pts = reconstruct_points({255}, 1);
  ASSERT_EQ(pts.size(), 8u);
  auto sorted = pts;
  std::sort(sorted.begin(), sorted.end());
  int i = 0;
  for (int x = 0; x < 2; ++x)
    for (int y = 0; y < 2; ++y)
      for (int z = 0; z < 2; ++z) EXPECT_EQ(sorted[i++], (Vec3i{x, y, z}));
}

TEST(Reconstruct, StructuralErrors) {
  EXPECT_THROW(reconstruct_points({}, 3), DecodeError);
  EXPECT_THROW(reconstruct_points({255}, 2), DecodeError);     // truncated
  EXPECT_THROW(reconstruct_points({1, 1, 1}, 2), DecodeError); // trailing
  EXPECT_THROW(reconstruct_points({0}, 1), DecodeError);       // zero code
}

TEST(BuildOctree, InputValidation) {
  QuantizedCloud q;
  q.levels = 2;
  EXPECT_THROW(build_octree(q), Error);  // empty
  q.pts = {{4, 0, 0}};                   // outside the 2-level grid
  EXPECT_THROW(build_octree(q), Error);
  q.pts = {{-1, 0, 0}};
  EXPECT_THROW(build_octree(q), Error);
}

TEST(CellCenters, GridMidpoints) {
  // two points in opposite corners of a depth-2 grid
  const QuantizedCloud q = grid_cloud({{0, 0, 0}, {3, 3, 3}}, 2);
  const NodeSequence ns = build_octree(q);
  const auto centers = node_cell_centers(ns, q.levels);
  ASSERT_EQ(centers.size(), ns.size());
  // root spans the whole 4-wide grid
  EXPECT_DOUBLE_EQ(centers[0][0], 1.5);
  // level-2 nodes span 2 voxels each
  for (size_t i = 0; i < ns.size(); ++i) {
    if (ns[i].level != 2) continue;
    const double c = centers[i][0];
    EXPECT_TRUE(c == 0.5 || c == 2.5);
  }
}

TEST(CellCenters, ContainTheirPoints) {
  const QuantizedCloud q = quantize(synth_sphere(500, 4), 5);
  const NodeSequence ns = build_octree(q);
  const auto centers = node_cell_centers(ns, q.levels);
  // every leaf-level center must sit within one voxel of a real point
  for (size_t i = 0; i < ns.size(); ++i) {
    if (ns[i].level != q.levels) continue;
    bool near = false;
    for (const auto& p : q.pts) {
      double worst = 0;
      for (int d = 0; d < 3; ++d)
        worst = std::max(worst, std::abs(static_cast<double>(p[d]) - centers[i][d]));
      if (worst <= 1.0) {
        near = true;
        break;
      }
    }
    EXPECT_TRUE(near);
  }
}

}  // namespace
