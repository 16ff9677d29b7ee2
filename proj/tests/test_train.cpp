#include <gtest/gtest.h>

#include <cmath>
#include <set>
#include <vector>

#include "opcc/context.hpp"
#include "opcc/model.hpp"
#include "opcc/octree.hpp"
#include "opcc/synth.hpp"
#include "opcc/train.hpp"

namespace {

using namespace opcc;

ModelConfig tiny_cfg() {
  ModelConfig c;
  c.d_occ = 8;
  c.d_lvl = 3;
  c.d_oct = 2;
  c.n_ancestors = 3;
  c.d_head = 4;
  c.d_ff = 16;
  c.d_mlp = 16;
  c.n_layers = 2;
  c.window = 12;
  c.step = 4;
  return c;
}

NodeSequence sphere_scene() {
  return build_octree(quantize(synth_sphere(300, 9), 4));
}

// every voxel of the depth-3 grid occupied: all 73 nodes read 255
NodeSequence dense_scene() {
  QuantizedCloud q;
  q.levels = 3;
  q.qs = 1.0;
  q.source_count = 512;
  for (int x = 0; x < 8; ++x)
    for (int y = 0; y < 8; ++y)
      for (int z = 0; z < 8; ++z) q.pts.push_back({x, y, z});
  return build_octree(q);
}

TEST(GradCheck, AnalyticMatchesFiniteDifferences) {
  const ModelConfig c = tiny_cfg();
  ModelParams p = init_params(c, 21);
  const auto windows =
      build_windows(sphere_scene(), c.window, c.n_ancestors, c.step);
  ASSERT_GE(windows.size(), 2u);
  const GradCheckResult res = grad_check(p, windows[1], 64, 31);
  EXPECT_EQ(res.checked, 64);
  EXPECT_LT(res.max_rel_error, 1e-4);
}

TEST(GradCheck, LinearOutputHeadIsNearlyExact) {
  // zero all weight matrices; the loss becomes softmax-linear in the output
  // bias, where the only finite-difference error left is the rounding of a
  // loss of magnitude ~1e2 divided by 2h
  const ModelConfig c = tiny_cfg();
  ModelParams p = init_params(c, 22);
  for (auto& t : p.t)
    if (!t.name.ends_with(".g") && !t.name.ends_with(".b") &&
        !t.name.ends_with("bq") && !t.name.ends_with("bk") &&
        !t.name.ends_with("bv"))
      std::fill(t.v.begin(), t.v.end(), 0.0);
  const auto windows =
      build_windows(sphere_scene(), c.window, c.n_ancestors, c.step);
  const ContextWindow& w = windows[0];

  TrainWorkspace ws;
  GradAcc g = make_grads(p);
  window_forward(p, w, ws);
  window_backward(p, w, ws, 1.0, g);

  const ParamIndex ix(c);
  double worst = 0.0;
  const double h = 1e-5;
  for (int i = 0; i < 255; i += 17) {
    double& ref = p.t[static_cast<size_t>(ix.out_fc2_b())].v[i];
    const double saved = ref;
    ref = saved + h;
    const double lp = window_forward(p, w, ws);
    ref = saved - h;
    const double lm = window_forward(p, w, ws);
    ref = saved;
    const double fd = (lp - lm) / (2.0 * h);
    const double an = g[static_cast<size_t>(ix.out_fc2_b())][i];
    const double denom = std::max(std::abs(fd), std::abs(an));
    if (denom < 1e-8) continue;
    worst = std::max(worst, std::abs(fd - an) / denom);
  }
  EXPECT_LT(worst, 1e-6);
}

TEST(GradCheck, UnusedEmbeddingRowGetsExactlyZero) {
  const ModelConfig c = tiny_cfg();
  ModelParams p = init_params(c, 23);
  const auto windows =
      build_windows(sphere_scene(), c.window, c.n_ancestors, c.step);
  const ContextWindow& w = windows[1];
  std::set<int> used;
  for (const auto& r : w.rows)
    for (int s = 0; s < c.n_ancestors; ++s) used.insert(r.occ[s]);
  for (const auto& r : w.targets)
    for (int s = 0; s < c.n_ancestors; ++s) used.insert(r.occ[s]);
  int unused = -1;
  for (int v = 255; v >= 0; --v)
    if (!used.count(v)) {
      unused = v;
      break;
    }
  ASSERT_GE(unused, 0);

  TrainWorkspace ws;
  GradAcc g = make_grads(p);
  const double base = window_forward(p, w, ws);
  window_backward(p, w, ws, 1.0, g);
  for (int i = 0; i < c.d_occ; ++i)
    EXPECT_EQ(g[ParamIndex::kEmbOcc][static_cast<size_t>(unused) * c.d_occ + i],
              0.0);
  // the loss is bit-identical under any perturbation of that row
  double& ref =
      p.t[ParamIndex::kEmbOcc].v[static_cast<size_t>(unused) * c.d_occ];
  ref += 0.37;
  EXPECT_EQ(window_forward(p, w, ws), base);
}

TEST(Train, UntrainedCostSitsNearTheUniformRate) {
  const ModelConfig c = tiny_cfg();
  ModelParams p = init_params(c, 24);
  const auto windows =
      build_windows(sphere_scene(), c.window, c.n_ancestors, c.step);
  TrainWorkspace ws;
  const double bits = eval_bits_per_node(p, windows, ws);
  EXPECT_NEAR(bits, std::log2(255.0), 0.5);
}

TEST(Train, LearnsARepeatedPattern) {
  const ModelConfig c = tiny_cfg();
  ModelParams p = init_params(c, 25);
  std::vector<NodeSequence> scenes(8, dense_scene());
  TrainOptions opt;
  opt.epochs = 40;
  opt.batch = 8;
  opt.lr = 0.03;
  opt.seed = 7;
  const auto stats = train(p, scenes, opt);
  ASSERT_EQ(stats.size(), 40u);
  EXPECT_GT(stats.front().val_bits_per_node, stats.back().val_bits_per_node);
  EXPECT_LT(stats.back().val_bits_per_node, 0.1);
}

TEST(Train, RejectsScenesDeeperThanTheLevelTable) {
  ModelConfig c = tiny_cfg();
  c.max_level = 3;
  ModelParams p = init_params(c, 26);
  std::vector<NodeSequence> scenes = {sphere_scene()};  // depth 4
  TrainOptions opt;
  opt.epochs = 1;
  EXPECT_THROW(train(p, scenes, opt), Error);
}

TEST(Train, AbortsWhenTheLossStopsBeingFinite) {
  const ModelConfig c = tiny_cfg();
  ModelParams p = init_params(c, 27);
  p.t[ParamIndex::kEmbOcc].v[0] = std::nan("");
  std::vector<NodeSequence> scenes = {dense_scene(), dense_scene()};
  TrainOptions opt;
  opt.epochs = 1;
  opt.val_fraction = 0.0;
  EXPECT_THROW(train(p, scenes, opt), Error);
}

TEST(Train, ValidationHoldsOutWholeScenes) {
  const ModelConfig c = tiny_cfg();
  ModelParams p = init_params(c, 28);
  std::vector<NodeSequence> scenes(5, dense_scene());
  TrainOptions opt;
  opt.epochs = 1;
  opt.batch = 4;
  opt.lr = 1e-3;
  opt.val_fraction = 0.4;  // 2 of 5 scenes
  const auto stats = train(p, scenes, opt);
  ASSERT_EQ(stats.size(), 1u);
  EXPECT_GT(stats[0].val_bits_per_node, 0.0);
  EXPECT_GT(stats[0].train_bits_per_node, 0.0);
}

}  // namespace
