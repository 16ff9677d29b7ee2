#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "opcc/geometry.hpp"
#include "opcc/math.hpp"
#include "opcc/metrics.hpp"
#include "opcc/pca.hpp"
#include "opcc/synth.hpp"

namespace {

using namespace opcc;

// exhaustive nearest-neighbor scan, summed the same way the library sums
double brute_directional_mse(const PointCloud& from, const PointCloud& to) {
  std::vector<double> errs(from.size());
  for (size_t i = 0; i < from.size(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& q : to) best = std::min(best, dist2(from[i], q));
    errs[i] = best;
  }
  return pairwise_sum(errs) / static_cast<double>(from.size());
}

PointCloud grid_plane(int nx, int ny, double spacing) {
  PointCloud pc;
  for (int x = 0; x < nx; ++x)
    for (int y = 0; y < ny; ++y)
      pc.push_back({x * spacing, y * spacing, 0.0});
  return pc;
}

PointCloud shifted(const PointCloud& pc, const Vec3& d) {
  PointCloud out;
  out.reserve(pc.size());
  for (const auto& p : pc)
    out.push_back({p[0] + d[0], p[1] + d[1], p[2] + d[2]});
  return out;
}

TEST(Chamfer, MatchesExhaustiveSearch) {
  for (uint64_t seed : {1u, 2u, 3u}) {
    const PointCloud ref = synth_uniform(200, seed, 50.0);
    const PointCloud rec = synth_uniform(230, seed + 100, 50.0);
    const double expect =
        brute_directional_mse(ref, rec) + brute_directional_mse(rec, ref);
    EXPECT_EQ(chamfer(ref, rec), expect);
  }
}

TEST(Chamfer, SinglePointPair) {
  const PointCloud a = {{0, 0, 0}};
  const PointCloud b = {{1, 0, 0}};
  EXPECT_DOUBLE_EQ(chamfer(a, b), 2.0);
  EXPECT_DOUBLE_EQ(chamfer(a, a), 0.0);
}

TEST(Chamfer, RejectsEmptyClouds) {
  const PointCloud a = {{0, 0, 0}};
  EXPECT_THROW(chamfer(a, {}), Error);
  EXPECT_THROW(chamfer({}, a), Error);
  EXPECT_THROW(d1_psnr(a, {}), Error);
}

TEST(D1Psnr, MatchesExhaustiveSearch) {
  const PointCloud ref = synth_sphere(250, 4);
  const PointCloud rec = synth_sphere(250, 5);
  const double fwd = brute_directional_mse(ref, rec);
  const double bwd = brute_directional_mse(rec, ref);
  const double peak = peak_from_reference(ref);
  EXPECT_EQ(d1_psnr(ref, rec), psnr_from_mse(std::max(fwd, bwd), peak));
  EXPECT_EQ(d1_psnr(ref, rec, 0.0, false),
            psnr_from_mse(0.5 * (fwd + bwd), peak));
  const double r = 59.70;
  EXPECT_EQ(d1_psnr(ref, rec, r), psnr_from_mse(std::max(fwd, bwd), r));
}

TEST(D1Psnr, TranslationHasClosedForm) {
  // unit grid translated by less than half the lattice spacing: every point
  // matches its own translate, the mse is exactly d^2
  PointCloud ref;
  for (int x = 0; x < 6; ++x)
    for (int y = 0; y < 6; ++y)
      for (int z = 0; z < 6; ++z)
        ref.push_back({static_cast<double>(x), static_cast<double>(y),
                       static_cast<double>(z)});
  const double d = 0.3;
  const PointCloud rec = shifted(ref, {d, 0, 0});
  const double peak = 5.0;
  const double got = d1_psnr(ref, rec, peak);
  const double want = 10.0 * std::log10(3.0 * peak * peak / (d * d));
  EXPECT_NEAR(got, want, 1e-9);
  EXPECT_EQ(d1_psnr(ref, ref, peak), std::numeric_limits<double>::infinity());
}

TEST(D2Psnr, PlanarCloudProjectsErrorsOntoTheNormal) {
  const PointCloud ref = grid_plane(20, 20, 1.0);
  // in-plane motion is invisible to a plane-to-point metric
  {
    const D2Result r = d2_psnr(ref, shifted(ref, {0.3, 0.2, 0.0}));
    EXPECT_EQ(r.psnr, std::numeric_limits<double>::infinity());
    EXPECT_EQ(r.degenerate, 0u);
  }
  // off-plane motion lands fully on the normal
  {
    const double d = 0.4;
    const D2Result r = d2_psnr(ref, shifted(ref, {0.0, 0.0, d}));
    const double peak = peak_from_reference(ref);
    EXPECT_NEAR(r.psnr, psnr_from_mse(d * d, peak), 1e-9);
    EXPECT_EQ(r.degenerate, 0u);
  }
  // point-to-point sees the same off-plane shift too
  EXPECT_NEAR(d1_psnr(ref, shifted(ref, {0.0, 0.0, 0.4})),
              psnr_from_mse(0.16, peak_from_reference(ref)), 1e-9);
}

TEST(D2Psnr, CollinearNeighborhoodsFallBackToRawDistance) {
  PointCloud ref;
  for (int i = 0; i < 50; ++i) ref.push_back({static_cast<double>(i), 0, 0});
  const double d = 0.3;
  const PointCloud rec = shifted(ref, {0, d, 0});
  const D2Result r = d2_psnr(ref, rec);
  EXPECT_EQ(r.degenerate, 100u);  // every point in both directions
  EXPECT_NEAR(r.psnr, psnr_from_mse(d * d, peak_from_reference(ref)), 1e-9);
}

TEST(D2Psnr, RequiresEnoughReferencePoints) {
  PointCloud small;
  for (int i = 0; i < 16; ++i)
    small.push_back({static_cast<double>(i), std::sin(i * 0.7), 0.0});
  EXPECT_THROW(d2_psnr(small, small, 0.0, 16), Error);
  small.push_back({20.0, 1.0, 0.0});
  EXPECT_NO_THROW(d2_psnr(small, small, 0.0, 16));
}

TEST(D2Psnr, IdenticalCloudsScoreInfinite) {
  const PointCloud ref = synth_sphere(200, 6);
  const D2Result r = d2_psnr(ref, ref);
  EXPECT_EQ(r.psnr, std::numeric_limits<double>::infinity());
}

TEST(KdTree, AgreesWithLinearScan) {
  const PointCloud pts = synth_uniform(300, 7, 40.0);
  const KdTree tree(pts);
  Rng rng(8);
  std::vector<KdTree::Hit> nn;
  for (int trial = 0; trial < 50; ++trial) {
    const Vec3 q = {rng.uniform(-5, 45), rng.uniform(-5, 45),
                    rng.uniform(-5, 45)};
    double best = std::numeric_limits<double>::infinity();
    for (const auto& p : pts) best = std::min(best, dist2(q, p));
    EXPECT_EQ(tree.nearest(q).d2, best);

    std::vector<double> all;
    for (const auto& p : pts) all.push_back(dist2(q, p));
    std::sort(all.begin(), all.end());
    tree.knearest(q, 16, nn);
    ASSERT_EQ(nn.size(), 16u);
    for (int i = 0; i < 16; ++i) EXPECT_EQ(nn[i].d2, all[i]);
  }
  // a tree point is its own nearest neighbor
  tree.knearest(pts[17], 4, nn);
  EXPECT_EQ(nn[0].d2, 0.0);
}

TEST(Quantization, DistortionStaysInsideTheCellBound) {
  const PointCloud ref = synth_rings(1500, 9);
  const QuantizedCloud q = quantize(ref, 6);
  const PointCloud rec = dequantize(q);
  const double cell = 3.0 * (q.qs / 2.0) * (q.qs / 2.0);
  // every source point sits within its own voxel center's error ball
  const double fwd = brute_directional_mse(ref, rec);
  EXPECT_LE(fwd, cell + 1e-12);
  const double floor_psnr = psnr_from_mse(cell, peak_from_reference(ref));
  EXPECT_GE(d1_psnr(ref, rec), floor_psnr - 1e-9);
}

TEST(Pca, MatchesDirectEigendecomposition) {
  // anisotropic gaussian blob in 3-D, well separated spectrum
  Rng rng(10);
  std::vector<std::vector<double>> rows;
  for (int i = 0; i < 400; ++i)
    rows.push_back({5.0 * rng.normal() + 2.0, 2.0 * rng.normal() - 1.0,
                    0.5 * rng.normal() + 0.3});
  const PcaResult res = pca_project(rows, 3);

  // oracle: covariance assembled by hand, Jacobi rotation eigensolver
  double mean[3] = {0, 0, 0};
  for (const auto& r : rows)
    for (int j = 0; j < 3; ++j) mean[j] += r[j];
  for (double& m : mean) m /= static_cast<double>(rows.size());
  double cov[3][3] = {{0, 0, 0}, {0, 0, 0}, {0, 0, 0}};
  for (const auto& r : rows)
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b)
        cov[a][b] += (r[a] - mean[a]) * (r[b] - mean[b]);
  for (auto& row : cov)
    for (auto& v : row) v /= static_cast<double>(rows.size() - 1);
  double eval[3], evec[3][3];
  detail::sym3_eigen(cov, eval, evec);
  int order[3] = {0, 1, 2};
  std::sort(order, order + 3, [&](int a, int b) { return eval[a] > eval[b]; });

  for (int c = 0; c < 3; ++c) {
    EXPECT_NEAR(res.eigenvalues[c], eval[order[c]],
                1e-6 * std::max(1.0, eval[order[c]]));
    double dot = 0.0;
    for (int j = 0; j < 3; ++j) dot += res.components[c][j] * evec[j][order[c]];
    EXPECT_NEAR(std::abs(dot), 1.0, 1e-6);
  }
  // projections are the centered rows against those axes
  for (int i = 0; i < 10; ++i) {
    for (int c = 0; c < 3; ++c) {
      double s = 0.0;
      for (int j = 0; j < 3; ++j)
        s += (rows[i][j] - mean[j]) * res.components[c][j];
      EXPECT_NEAR(res.coords[i][c], s, 1e-9);
    }
  }
}

TEST(Pca, ZeroVarianceMeansZeroProjections) {
  std::vector<std::vector<double>> rows(40, {3.0, -1.0, 2.0, 7.0});
  const PcaResult res = pca_project(rows, 2);
  for (const auto& r : res.coords)
    for (double v : r) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(res.eigenvalues[0], 0.0);
  EXPECT_EQ(res.eigenvalues[1], 0.0);
}

TEST(Pca, ValidatesInput) {
  EXPECT_THROW(pca_project({}, 1), Error);
  EXPECT_THROW(pca_project({{1.0, 2.0}, {1.0}}, 1), Error);
  EXPECT_THROW(pca_project({{1.0, 2.0}}, 0), Error);
  EXPECT_THROW(pca_project({{1.0, 2.0}}, 3), Error);
}

}  // namespace
