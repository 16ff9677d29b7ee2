#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "opcc/common.hpp"
#include "opcc/geometry.hpp"
#include "opcc/math.hpp"

namespace opcc {

inline double dist2(const Vec3& a, const Vec3& b) {
  const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
  return dx * dx + dy * dy + dz * dz;
}

// Exact nearest-neighbor tree; median split on the widest axis.
class KdTree {
 public:
  explicit KdTree(const PointCloud& pts) : pts_(pts) {
    idx_.resize(pts.size());
    for (size_t i = 0; i < idx_.size(); ++i) idx_[i] = i;
    nodes_.reserve(2 * pts.size() + 1);
    root_ = build(0, idx_.size());
  }

  struct Hit {
    size_t index = 0;
    double d2 = std::numeric_limits<double>::infinity();
  };

  Hit nearest(const Vec3& q) const {
    Hit best;
    search(root_, q, best);
    return best;
  }

  // k nearest points to q, ascending distance; includes q itself when q is a
  // tree point
  void knearest(const Vec3& q, size_t k, std::vector<Hit>& out) const {
    out.clear();
    ksearch(root_, q, k, out);
    std::sort(out.begin(), out.end(),
              [](const Hit& a, const Hit& b) { return a.d2 < b.d2; });
  }

 private:
  struct Node {
    int axis = -1;  // -1: leaf
    double split = 0;
    int left = -1, right = -1;
    size_t begin = 0, end = 0;
  };

  static constexpr size_t kLeafSize = 8;

  int build(size_t begin, size_t end) {
    Node n;
    n.begin = begin;
    n.end = end;
    if (end - begin <= kLeafSize) {
      nodes_.push_back(n);
      return static_cast<int>(nodes_.size() - 1);
    }
    Vec3 lo = pts_[idx_[begin]], hi = lo;
    for (size_t i = begin; i < end; ++i) {
      const Vec3& p = pts_[idx_[i]];
      for (int d = 0; d < 3; ++d) {
        lo[d] = std::min(lo[d], p[d]);
        hi[d] = std::max(hi[d], p[d]);
      }
    }
    int axis = 0;
    double spread = hi[0] - lo[0];
    for (int d = 1; d < 3; ++d) {
      if (hi[d] - lo[d] > spread) {
        spread = hi[d] - lo[d];
        axis = d;
      }
    }
    if (spread == 0.0) {  // all coincident
      nodes_.push_back(n);
      return static_cast<int>(nodes_.size() - 1);
    }
    const size_t mid = (begin + end) / 2;
    std::nth_element(idx_.begin() + begin, idx_.begin() + mid,
                     idx_.begin() + end, [&](size_t a, size_t b) {
                       return pts_[a][axis] < pts_[b][axis];
                     });
    n.axis = axis;
    n.split = pts_[idx_[mid]][axis];
    const int self = static_cast<int>(nodes_.size());
    nodes_.push_back(n);
    const int l = build(begin, mid);
    const int r = build(mid, end);
    nodes_[self].left = l;
    nodes_[self].right = r;
    return self;
  }

  void search(int ni, const Vec3& q, Hit& best) const {
    const Node& n = nodes_[ni];
    if (n.axis < 0) {
      for (size_t i = n.begin; i < n.end; ++i) {
        const double d = dist2(q, pts_[idx_[i]]);
        if (d < best.d2) {
          best.d2 = d;
          best.index = idx_[i];
        }
      }
      return;
    }
    const double delta = q[n.axis] - n.split;
    const int first = delta < 0 ? n.left : n.right;
    const int second = delta < 0 ? n.right : n.left;
    search(first, q, best);
    if (delta * delta < best.d2) search(second, q, best);
  }

  static void heap_push(std::vector<Hit>& heap, size_t k, const Hit& h) {
    if (heap.size() < k) {
      heap.push_back(h);
      std::push_heap(heap.begin(), heap.end(),
                     [](const Hit& a, const Hit& b) { return a.d2 < b.d2; });
    } else if (h.d2 < heap.front().d2) {
      std::pop_heap(heap.begin(), heap.end(),
                    [](const Hit& a, const Hit& b) { return a.d2 < b.d2; });
      heap.back() = h;
      std::push_heap(heap.begin(), heap.end(),
                     [](const Hit& a, const Hit& b) { return a.d2 < b.d2; });
    }
  }

  void ksearch(int ni, const Vec3& q, size_t k, std::vector<Hit>& heap) const {
    const Node& n = nodes_[ni];
    if (n.axis < 0) {
      for (size_t i = n.begin; i < n.end; ++i)
        heap_push(heap, k, Hit{idx_[i], dist2(q, pts_[idx_[i]])});
      return;
    }
    const double delta = q[n.axis] - n.split;
    const int first = delta < 0 ? n.left : n.right;
    const int second = delta < 0 ? n.right : n.left;
    ksearch(first, q, k, heap);
    if (heap.size() < k || delta * delta < heap.front().d2)
      ksearch(second, q, k, heap);
  }

  const PointCloud& pts_;
  std::vector<size_t> idx_;
  std::vector<Node> nodes_;
  int root_ = -1;
};

namespace detail {

// eigen decomposition of a symmetric 3x3 by cyclic Jacobi rotations
inline void sym3_eigen(const double a_in[3][3], double eval[3],
                       double evec[3][3]) {
  double a[3][3];
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      a[i][j] = a_in[i][j];
      evec[i][j] = (i == j) ? 1.0 : 0.0;
    }
  for (int sweep = 0; sweep < 32; ++sweep) {
    double off = std::abs(a[0][1]) + std::abs(a[0][2]) + std::abs(a[1][2]);
    if (off == 0.0) break;
    for (int p = 0; p < 2; ++p) {
      for (int q = p + 1; q < 3; ++q) {
        if (a[p][q] == 0.0) continue;
        const double theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
        const double t = (theta >= 0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (int i = 0; i < 3; ++i) {
          const double aip = a[i][p], aiq = a[i][q];
          a[i][p] = c * aip - s * aiq;
          a[i][q] = s * aip + c * aiq;
        }
        for (int j = 0; j < 3; ++j) {
          const double apj = a[p][j], aqj = a[q][j];
          a[p][j] = c * apj - s * aqj;
          a[q][j] = s * apj + c * aqj;
        }
        for (int i = 0; i < 3; ++i) {
          const double vip = evec[i][p], viq = evec[i][q];
          evec[i][p] = c * vip - s * viq;
          evec[i][q] = s * vip + c * viq;
        }
      }
    }
  }
  for (int i = 0; i < 3; ++i) eval[i] = a[i][i];
}

}  // namespace detail

// Unit normals from the covariance of the k nearest neighbors (the point
// itself included). valid[i] is false where the neighborhood has rank < 2, in
// which case no plane is defined.
inline void estimate_normals(const PointCloud& pts, const KdTree& tree, int k,
                             std::vector<Vec3>& normals,
                             std::vector<bool>& valid) {
  normals.assign(pts.size(), Vec3{0, 0, 0});
  valid.assign(pts.size(), false);
  std::vector<KdTree::Hit> nn;
  for (size_t i = 0; i < pts.size(); ++i) {
    tree.knearest(pts[i], static_cast<size_t>(k), nn);
    Vec3 mean = {0, 0, 0};
    for (const auto& h : nn)
      for (int d = 0; d < 3; ++d) mean[d] += pts[h.index][d];
    for (int d = 0; d < 3; ++d) mean[d] /= static_cast<double>(nn.size());
    double cov[3][3] = {{0, 0, 0}, {0, 0, 0}, {0, 0, 0}};
    for (const auto& h : nn) {
      const Vec3 c = pts[h.index] - mean;
      for (int r = 0; r < 3; ++r)
        for (int s = 0; s < 3; ++s) cov[r][s] += c[r] * c[s];
    }
    double eval[3], evec[3][3];
    detail::sym3_eigen(cov, eval, evec);
    int lo = 0, hi = 0;
    for (int d = 1; d < 3; ++d) {
      if (eval[d] < eval[lo]) lo = d;
      if (eval[d] > eval[hi]) hi = d;
    }
    int mid = 3 - lo - hi;
    if (lo == hi) mid = lo;  // all equal
    if (eval[hi] <= 0.0 || eval[mid] <= 1e-12 * eval[hi])
      continue;  // coincident or collinear neighborhood
    Vec3 nrm = {evec[0][lo], evec[1][lo], evec[2][lo]};
    const double len =
        std::sqrt(nrm[0] * nrm[0] + nrm[1] * nrm[1] + nrm[2] * nrm[2]);
    if (len <= 0.0) continue;
    for (int d = 0; d < 3; ++d) nrm[d] /= len;
    normals[i] = nrm;
    valid[i] = true;
  }
}

constexpr int kNormalNeighbors = 16;

inline double psnr_from_mse(double mse, double peak) {
  if (mse <= 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(3.0 * peak * peak / mse);
}

// default peak: longest bounding-box edge of the reference
inline double peak_from_reference(const PointCloud& ref) {
  const Vec3 lo = min_corner(ref), hi = max_corner(ref);
  double peak = 0.0;
  for (int d = 0; d < 3; ++d) peak = std::max(peak, hi[d] - lo[d]);
  return peak;
}

namespace detail {

inline double directional_mse_point(const PointCloud& from,
                                    const KdTree& totree,
                                    const PointCloud& to) {
  std::vector<double> errs(from.size());
  for (size_t i = 0; i < from.size(); ++i)
    errs[i] = dist2(from[i], to[totree.nearest(from[i]).index]);
  return pairwise_sum(errs) / static_cast<double>(from.size());
}

}  // namespace detail

// Point-to-point PSNR. Symmetric form takes the worse (larger) of the two
// directional mean squared errors; the mean form averages them.
inline double d1_psnr(const PointCloud& ref, const PointCloud& rec,
                      double peak = 0.0, bool use_max = true) {
  if (ref.empty() || rec.empty()) throw Error("d1_psnr: empty cloud");
  if (peak <= 0.0) peak = peak_from_reference(ref);
  const KdTree tref(ref), trec(rec);
  const double fwd = detail::directional_mse_point(ref, trec, rec);
  const double bwd = detail::directional_mse_point(rec, tref, ref);
  const double mse = use_max ? std::max(fwd, bwd) : 0.5 * (fwd + bwd);
  return psnr_from_mse(mse, peak);
}

struct D2Result {
  double psnr = 0;
  uint64_t degenerate = 0;  // points scored without a usable plane
};

// Point-to-plane PSNR. Normals live on the reference; a rec point projects
// its error onto the normal of its reference match, a ref point onto its own.
// Where no plane exists the raw point error is used and counted.
inline D2Result d2_psnr(const PointCloud& ref, const PointCloud& rec,
                        double peak = 0.0, int k = kNormalNeighbors,
                        bool use_max = true) {
  if (ref.empty() || rec.empty()) throw Error("d2_psnr: empty cloud");
  if (static_cast<size_t>(k) + 1 > ref.size())
    throw Error("d2_psnr: reference too small for k neighbors");
  if (peak <= 0.0) peak = peak_from_reference(ref);
  const KdTree tref(ref), trec(rec);
  std::vector<Vec3> normals;
  std::vector<bool> valid;
  estimate_normals(ref, tref, k, normals, valid);

  D2Result out;
  std::vector<double> errs(rec.size());
  for (size_t i = 0; i < rec.size(); ++i) {
    const auto hit = tref.nearest(rec[i]);
    const Vec3 e = rec[i] - ref[hit.index];
    if (valid[hit.index]) {
      const Vec3& n = normals[hit.index];
      const double d = e[0] * n[0] + e[1] * n[1] + e[2] * n[2];
      errs[i] = d * d;
    } else {
      errs[i] = hit.d2;
      ++out.degenerate;
    }
  }
  const double bwd = pairwise_sum(errs) / static_cast<double>(rec.size());

  errs.assign(ref.size(), 0.0);
  for (size_t i = 0; i < ref.size(); ++i) {
    const auto hit = trec.nearest(ref[i]);
    const Vec3 e = ref[i] - rec[hit.index];
    if (valid[i]) {
      const Vec3& n = normals[i];
      const double d = e[0] * n[0] + e[1] * n[1] + e[2] * n[2];
      errs[i] = d * d;
    } else {
      errs[i] = hit.d2;
      ++out.degenerate;
    }
  }
  const double fwd = pairwise_sum(errs) / static_cast<double>(ref.size());

  const double mse = use_max ? std::max(fwd, bwd) : 0.5 * (fwd + bwd);
  out.psnr = psnr_from_mse(mse, peak);
  return out;
}

// sum of the two directional mean squared nearest-neighbor distances
inline double chamfer(const PointCloud& ref, const PointCloud& rec) {
  if (ref.empty() || rec.empty()) throw Error("chamfer: empty cloud");
  const KdTree tref(ref), trec(rec);
  return detail::directional_mse_point(ref, trec, rec) +
         detail::directional_mse_point(rec, tref, ref);
}

// One rate-distortion sample: rate in bits per input point plus the three
// fidelity numbers against the source cloud at a given tree depth.
struct RDPoint {
  int depth = 0;
  double bpp = 0;
  double d1_psnr = 0;
  double d2_psnr = 0;
  double chamfer = 0;
  uint64_t d2_degenerate = 0;
};

}  // namespace opcc
