#pragma once

#include <cmath>
#include <vector>

#include "opcc/context.hpp"
#include "opcc/dist.hpp"
#include "opcc/math.hpp"
#include "opcc/model.hpp"

namespace opcc {

inline float geluf(float x) {
  const float c = 0.7978845608028654f;  // sqrt(2/pi)
  const float u = c * (x + 0.044715f * x * x * x);
  return 0.5f * x * (1.0f + det_tanhf(u));
}

constexpr double kLayerNormEps = 1e-5;

// Concatenated per-slot table lookups, d_model floats. Indices outside the
// tables are a hard error, never clamped.
inline void embed_row_f(const EvalModel& m, const FeatureRow& row,
                        float* out) {
  const auto& c = m.cfg;
  const auto& occ = m.t[ParamIndex::kEmbOcc];
  const auto& lvl = m.t[ParamIndex::kEmbLvl];
  const auto& oct = m.t[ParamIndex::kEmbOct];
  for (int s = 0; s < c.n_ancestors; ++s) {
    if (static_cast<int>(row.occ[s]) >= occ.rows ||
        static_cast<int>(row.lvl[s]) >= lvl.rows ||
        static_cast<int>(row.oct[s]) >= oct.rows)
      throw Error("embed: feature index outside the embedding tables");
    const float* r = occ.row(row.occ[s]);
    for (int i = 0; i < c.d_occ; ++i) *out++ = r[i];
    r = lvl.row(row.lvl[s]);
    for (int i = 0; i < c.d_lvl; ++i) *out++ = r[i];
    r = oct.row(row.oct[s]);
    for (int i = 0; i < c.d_oct; ++i) *out++ = r[i];
  }
}

inline void layer_norm_f(const float* x, const float* g, const float* b,
                         float* y, int d) {
  double mu = 0.0;
  for (int i = 0; i < d; ++i) mu += x[i];
  mu /= d;
  double var = 0.0;
  for (int i = 0; i < d; ++i) {
    const double cdev = x[i] - mu;
    var += cdev * cdev;
  }
  var /= d;
  const float inv = static_cast<float>(1.0 / std::sqrt(var + kLayerNormEps));
  const float mean = static_cast<float>(mu);
  for (int i = 0; i < d; ++i) y[i] = (x[i] - mean) * inv * g[i] + b[i];
}

// Incremental evaluator for one window. Rows that have been fully decoded are
// appended as context; a pending node is predicted from the context rows plus
// its own masked row, without being appended. Encoder and decoder drive this
// same object through the same call sequence, which is what makes their
// arithmetic bit-identical.
class WindowEvaluator {
 public:
  explicit WindowEvaluator(const EvalModel& m)
      : m_(m), idx_(m.cfg), de_(m.cfg.d_embed()), dm_(m.cfg.d_model()) {
    const auto& c = m_.cfg;
    kc_.resize(static_cast<size_t>(c.n_layers) * c.n_ancestors);
    vc_.resize(kc_.size());
    e_.resize(dm_);
    te_.resize(dm_);
    x_.resize(dm_);
    y_.resize(dm_);
    tmp_.resize(dm_);
    q_.resize(c.d_head);
    heads_.resize(static_cast<size_t>(c.n_ancestors) * c.d_head);
    h1_.resize(std::max(c.d_ff, c.d_mlp));
    logits_.resize(255);
    tq_.resize(static_cast<size_t>(c.n_ancestors) * c.d_head);
    tk_.resize(tq_.size());
    tv_.resize(tq_.size());
  }

  void reset() {
    count_ = 0;
    for (auto& v : kc_) v.clear();
    for (auto& v : vc_) v.clear();
  }

  int size() const { return count_; }

  // Appends a fully known row. Runs every block except the last one end to
  // end (later rows attend to this row's intermediate states); on the last
  // block only the key/value projections are needed.
  void add_context_row(const FeatureRow& row) {
    const auto& c = m_.cfg;
    embed(row, e_);
    std::vector<float>& cur = e_;
    for (int l = 0; l < c.n_layers; ++l) {
      layer_norm(cur.data(), t(idx_.ln_att_g(l)), t(idx_.ln_att_b(l)),
                 x_.data(), dm_);
      for (int h = 0; h < c.n_ancestors; ++h) {
        const float* chunk = x_.data() + static_cast<size_t>(h) * de_;
        auto& kc = kc_[cache_index(l, h)];
        auto& vc = vc_[cache_index(l, h)];
        const size_t off = kc.size();
        kc.resize(off + c.d_head);
        vc.resize(off + c.d_head);
        gemv(t(idx_.head_k(l, h)), t(idx_.head_kb(l, h)), chunk,
             kc.data() + off, c.d_head, de_);
        gemv(t(idx_.head_v(l, h)), t(idx_.head_vb(l, h)), chunk,
             vc.data() + off, c.d_head, de_);
      }
      if (l == c.n_layers - 1) break;
      attend_self_included(l, x_.data());
      gemv(t(idx_.att_w(l)), t(idx_.att_b(l)), heads_.data(), tmp_.data(), dm_,
           c.n_ancestors * c.d_head);
      for (int i = 0; i < dm_; ++i) cur[i] += tmp_[i];
      feed_forward(l, cur);
    }
    ++count_;
  }

  // Predicts the next node from the appended rows plus the masked row of the
  // node itself. Leaves the caches untouched.
  Distribution255 predict_target(const FeatureRow& row) {
    const auto& c = m_.cfg;
    embed(row, te_);
    std::vector<float>& cur = te_;
    for (int l = 0; l < c.n_layers; ++l) {
      layer_norm(cur.data(), t(idx_.ln_att_g(l)), t(idx_.ln_att_b(l)),
                 x_.data(), dm_);
      for (int h = 0; h < c.n_ancestors; ++h) {
        const float* chunk = x_.data() + static_cast<size_t>(h) * de_;
        gemv(t(idx_.head_q(l, h)), t(idx_.head_qb(l, h)), chunk,
             tq_.data() + static_cast<size_t>(h) * c.d_head, c.d_head, de_);
        gemv(t(idx_.head_k(l, h)), t(idx_.head_kb(l, h)), chunk,
             tk_.data() + static_cast<size_t>(h) * c.d_head, c.d_head, de_);
        gemv(t(idx_.head_v(l, h)), t(idx_.head_vb(l, h)), chunk,
             tv_.data() + static_cast<size_t>(h) * c.d_head, c.d_head, de_);
      }
      for (int h = 0; h < c.n_ancestors; ++h) {
        const float* q = tq_.data() + static_cast<size_t>(h) * c.d_head;
        const float* selfk = tk_.data() + static_cast<size_t>(h) * c.d_head;
        const float* selfv = tv_.data() + static_cast<size_t>(h) * c.d_head;
        attend(l, h, q, selfk, selfv,
               heads_.data() + static_cast<size_t>(h) * c.d_head);
      }
      gemv(t(idx_.att_w(l)), t(idx_.att_b(l)), heads_.data(), tmp_.data(), dm_,
           c.n_ancestors * c.d_head);
      for (int i = 0; i < dm_; ++i) cur[i] += tmp_[i];
      feed_forward(l, cur);
    }
    layer_norm(cur.data(), t(idx_.out_ln_g()), t(idx_.out_ln_b()), x_.data(),
               dm_);
    gemv(t(idx_.out_fc1_w()), t(idx_.out_fc1_b()), x_.data(), h1_.data(),
         c.d_mlp, dm_);
    for (int i = 0; i < c.d_mlp; ++i) h1_[i] = geluf(h1_[i]);
    gemv(t(idx_.out_fc2_w()), t(idx_.out_fc2_b()), h1_.data(), logits_.data(),
         255, c.d_mlp);

    float mx = logits_[0];
    for (int i = 1; i < 255; ++i) mx = std::max(mx, logits_[i]);
    Distribution255 out;
    double sum = 0.0;
    for (int i = 0; i < 255; ++i) {
      const float e = det_expf(logits_[i] - mx);
      out[i] = e;
      sum += static_cast<double>(e);
    }
    for (int i = 0; i < 255; ++i) out[i] /= sum;
    return out;
  }

 private:
  const float* t(int i) const { return m_.t[static_cast<size_t>(i)].v.data(); }
  size_t cache_index(int l, int h) const {
    return static_cast<size_t>(l) * m_.cfg.n_ancestors + h;
  }

  void embed(const FeatureRow& row, std::vector<float>& e) const {
    embed_row_f(m_, row, e.data());
  }

  static void layer_norm(const float* x, const float* g, const float* b,
                         float* y, int d) {
    layer_norm_f(x, g, b, y, d);
  }

  // scores over cached rows then the masked row itself, in that order
  void attend(int l, int h, const float* q, const float* selfk,
              const float* selfv, float* out) {
    const int dh = m_.cfg.d_head;
    const auto& kc = kc_[cache_index(l, h)];
    const auto& vc = vc_[cache_index(l, h)];
    const int n = count_;
    scores_.resize(static_cast<size_t>(n) + 1);
    for (int j = 0; j < n; ++j)
      scores_[j] = dot(q, kc.data() + static_cast<size_t>(j) * dh, dh);
    scores_[n] = dot(q, selfk, dh);
    float mx = scores_[0];
    for (int j = 1; j <= n; ++j) mx = std::max(mx, scores_[j]);
    double sum = 0.0;
    for (int j = 0; j <= n; ++j) {
      const float e = det_expf(scores_[j] - mx);
      scores_[j] = e;
      sum += static_cast<double>(e);
    }
    const float inv = static_cast<float>(1.0 / sum);
    for (int i = 0; i < dh; ++i) out[i] = 0.0f;
    for (int j = 0; j < n; ++j)
      axpy(scores_[j] * inv, vc.data() + static_cast<size_t>(j) * dh, out, dh);
    axpy(scores_[n] * inv, selfv, out, dh);
  }

  // content-row attention: the row's own k/v were appended already, so the
  // cache covers rows 0..count_ inclusive
  void attend_self_included(int l, const float* x) {
    const auto& c = m_.cfg;
    const int dh = c.d_head;
    for (int h = 0; h < c.n_ancestors; ++h) {
      const float* chunk = x + static_cast<size_t>(h) * de_;
      gemv(t(idx_.head_q(l, h)), t(idx_.head_qb(l, h)), chunk, q_.data(), dh,
           de_);
      const auto& kc = kc_[cache_index(l, h)];
      const auto& vc = vc_[cache_index(l, h)];
      const int n = count_ + 1;
      scores_.resize(static_cast<size_t>(n));
      for (int j = 0; j < n; ++j)
        scores_[j] =
            dot(q_.data(), kc.data() + static_cast<size_t>(j) * dh, dh);
      float mx = scores_[0];
      for (int j = 1; j < n; ++j) mx = std::max(mx, scores_[j]);
      double sum = 0.0;
      for (int j = 0; j < n; ++j) {
        const float e = det_expf(scores_[j] - mx);
        scores_[j] = e;
        sum += static_cast<double>(e);
      }
      const float inv = static_cast<float>(1.0 / sum);
      float* out = heads_.data() + static_cast<size_t>(h) * dh;
      for (int i = 0; i < dh; ++i) out[i] = 0.0f;
      for (int j = 0; j < n; ++j)
        axpy(scores_[j] * inv, vc.data() + static_cast<size_t>(j) * dh, out,
             dh);
    }
  }

  void feed_forward(int l, std::vector<float>& cur) {
    const auto& c = m_.cfg;
    layer_norm(cur.data(), t(idx_.ln_ff_g(l)), t(idx_.ln_ff_b(l)), y_.data(),
               dm_);
    gemv(t(idx_.ff1_w(l)), t(idx_.ff1_b(l)), y_.data(), h1_.data(), c.d_ff,
         dm_);
    for (int i = 0; i < c.d_ff; ++i) h1_[i] = geluf(h1_[i]);
    gemv(t(idx_.ff2_w(l)), t(idx_.ff2_b(l)), h1_.data(), tmp_.data(), dm_,
         c.d_ff);
    for (int i = 0; i < dm_; ++i) cur[i] += tmp_[i];
  }

  const EvalModel& m_;
  ParamIndex idx_;
  int de_, dm_;
  int count_ = 0;
  std::vector<std::vector<float>> kc_, vc_;  // [layer * heads] -> rows*d_head
  std::vector<float> e_, te_, x_, y_, tmp_, q_, heads_, h1_, logits_;
  std::vector<float> tq_, tk_, tv_, scores_;
};

// Runs a materialized window: context prefix first, then each target is
// predicted and its true row appended, exactly the coder's call sequence.
inline std::vector<Distribution255> forward_window(WindowEvaluator& ev,
                                                   const ContextWindow& w) {
  ev.reset();
  const int prefix = w.spec.length - w.spec.n_targets;
  for (int j = 0; j < prefix; ++j) ev.add_context_row(w.rows[j]);
  std::vector<Distribution255> dists;
  dists.reserve(w.targets.size());
  for (int j = 0; j < w.spec.n_targets; ++j) {
    dists.push_back(ev.predict_target(w.targets[j]));
    ev.add_context_row(w.rows[prefix + j]);
  }
  return dists;
}

// Masked attention map for one layer/head over fully known rows, row-major
// N x N. Row m holds the softmax weights over rows 0..m; entries above the
// diagonal stay exactly zero. Diagnostic only, not on the coding path.
inline std::vector<double> attention_scores(const EvalModel& m,
                                            const std::vector<FeatureRow>& rows,
                                            int layer, int head) {
  const auto& c = m.cfg;
  if (layer < 0 || layer >= c.n_layers) throw Error("layer out of range");
  if (head < 0 || head >= c.n_ancestors) throw Error("head out of range");
  const int n = static_cast<int>(rows.size());
  if (n == 0) throw Error("attention_scores: no rows");
  ParamIndex idx(c);
  const int de = c.d_embed(), dm = c.d_model(), dh = c.d_head;
  auto t = [&](int i) { return m.t[static_cast<size_t>(i)].v.data(); };

  // advance every row through the blocks below the probed layer
  std::vector<std::vector<float>> cur(n);
  for (int r = 0; r < n; ++r) {
    cur[r].resize(dm);
    embed_row_f(m, rows[r], cur[r].data());
  }
  std::vector<float> x(dm), q(dh), heads(static_cast<size_t>(c.n_ancestors) *
                                         dh),
      tmp(dm), h1(c.d_ff);
  std::vector<std::vector<float>> kc(c.n_ancestors), vc(c.n_ancestors);
  std::vector<float> sc;
  for (int l = 0; l < layer; ++l) {
    for (auto& v : kc) v.assign(static_cast<size_t>(n) * dh, 0.0f);
    for (auto& v : vc) v.assign(static_cast<size_t>(n) * dh, 0.0f);
    for (int r = 0; r < n; ++r) {
      layer_norm_f(cur[r].data(), t(idx.ln_att_g(l)), t(idx.ln_att_b(l)),
                   x.data(), dm);
      for (int h = 0; h < c.n_ancestors; ++h) {
        const float* chunk = x.data() + static_cast<size_t>(h) * de;
        gemv(t(idx.head_k(l, h)), t(idx.head_kb(l, h)), chunk,
             kc[h].data() + static_cast<size_t>(r) * dh, dh, de);
        gemv(t(idx.head_v(l, h)), t(idx.head_vb(l, h)), chunk,
             vc[h].data() + static_cast<size_t>(r) * dh, dh, de);
      }
      for (int h = 0; h < c.n_ancestors; ++h) {
        const float* chunk = x.data() + static_cast<size_t>(h) * de;
        gemv(t(idx.head_q(l, h)), t(idx.head_qb(l, h)), chunk, q.data(), dh,
             de);
        sc.resize(static_cast<size_t>(r) + 1);
        for (int j = 0; j <= r; ++j)
          sc[j] = dot(q.data(), kc[h].data() + static_cast<size_t>(j) * dh, dh);
        float mx = sc[0];
        for (int j = 1; j <= r; ++j) mx = std::max(mx, sc[j]);
        double sum = 0.0;
        for (int j = 0; j <= r; ++j) {
          const float e = det_expf(sc[j] - mx);
          sc[j] = e;
          sum += static_cast<double>(e);
        }
        const float inv = static_cast<float>(1.0 / sum);
        float* o = heads.data() + static_cast<size_t>(h) * dh;
        for (int i = 0; i < dh; ++i) o[i] = 0.0f;
        for (int j = 0; j <= r; ++j)
          axpy(sc[j] * inv, vc[h].data() + static_cast<size_t>(j) * dh, o, dh);
      }
      gemv(t(idx.att_w(l)), t(idx.att_b(l)), heads.data(), tmp.data(), dm,
           c.n_ancestors * dh);
      for (int i = 0; i < dm; ++i) cur[r][i] += tmp[i];
      layer_norm_f(cur[r].data(), t(idx.ln_ff_g(l)), t(idx.ln_ff_b(l)),
                   x.data(), dm);
      gemv(t(idx.ff1_w(l)), t(idx.ff1_b(l)), x.data(), h1.data(), c.d_ff, dm);
      for (int i = 0; i < c.d_ff; ++i) h1[i] = geluf(h1[i]);
      gemv(t(idx.ff2_w(l)), t(idx.ff2_b(l)), h1.data(), tmp.data(), dm, c.d_ff);
      for (int i = 0; i < dm; ++i) cur[r][i] += tmp[i];
    }
  }

  // probed layer: queries and keys only
  std::vector<float> qs(static_cast<size_t>(n) * dh),
      ks(static_cast<size_t>(n) * dh);
  for (int r = 0; r < n; ++r) {
    layer_norm_f(cur[r].data(), t(idx.ln_att_g(layer)), t(idx.ln_att_b(layer)),
                 x.data(), dm);
    const float* chunk = x.data() + static_cast<size_t>(head) * de;
    gemv(t(idx.head_q(layer, head)), t(idx.head_qb(layer, head)), chunk,
         qs.data() + static_cast<size_t>(r) * dh, dh, de);
    gemv(t(idx.head_k(layer, head)), t(idx.head_kb(layer, head)), chunk,
         ks.data() + static_cast<size_t>(r) * dh, dh, de);
  }
  std::vector<double> mat(static_cast<size_t>(n) * n, 0.0);
  for (int r = 0; r < n; ++r) {
    sc.resize(static_cast<size_t>(r) + 1);
    for (int j = 0; j <= r; ++j)
      sc[j] = dot(qs.data() + static_cast<size_t>(r) * dh,
                  ks.data() + static_cast<size_t>(j) * dh, dh);
    float mx = sc[0];
    for (int j = 1; j <= r; ++j) mx = std::max(mx, sc[j]);
    double sum = 0.0;
    for (int j = 0; j <= r; ++j) {
      const float e = det_expf(sc[j] - mx);
      sc[j] = e;
      sum += static_cast<double>(e);
    }
    for (int j = 0; j <= r; ++j)
      mat[static_cast<size_t>(r) * n + j] = static_cast<double>(sc[j]) / sum;
  }
  return mat;
}

}  // namespace opcc
