#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "opcc/attention.hpp"
#include "opcc/context.hpp"
#include "opcc/math.hpp"
#include "opcc/model.hpp"
#include "opcc/octree.hpp"

namespace opcc {

// Double-precision training path. Mirrors WindowEvaluator's formulas; the
// only differences are precision and that activations are kept for the
// backward sweep.

using GradAcc = std::vector<std::vector<double>>;

inline GradAcc make_grads(const ModelParams& p) {
  GradAcc g(p.t.size());
  for (size_t i = 0; i < p.t.size(); ++i) g[i].assign(p.t[i].size(), 0.0);
  return g;
}

inline void zero_grads(GradAcc& g) {
  for (auto& v : g) std::fill(v.begin(), v.end(), 0.0);
}

namespace trn {

inline double gelu(double x) {
  const double c = 0.7978845608028654;
  const double u = c * (x + 0.044715 * x * x * x);
  return 0.5 * x * (1.0 + std::tanh(u));
}

inline double gelu_grad(double x) {
  const double c = 0.7978845608028654;
  const double u = c * (x + 0.044715 * x * x * x);
  const double th = std::tanh(u);
  return 0.5 * (1.0 + th) +
         0.5 * x * (1.0 - th * th) * c * (1.0 + 3.0 * 0.044715 * x * x);
}

inline void layer_norm(const double* x, const double* g, const double* b,
                       double* y, int d) {
  double mu = 0.0;
  for (int i = 0; i < d; ++i) mu += x[i];
  mu /= d;
  double var = 0.0;
  for (int i = 0; i < d; ++i) {
    const double c = x[i] - mu;
    var += c * c;
  }
  var /= d;
  const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
  for (int i = 0; i < d; ++i) y[i] = (x[i] - mu) * inv * g[i] + b[i];
}

// dx += backward of y = (x - mu)/sigma * g + b, also accumulates dg, db
inline void layer_norm_backward(const double* x, const double* g,
                                const double* dy, double* dx, double* dg,
                                double* db, int d) {
  double mu = 0.0;
  for (int i = 0; i < d; ++i) mu += x[i];
  mu /= d;
  double var = 0.0;
  for (int i = 0; i < d; ++i) {
    const double c = x[i] - mu;
    var += c * c;
  }
  var /= d;
  const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
  double mean_t = 0.0, mean_tx = 0.0;
  for (int i = 0; i < d; ++i) {
    const double xh = (x[i] - mu) * inv;
    const double t = dy[i] * g[i];
    dg[i] += dy[i] * xh;
    db[i] += dy[i];
    mean_t += t;
    mean_tx += t * xh;
  }
  mean_t /= d;
  mean_tx /= d;
  for (int i = 0; i < d; ++i) {
    const double xh = (x[i] - mu) * inv;
    dx[i] += ((dy[i] * g[i]) - mean_t - xh * mean_tx) * inv;
  }
}

}  // namespace trn

// Activation storage for one window.
struct TrainWorkspace {
  int N = 0, T = 0, P = 0;  // rows, targets, content prefix (N - T)

  // content side, indexed [l], rows flattened row-major
  std::vector<std::vector<double>> Ec1;    // singleton: embeddings N*D
  std::vector<std::vector<double>> Fc;     // l < L-1: N*D layer outputs
  std::vector<std::vector<double>> Xc;     // all l: N*D post-ln
  std::vector<std::vector<double>> Qc, Kc, Vc;  // N*H*dh (Qc only l < L-1)
  std::vector<std::vector<double>> Ac;     // l < L-1: H*N*N probs
  std::vector<std::vector<double>> HCc;    // l < L-1: N*H*dh
  std::vector<std::vector<double>> Uc, Yc; // l < L-1: N*D
  std::vector<std::vector<double>> H1c, G1c;  // l < L-1: N*dff

  // target side
  std::vector<double> Et;                   // T*D
  std::vector<std::vector<double>> Ft;      // all l: T*D
  std::vector<std::vector<double>> Xt;      // T*D
  std::vector<std::vector<double>> Qt, Kt, Vt;  // T*H*dh
  std::vector<std::vector<double>> At;      // H*T*(N+1)
  std::vector<std::vector<double>> HCt;     // T*H*dh
  std::vector<std::vector<double>> Ut, Yt;  // T*D
  std::vector<std::vector<double>> H1t, G1t;  // T*dff
  std::vector<double> HXt, HH1, HG1, PR;    // head activations, PR = probs

  // backward accumulators for content keys/values
  std::vector<std::vector<double>> dKc, dVc;

  void resize(const ModelConfig& c, int n_rows, int n_targets) {
    N = n_rows;
    T = n_targets;
    P = N - T;
    const int L = c.n_layers, D = c.d_model(), H = c.n_ancestors,
              dh = c.d_head, dff = c.d_ff;
    auto fit = [](std::vector<std::vector<double>>& v, int count, size_t sz) {
      v.resize(count);
      for (auto& x : v) x.assign(sz, 0.0);
    };
    Ec1.resize(1);
    Ec1[0].assign(static_cast<size_t>(N) * D, 0.0);
    fit(Fc, L > 1 ? L - 1 : 0, static_cast<size_t>(N) * D);
    fit(Xc, L, static_cast<size_t>(N) * D);
    fit(Qc, L > 1 ? L - 1 : 0, static_cast<size_t>(N) * H * dh);
    fit(Kc, L, static_cast<size_t>(N) * H * dh);
    fit(Vc, L, static_cast<size_t>(N) * H * dh);
    fit(Ac, L > 1 ? L - 1 : 0,
        static_cast<size_t>(H) * N * N);
    fit(HCc, L > 1 ? L - 1 : 0, static_cast<size_t>(N) * H * dh);
    fit(Uc, L > 1 ? L - 1 : 0, static_cast<size_t>(N) * D);
    fit(Yc, L > 1 ? L - 1 : 0, static_cast<size_t>(N) * D);
    fit(H1c, L > 1 ? L - 1 : 0, static_cast<size_t>(N) * dff);
    fit(G1c, L > 1 ? L - 1 : 0, static_cast<size_t>(N) * dff);

    Et.assign(static_cast<size_t>(T) * D, 0.0);
    fit(Ft, L, static_cast<size_t>(T) * D);
    fit(Xt, L, static_cast<size_t>(T) * D);
    fit(Qt, L, static_cast<size_t>(T) * H * dh);
    fit(Kt, L, static_cast<size_t>(T) * H * dh);
    fit(Vt, L, static_cast<size_t>(T) * H * dh);
    fit(At, L, static_cast<size_t>(H) * T * (N + 1));
    fit(HCt, L, static_cast<size_t>(T) * H * dh);
    fit(Ut, L, static_cast<size_t>(T) * D);
    fit(Yt, L, static_cast<size_t>(T) * D);
    fit(H1t, L, static_cast<size_t>(T) * dff);
    fit(G1t, L, static_cast<size_t>(T) * dff);
    HXt.assign(static_cast<size_t>(T) * D, 0.0);
    HH1.assign(static_cast<size_t>(T) * c.d_mlp, 0.0);
    HG1.assign(static_cast<size_t>(T) * c.d_mlp, 0.0);
    PR.assign(static_cast<size_t>(T) * 255, 0.0);

    fit(dKc, L, static_cast<size_t>(N) * H * dh);
    fit(dVc, L, static_cast<size_t>(N) * H * dh);
  }
};

namespace trn {

inline void embed_row(const ModelParams& p, const FeatureRow& row,
                      double* out) {
  const auto& c = p.cfg;
  const Tensor& occ = p.t[ParamIndex::kEmbOcc];
  const Tensor& lvl = p.t[ParamIndex::kEmbLvl];
  const Tensor& oct = p.t[ParamIndex::kEmbOct];
  for (int s = 0; s < c.n_ancestors; ++s) {
    const double* r = occ.row(row.occ[s]);
    for (int i = 0; i < c.d_occ; ++i) *out++ = r[i];
    r = lvl.row(row.lvl[s]);
    for (int i = 0; i < c.d_lvl; ++i) *out++ = r[i];
    r = oct.row(row.oct[s]);
    for (int i = 0; i < c.d_oct; ++i) *out++ = r[i];
  }
}

inline void embed_backward(const ModelParams& p, const FeatureRow& row,
                           const double* de, GradAcc& g) {
  const auto& c = p.cfg;
  const int occ_cols = c.d_occ, lvl_cols = c.d_lvl, oct_cols = c.d_oct;
  for (int s = 0; s < c.n_ancestors; ++s) {
    double* r = g[ParamIndex::kEmbOcc].data() +
                static_cast<size_t>(row.occ[s]) * occ_cols;
    for (int i = 0; i < occ_cols; ++i) r[i] += *de++;
    r = g[ParamIndex::kEmbLvl].data() +
        static_cast<size_t>(row.lvl[s]) * lvl_cols;
    for (int i = 0; i < lvl_cols; ++i) r[i] += *de++;
    r = g[ParamIndex::kEmbOct].data() +
        static_cast<size_t>(row.oct[s]) * oct_cols;
    for (int i = 0; i < oct_cols; ++i) r[i] += *de++;
  }
}

}  // namespace trn

// Forward pass over one window; fills ws and returns the summed negative log
// likelihood of the targets in nats.
inline double window_forward(const ModelParams& p, const ContextWindow& w,
                             TrainWorkspace& ws) {
  const auto& c = p.cfg;
  const ParamIndex ix(c);
  const int L = c.n_layers, D = c.d_model(), H = c.n_ancestors, dh = c.d_head,
            de = c.d_embed(), dff = c.d_ff, dmlp = c.d_mlp;
  const int N = w.spec.length, T = w.spec.n_targets;
  ws.resize(c, N, T);
  auto W = [&](int i) { return p.t[static_cast<size_t>(i)].v.data(); };

  std::vector<double> tmp(static_cast<size_t>(std::max({D, dff, dmlp, 255})));
  std::vector<double> scores(static_cast<size_t>(N) + 1);

  // content rows
  for (int n = 0; n < N; ++n) {
    trn::embed_row(p, w.rows[n], ws.Ec1[0].data() + static_cast<size_t>(n) * D);
    for (int l = 0; l < L; ++l) {
      const double* cin = (l == 0 ? ws.Ec1[0].data() : ws.Fc[l - 1].data()) +
                          static_cast<size_t>(n) * D;
      double* x = ws.Xc[l].data() + static_cast<size_t>(n) * D;
      trn::layer_norm(cin, W(ix.ln_att_g(l)), W(ix.ln_att_b(l)), x, D);
      for (int h = 0; h < H; ++h) {
        const double* chunk = x + static_cast<size_t>(h) * de;
        double* krow =
            ws.Kc[l].data() + (static_cast<size_t>(n) * H + h) * dh;
        double* vrow =
            ws.Vc[l].data() + (static_cast<size_t>(n) * H + h) * dh;
        gemv(W(ix.head_k(l, h)), W(ix.head_kb(l, h)), chunk, krow, dh, de);
        gemv(W(ix.head_v(l, h)), W(ix.head_vb(l, h)), chunk, vrow, dh, de);
        if (l < L - 1) {
          double* qrow =
              ws.Qc[l].data() + (static_cast<size_t>(n) * H + h) * dh;
          gemv(W(ix.head_q(l, h)), W(ix.head_qb(l, h)), chunk, qrow, dh, de);
        }
      }
      if (l == L - 1) break;
      // self-inclusive attention over rows 0..n
      for (int h = 0; h < H; ++h) {
        const double* q =
            ws.Qc[l].data() + (static_cast<size_t>(n) * H + h) * dh;
        for (int j = 0; j <= n; ++j)
          scores[j] = dot(
              q, ws.Kc[l].data() + (static_cast<size_t>(j) * H + h) * dh, dh);
        double mx = scores[0];
        for (int j = 1; j <= n; ++j) mx = std::max(mx, scores[j]);
        double sum = 0.0;
        for (int j = 0; j <= n; ++j) {
          scores[j] = std::exp(scores[j] - mx);
          sum += scores[j];
        }
        double* arow =
            ws.Ac[l].data() + (static_cast<size_t>(h) * N + n) * N;
        double* ctx = ws.HCc[l].data() + (static_cast<size_t>(n) * H + h) * dh;
        for (int i = 0; i < dh; ++i) ctx[i] = 0.0;
        for (int j = 0; j <= n; ++j) {
          arow[j] = scores[j] / sum;
          axpy(arow[j],
               ws.Vc[l].data() + (static_cast<size_t>(j) * H + h) * dh, ctx,
               dh);
        }
      }
      double* u = ws.Uc[l].data() + static_cast<size_t>(n) * D;
      gemv(W(ix.att_w(l)), W(ix.att_b(l)),
           ws.HCc[l].data() + static_cast<size_t>(n) * H * dh, tmp.data(), D,
           H * dh);
      for (int i = 0; i < D; ++i) u[i] = cin[i] + tmp[i];
      double* y = ws.Yc[l].data() + static_cast<size_t>(n) * D;
      trn::layer_norm(u, W(ix.ln_ff_g(l)), W(ix.ln_ff_b(l)), y, D);
      double* h1 = ws.H1c[l].data() + static_cast<size_t>(n) * dff;
      gemv(W(ix.ff1_w(l)), W(ix.ff1_b(l)), y, h1, dff, D);
      double* g1 = ws.G1c[l].data() + static_cast<size_t>(n) * dff;
      for (int i = 0; i < dff; ++i) g1[i] = trn::gelu(h1[i]);
      gemv(W(ix.ff2_w(l)), W(ix.ff2_b(l)), g1, tmp.data(), D, dff);
      double* f = ws.Fc[l].data() + static_cast<size_t>(n) * D;
      for (int i = 0; i < D; ++i) f[i] = u[i] + tmp[i];
    }
  }

  // targets
  double nll = 0.0;
  for (int t = 0; t < T; ++t) {
    const int pmax = ws.P + t;  // content rows visible to this target
    trn::embed_row(p, w.targets[t], ws.Et.data() + static_cast<size_t>(t) * D);
    for (int l = 0; l < L; ++l) {
      const double* cin = (l == 0 ? ws.Et.data() : ws.Ft[l - 1].data()) +
                          static_cast<size_t>(t) * D;
      double* x = ws.Xt[l].data() + static_cast<size_t>(t) * D;
      trn::layer_norm(cin, W(ix.ln_att_g(l)), W(ix.ln_att_b(l)), x, D);
      for (int h = 0; h < H; ++h) {
        const double* chunk = x + static_cast<size_t>(h) * de;
        gemv(W(ix.head_q(l, h)), W(ix.head_qb(l, h)), chunk,
             ws.Qt[l].data() + (static_cast<size_t>(t) * H + h) * dh, dh, de);
        gemv(W(ix.head_k(l, h)), W(ix.head_kb(l, h)), chunk,
             ws.Kt[l].data() + (static_cast<size_t>(t) * H + h) * dh, dh, de);
        gemv(W(ix.head_v(l, h)), W(ix.head_vb(l, h)), chunk,
             ws.Vt[l].data() + (static_cast<size_t>(t) * H + h) * dh, dh, de);
      }
      for (int h = 0; h < H; ++h) {
        const double* q =
            ws.Qt[l].data() + (static_cast<size_t>(t) * H + h) * dh;
        for (int j = 0; j < pmax; ++j)
          scores[j] = dot(
              q, ws.Kc[l].data() + (static_cast<size_t>(j) * H + h) * dh, dh);
        scores[pmax] =
            dot(q, ws.Kt[l].data() + (static_cast<size_t>(t) * H + h) * dh,
                dh);
        double mx = scores[0];
        for (int j = 1; j <= pmax; ++j) mx = std::max(mx, scores[j]);
        double sum = 0.0;
        for (int j = 0; j <= pmax; ++j) {
          scores[j] = std::exp(scores[j] - mx);
          sum += scores[j];
        }
        double* arow =
            ws.At[l].data() + (static_cast<size_t>(h) * T + t) * (N + 1);
        double* ctx = ws.HCt[l].data() + (static_cast<size_t>(t) * H + h) * dh;
        for (int i = 0; i < dh; ++i) ctx[i] = 0.0;
        for (int j = 0; j < pmax; ++j) {
          arow[j] = scores[j] / sum;
          axpy(arow[j],
               ws.Vc[l].data() + (static_cast<size_t>(j) * H + h) * dh, ctx,
               dh);
        }
        arow[pmax] = scores[pmax] / sum;
        axpy(arow[pmax],
             ws.Vt[l].data() + (static_cast<size_t>(t) * H + h) * dh, ctx, dh);
      }
      double* u = ws.Ut[l].data() + static_cast<size_t>(t) * D;
      gemv(W(ix.att_w(l)), W(ix.att_b(l)),
           ws.HCt[l].data() + static_cast<size_t>(t) * H * dh, tmp.data(), D,
           H * dh);
      for (int i = 0; i < D; ++i) u[i] = cin[i] + tmp[i];
      double* y = ws.Yt[l].data() + static_cast<size_t>(t) * D;
      trn::layer_norm(u, W(ix.ln_ff_g(l)), W(ix.ln_ff_b(l)), y, D);
      double* h1 = ws.H1t[l].data() + static_cast<size_t>(t) * dff;
      gemv(W(ix.ff1_w(l)), W(ix.ff1_b(l)), y, h1, dff, D);
      double* g1 = ws.G1t[l].data() + static_cast<size_t>(t) * dff;
      for (int i = 0; i < dff; ++i) g1[i] = trn::gelu(h1[i]);
      gemv(W(ix.ff2_w(l)), W(ix.ff2_b(l)), g1, tmp.data(), D, dff);
      double* f = ws.Ft[l].data() + static_cast<size_t>(t) * D;
      for (int i = 0; i < D; ++i) f[i] = u[i] + tmp[i];
    }
    // output head
    const double* fin = ws.Ft[L - 1].data() + static_cast<size_t>(t) * D;
    double* hx = ws.HXt.data() + static_cast<size_t>(t) * D;
    trn::layer_norm(fin, W(ix.out_ln_g()), W(ix.out_ln_b()), hx, D);
    double* hh1 = ws.HH1.data() + static_cast<size_t>(t) * dmlp;
    gemv(W(ix.out_fc1_w()), W(ix.out_fc1_b()), hx, hh1, dmlp, D);
    double* hg1 = ws.HG1.data() + static_cast<size_t>(t) * dmlp;
    for (int i = 0; i < dmlp; ++i) hg1[i] = trn::gelu(hh1[i]);
    gemv(W(ix.out_fc2_w()), W(ix.out_fc2_b()), hg1, tmp.data(), 255, dmlp);
    double mx = tmp[0];
    for (int i = 1; i < 255; ++i) mx = std::max(mx, tmp[i]);
    double sum = 0.0;
    double* pr = ws.PR.data() + static_cast<size_t>(t) * 255;
    for (int i = 0; i < 255; ++i) {
      pr[i] = std::exp(tmp[i] - mx);
      sum += pr[i];
    }
    for (int i = 0; i < 255; ++i) pr[i] /= sum;
    nll -= std::log(pr[w.symbols[t] - 1]);
  }
  return nll;
}

// Backward pass matching the last window_forward call on ws. Gradients of
// (scale * summed nll) are accumulated into g.
inline void window_backward(const ModelParams& p, const ContextWindow& w,
                            TrainWorkspace& ws, double scale, GradAcc& g) {
  const auto& c = p.cfg;
  const ParamIndex ix(c);
  const int L = c.n_layers, D = c.d_model(), H = c.n_ancestors, dh = c.d_head,
            de = c.d_embed(), dff = c.d_ff, dmlp = c.d_mlp;
  const int N = ws.N, T = ws.T;
  auto W = [&](int i) { return p.t[static_cast<size_t>(i)].v.data(); };
  auto G = [&](int i) { return g[static_cast<size_t>(i)].data(); };

  for (auto& v : ws.dKc) std::fill(v.begin(), v.end(), 0.0);
  for (auto& v : ws.dVc) std::fill(v.begin(), v.end(), 0.0);

  std::vector<double> dcur(D), dx(D), du(D), dy(D), dctx(dh), dq(dh), dk(dh),
      dv(dh);
  std::vector<double> dh1(std::max(dff, dmlp)), dg1(std::max(dff, dmlp));
  std::vector<double> dhc(static_cast<size_t>(H) * dh);
  std::vector<double> ds(static_cast<size_t>(N) + 1);
  std::vector<double> dlogits(255), dhx(D);

  // targets first: they only read content keys/values, never the reverse
  for (int t = T - 1; t >= 0; --t) {
    const int pmax = ws.P + t;
    // head
    const double* pr = ws.PR.data() + static_cast<size_t>(t) * 255;
    for (int i = 0; i < 255; ++i) dlogits[i] = scale * pr[i];
    dlogits[w.symbols[t] - 1] -= scale;
    std::fill(dg1.begin(), dg1.begin() + dmlp, 0.0);
    gemv_backward(W(ix.out_fc2_w()),
                  ws.HG1.data() + static_cast<size_t>(t) * dmlp,
                  dlogits.data(), G(ix.out_fc2_w()), G(ix.out_fc2_b()),
                  dg1.data(), 255, dmlp);
    const double* hh1 = ws.HH1.data() + static_cast<size_t>(t) * dmlp;
    for (int i = 0; i < dmlp; ++i) dh1[i] = dg1[i] * trn::gelu_grad(hh1[i]);
    std::fill(dhx.begin(), dhx.end(), 0.0);
    gemv_backward(W(ix.out_fc1_w()), ws.HXt.data() + static_cast<size_t>(t) * D,
                  dh1.data(), G(ix.out_fc1_w()), G(ix.out_fc1_b()), dhx.data(),
                  dmlp, D);
    std::fill(dcur.begin(), dcur.end(), 0.0);
    trn::layer_norm_backward(ws.Ft[L - 1].data() + static_cast<size_t>(t) * D,
                             W(ix.out_ln_g()), dhx.data(), dcur.data(),
                             G(ix.out_ln_g()), G(ix.out_ln_b()), D);

    for (int l = L - 1; l >= 0; --l) {
      const double* cin = (l == 0 ? ws.Et.data() : ws.Ft[l - 1].data()) +
                          static_cast<size_t>(t) * D;
      // f = u + ff2(gelu(ff1(ln(u))))
      std::fill(du.begin(), du.end(), 0.0);
      std::fill(dg1.begin(), dg1.begin() + dff, 0.0);
      gemv_backward(W(ix.ff2_w(l)),
                    ws.G1t[l].data() + static_cast<size_t>(t) * dff,
                    dcur.data(), G(ix.ff2_w(l)), G(ix.ff2_b(l)), dg1.data(), D,
                    dff);
      const double* h1 = ws.H1t[l].data() + static_cast<size_t>(t) * dff;
      for (int i = 0; i < dff; ++i) dh1[i] = dg1[i] * trn::gelu_grad(h1[i]);
      std::fill(dy.begin(), dy.end(), 0.0);
      gemv_backward(W(ix.ff1_w(l)),
                    ws.Yt[l].data() + static_cast<size_t>(t) * D, dh1.data(),
                    G(ix.ff1_w(l)), G(ix.ff1_b(l)), dy.data(), dff, D);
      trn::layer_norm_backward(ws.Ut[l].data() + static_cast<size_t>(t) * D,
                               W(ix.ln_ff_g(l)), dy.data(), du.data(),
                               G(ix.ln_ff_g(l)), G(ix.ln_ff_b(l)), D);
      for (int i = 0; i < D; ++i) du[i] += dcur[i];  // residual

      // u = cin + att_out(hc)
      std::fill(dhc.begin(), dhc.end(), 0.0);
      gemv_backward(W(ix.att_w(l)),
                    ws.HCt[l].data() + static_cast<size_t>(t) * H * dh,
                    du.data(), G(ix.att_w(l)), G(ix.att_b(l)), dhc.data(), D,
                    H * dh);
      std::fill(dx.begin(), dx.end(), 0.0);
      for (int h = 0; h < H; ++h) {
        const double* arow =
            ws.At[l].data() + (static_cast<size_t>(h) * T + t) * (N + 1);
        const double* q =
            ws.Qt[l].data() + (static_cast<size_t>(t) * H + h) * dh;
        const double* dctx_in = dhc.data() + static_cast<size_t>(h) * dh;
        // probs backward
        double common = 0.0;
        for (int j = 0; j <= pmax; ++j) {
          const double* vr =
              j < pmax
                  ? ws.Vc[l].data() + (static_cast<size_t>(j) * H + h) * dh
                  : ws.Vt[l].data() + (static_cast<size_t>(t) * H + h) * dh;
          ds[j] = dot(dctx_in, vr, dh);  // da_j
          common += arow[j] * ds[j];
        }
        std::fill(dq.begin(), dq.end(), 0.0);
        std::fill(dk.begin(), dk.end(), 0.0);
        std::fill(dv.begin(), dv.end(), 0.0);
        for (int j = 0; j <= pmax; ++j) {
          const double dsj = arow[j] * (ds[j] - common);
          if (j < pmax) {
            axpy(arow[j], dctx_in,
                 ws.dVc[l].data() + (static_cast<size_t>(j) * H + h) * dh, dh);
            const double* kr =
                ws.Kc[l].data() + (static_cast<size_t>(j) * H + h) * dh;
            axpy(dsj, kr, dq.data(), dh);
            axpy(dsj, q,
                 ws.dKc[l].data() + (static_cast<size_t>(j) * H + h) * dh, dh);
          } else {
            axpy(arow[j], dctx_in, dv.data(), dh);
            const double* kr =
                ws.Kt[l].data() + (static_cast<size_t>(t) * H + h) * dh;
            axpy(dsj, kr, dq.data(), dh);
            axpy(dsj, q, dk.data(), dh);
          }
        }
        const double* chunk =
            ws.Xt[l].data() + static_cast<size_t>(t) * D +
            static_cast<size_t>(h) * de;
        double* dchunk = dx.data() + static_cast<size_t>(h) * de;
        gemv_backward(W(ix.head_q(l, h)), chunk, dq.data(), G(ix.head_q(l, h)),
                      G(ix.head_qb(l, h)), dchunk, dh, de);
        gemv_backward(W(ix.head_k(l, h)), chunk, dk.data(), G(ix.head_k(l, h)),
                      G(ix.head_kb(l, h)), dchunk, dh, de);
        gemv_backward(W(ix.head_v(l, h)), chunk, dv.data(), G(ix.head_v(l, h)),
                      G(ix.head_vb(l, h)), dchunk, dh, de);
      }
      std::fill(dcur.begin(), dcur.end(), 0.0);
      trn::layer_norm_backward(cin, W(ix.ln_att_g(l)), dx.data(), dcur.data(),
                               G(ix.ln_att_g(l)), G(ix.ln_att_b(l)), D);
      for (int i = 0; i < D; ++i) dcur[i] += du[i];  // residual into cin
    }
    trn::embed_backward(p, w.targets[t], dcur.data(), g);
  }

  // content rows, newest first so later rows' contributions to earlier keys
  // and values are complete before each row is finalized
  for (int n = N - 1; n >= 0; --n) {
    // top layer: only k/v projections exist for content rows
    {
      const int l = L - 1;
      std::fill(dx.begin(), dx.end(), 0.0);
      for (int h = 0; h < H; ++h) {
        const double* chunk = ws.Xc[l].data() + static_cast<size_t>(n) * D +
                              static_cast<size_t>(h) * de;
        double* dchunk = dx.data() + static_cast<size_t>(h) * de;
        gemv_backward(W(ix.head_k(l, h)), chunk,
                      ws.dKc[l].data() + (static_cast<size_t>(n) * H + h) * dh,
                      G(ix.head_k(l, h)), G(ix.head_kb(l, h)), dchunk, dh, de);
        gemv_backward(W(ix.head_v(l, h)), chunk,
                      ws.dVc[l].data() + (static_cast<size_t>(n) * H + h) * dh,
                      G(ix.head_v(l, h)), G(ix.head_vb(l, h)), dchunk, dh, de);
      }
      const double* cin = (l == 0 ? ws.Ec1[0].data() : ws.Fc[l - 1].data()) +
                          static_cast<size_t>(n) * D;
      std::fill(dcur.begin(), dcur.end(), 0.0);
      trn::layer_norm_backward(cin, W(ix.ln_att_g(l)), dx.data(), dcur.data(),
                               G(ix.ln_att_g(l)), G(ix.ln_att_b(l)), D);
    }
    for (int l = L - 2; l >= 0; --l) {
      const double* cin = (l == 0 ? ws.Ec1[0].data() : ws.Fc[l - 1].data()) +
                          static_cast<size_t>(n) * D;
      std::fill(du.begin(), du.end(), 0.0);
      std::fill(dg1.begin(), dg1.begin() + dff, 0.0);
      gemv_backward(W(ix.ff2_w(l)),
                    ws.G1c[l].data() + static_cast<size_t>(n) * dff,
                    dcur.data(), G(ix.ff2_w(l)), G(ix.ff2_b(l)), dg1.data(), D,
                    dff);
      const double* h1 = ws.H1c[l].data() + static_cast<size_t>(n) * dff;
      for (int i = 0; i < dff; ++i) dh1[i] = dg1[i] * trn::gelu_grad(h1[i]);
      std::fill(dy.begin(), dy.end(), 0.0);
      gemv_backward(W(ix.ff1_w(l)),
                    ws.Yc[l].data() + static_cast<size_t>(n) * D, dh1.data(),
                    G(ix.ff1_w(l)), G(ix.ff1_b(l)), dy.data(), dff, D);
      trn::layer_norm_backward(ws.Uc[l].data() + static_cast<size_t>(n) * D,
                               W(ix.ln_ff_g(l)), dy.data(), du.data(),
                               G(ix.ln_ff_g(l)), G(ix.ln_ff_b(l)), D);
      for (int i = 0; i < D; ++i) du[i] += dcur[i];

      std::fill(dhc.begin(), dhc.end(), 0.0);
      gemv_backward(W(ix.att_w(l)),
                    ws.HCc[l].data() + static_cast<size_t>(n) * H * dh,
                    du.data(), G(ix.att_w(l)), G(ix.att_b(l)), dhc.data(), D,
                    H * dh);
      std::fill(dx.begin(), dx.end(), 0.0);
      for (int h = 0; h < H; ++h) {
        const double* arow =
            ws.Ac[l].data() + (static_cast<size_t>(h) * N + n) * N;
        const double* q =
            ws.Qc[l].data() + (static_cast<size_t>(n) * H + h) * dh;
        const double* dctx_in = dhc.data() + static_cast<size_t>(h) * dh;
        double common = 0.0;
        for (int j = 0; j <= n; ++j) {
          ds[j] = dot(dctx_in,
                      ws.Vc[l].data() + (static_cast<size_t>(j) * H + h) * dh,
                      dh);
          common += arow[j] * ds[j];
        }
        std::fill(dq.begin(), dq.end(), 0.0);
        for (int j = 0; j <= n; ++j) {
          const double dsj = arow[j] * (ds[j] - common);
          axpy(arow[j], dctx_in,
               ws.dVc[l].data() + (static_cast<size_t>(j) * H + h) * dh, dh);
          axpy(dsj, ws.Kc[l].data() + (static_cast<size_t>(j) * H + h) * dh,
               dq.data(), dh);
          axpy(dsj, q,
               ws.dKc[l].data() + (static_cast<size_t>(j) * H + h) * dh, dh);
        }
        // own projections: dq is local, dk/dv were accumulated by every
        // consumer including this row itself just above
        const double* chunk = ws.Xc[l].data() + static_cast<size_t>(n) * D +
                              static_cast<size_t>(h) * de;
        double* dchunk = dx.data() + static_cast<size_t>(h) * de;
        gemv_backward(W(ix.head_q(l, h)), chunk, dq.data(), G(ix.head_q(l, h)),
                      G(ix.head_qb(l, h)), dchunk, dh, de);
        gemv_backward(W(ix.head_k(l, h)), chunk,
                      ws.dKc[l].data() + (static_cast<size_t>(n) * H + h) * dh,
                      G(ix.head_k(l, h)), G(ix.head_kb(l, h)), dchunk, dh, de);
        gemv_backward(W(ix.head_v(l, h)), chunk,
                      ws.dVc[l].data() + (static_cast<size_t>(n) * H + h) * dh,
                      G(ix.head_v(l, h)), G(ix.head_vb(l, h)), dchunk, dh, de);
      }
      std::fill(dcur.begin(), dcur.end(), 0.0);
      trn::layer_norm_backward(cin, W(ix.ln_att_g(l)), dx.data(), dcur.data(),
                               G(ix.ln_att_g(l)), G(ix.ln_att_b(l)), D);
      for (int i = 0; i < D; ++i) dcur[i] += du[i];
    }
    trn::embed_backward(p, w.rows[n], dcur.data(), g);
  }
}

struct AdamState {
  std::vector<std::vector<double>> m, v;
  int64_t step = 0;

  explicit AdamState(const ModelParams& p) {
    m.resize(p.t.size());
    v.resize(p.t.size());
    for (size_t i = 0; i < p.t.size(); ++i) {
      m[i].assign(p.t[i].size(), 0.0);
      v[i].assign(p.t[i].size(), 0.0);
    }
  }

  void update(ModelParams& p, const GradAcc& g, double lr, double b1 = 0.9,
              double b2 = 0.999, double eps = 1e-8) {
    ++step;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(step));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(step));
    for (size_t i = 0; i < p.t.size(); ++i) {
      auto& pv = p.t[i].v;
      const auto& gv = g[i];
      auto& mv = m[i];
      auto& vv = v[i];
      for (size_t j = 0; j < pv.size(); ++j) {
        mv[j] = b1 * mv[j] + (1.0 - b1) * gv[j];
        vv[j] = b2 * vv[j] + (1.0 - b2) * gv[j] * gv[j];
        pv[j] -= lr * (mv[j] / c1) / (std::sqrt(vv[j] / c2) + eps);
      }
    }
  }
};

struct TrainOptions {
  int epochs = 8;
  int batch = 32;
  double lr = 1e-3;
  uint64_t seed = 1;
  double val_fraction = 0.1;
  int window = 0;  // 0: model config value
  int step = 0;
  bool verbose = false;
};

struct EpochStats {
  double train_bits_per_node = 0;
  double val_bits_per_node = 0;
};

// Mean code length of a window set under the current parameters, bits/node.
inline double eval_bits_per_node(const ModelParams& p,
                                 const std::vector<ContextWindow>& windows,
                                 TrainWorkspace& ws) {
  double nats = 0;
  uint64_t n = 0;
  for (const auto& w : windows) {
    nats += window_forward(p, w, ws);
    n += w.symbols.size();
  }
  return n == 0 ? 0.0 : nats / std::log(2.0) / static_cast<double>(n);
}

inline std::vector<EpochStats> train(ModelParams& p,
                                     const std::vector<NodeSequence>& scenes,
                                     const TrainOptions& opt) {
  const int window = opt.window > 0 ? opt.window : p.cfg.window;
  const int step = opt.step > 0 ? opt.step : std::min(p.cfg.step, window);
  if (step > window) throw Error("train: step exceeds window");
  for (const auto& s : scenes)
    for (const auto& n : s)
      if (n.level > p.cfg.max_level)
        throw Error("train: scene depth exceeds the model's level table");

  std::vector<ContextWindow> all;
  std::vector<size_t> scene_of;
  for (size_t s = 0; s < scenes.size(); ++s) {
    for (auto& w : build_windows(scenes[s], window, p.cfg.n_ancestors, step)) {
      all.push_back(std::move(w));
      scene_of.push_back(s);
    }
  }
  if (all.empty()) throw Error("train: no training windows");

  // hold out whole scenes for validation
  Rng rng(opt.seed);
  std::vector<size_t> order(scenes.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(order);
  size_t n_val_scenes =
      static_cast<size_t>(opt.val_fraction * static_cast<double>(scenes.size()));
  if (n_val_scenes == 0 && scenes.size() > 1 && opt.val_fraction > 0)
    n_val_scenes = 1;
  std::vector<bool> is_val(scenes.size(), false);
  for (size_t i = 0; i < n_val_scenes; ++i) is_val[order[i]] = true;

  std::vector<ContextWindow> train_w, val_w;
  for (size_t i = 0; i < all.size(); ++i) {
    if (is_val[scene_of[i]])
      val_w.push_back(std::move(all[i]));
    else
      train_w.push_back(std::move(all[i]));
  }
  if (train_w.empty()) throw Error("train: validation split ate everything");

  TrainWorkspace ws;
  GradAcc grads = make_grads(p);
  AdamState adam(p);
  std::vector<EpochStats> stats;

  std::vector<size_t> idx(train_w.size());
  for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;

  for (int e = 0; e < opt.epochs; ++e) {
    rng.shuffle(idx);
    double epoch_nats = 0;
    uint64_t epoch_nodes = 0;
    for (size_t start = 0; start < idx.size();
         start += static_cast<size_t>(opt.batch)) {
      const size_t stop =
          std::min(idx.size(), start + static_cast<size_t>(opt.batch));
      uint64_t batch_nodes = 0;
      for (size_t i = start; i < stop; ++i)
        batch_nodes += train_w[idx[i]].symbols.size();
      zero_grads(grads);
      const double scale = 1.0 / static_cast<double>(batch_nodes);
      for (size_t i = start; i < stop; ++i) {
        const ContextWindow& w = train_w[idx[i]];
        const double nats = window_forward(p, w, ws);
        if (!std::isfinite(nats))
          throw Error("train: loss diverged at epoch " + std::to_string(e));
        epoch_nats += nats;
        epoch_nodes += w.symbols.size();
        window_backward(p, w, ws, scale, grads);
      }
      adam.update(p, grads, opt.lr);
    }
    EpochStats es;
    es.train_bits_per_node =
        epoch_nats / std::log(2.0) / static_cast<double>(epoch_nodes);
    es.val_bits_per_node =
        val_w.empty() ? 0.0 : eval_bits_per_node(p, val_w, ws);
    stats.push_back(es);
    if (opt.verbose) {
      std::string line = "epoch " + std::to_string(e + 1) + "/" +
                         std::to_string(opt.epochs) + "  train " +
                         std::to_string(es.train_bits_per_node) + " bits/node";
      if (!val_w.empty())
        line += "  val " + std::to_string(es.val_bits_per_node) + " bits/node";
      std::fputs((line + "\n").c_str(), stderr);
    }
  }
  return stats;
}

struct GradCheckResult {
  double max_rel_error = 0;
  int checked = 0;
};

// Central finite differences against the analytic gradient on one window.
inline GradCheckResult grad_check(ModelParams& p, const ContextWindow& w,
                                  int samples, uint64_t seed,
                                  double h = 1e-5) {
  TrainWorkspace ws;
  GradAcc g = make_grads(p);
  window_forward(p, w, ws);
  window_backward(p, w, ws, 1.0, g);

  Rng rng(seed);
  GradCheckResult res;
  for (int s = 0; s < samples; ++s) {
    const size_t ti = rng.below(p.t.size());
    const size_t j = rng.below(p.t[ti].size());
    double& ref = p.t[ti].v[j];
    const double saved = ref;
    ref = saved + h;
    const double lp = window_forward(p, w, ws);
    ref = saved - h;
    const double lm = window_forward(p, w, ws);
    ref = saved;
    const double fd = (lp - lm) / (2.0 * h);
    const double an = g[ti][j];
    const double denom = std::max(std::abs(fd), std::abs(an));
    const double rel = denom < 1e-8 ? 0.0 : std::abs(fd - an) / denom;
    res.max_rel_error = std::max(res.max_rel_error, rel);
    ++res.checked;
  }
  return res;
}

}  // namespace opcc
