#pragma once

// Independent brute-force reference implementations used only by tests.
// Deliberately written with different structure from the library code
// (explicit padding buffers, different loop orders, long-double sums) so a
// shared bug is unlikely to hide in both.

#include <functional>
#include <vector>

#include "smallbig/ops.hpp"

namespace oracle {

using smallbig::ConvSpec;
using smallbig::kGlobal;
using smallbig::PoolMode;
using smallbig::PoolSpec;
using smallbig::Shape5;
using smallbig::Tensor5;

/// Convolution by explicit zero-padding then direct summation, accumulating
/// over kernel taps before channels (library loops channels first).
template <class T>
Tensor5<T> conv3d_ref(const Tensor5<T>& x, const ConvSpec& sp,
                      const Tensor5<T>& w, const Tensor5<T>* bias = nullptr) {
  const Shape5& in = x.shape();
  Tensor5<T> padded(in.n, in.c, in.t + 2 * sp.pt, in.h + 2 * sp.ph,
                    in.w + 2 * sp.pw);
  for (int64_t n = 0; n < in.n; ++n)
    for (int64_t c = 0; c < in.c; ++c)
      for (int64_t t = 0; t < in.t; ++t)
        for (int64_t h = 0; h < in.h; ++h)
          for (int64_t wd = 0; wd < in.w; ++wd)
            padded.at(n, c, t + sp.pt, h + sp.ph, wd + sp.pw) =
                x.at(n, c, t, h, wd);
  Shape5 os = sp.out_shape(in);
  Tensor5<T> y(os);
  for (int64_t n = 0; n < os.n; ++n)
    for (int64_t co = 0; co < os.c; ++co)
      for (int64_t to = 0; to < os.t; ++to)
        for (int64_t ho = 0; ho < os.h; ++ho)
          for (int64_t wo = 0; wo < os.w; ++wo) {
            long double acc = 0;
            for (int64_t kt = 0; kt < sp.kt; ++kt)
              for (int64_t kh = 0; kh < sp.kh; ++kh)
                for (int64_t kw = 0; kw < sp.kw; ++kw)
                  for (int64_t ci = 0; ci < sp.in_channels; ++ci)
                    acc += (long double)(padded.at(n, ci, to * sp.st + kt,
                                                   ho * sp.sh + kh,
                                                   wo * sp.sw + kw)) *
                           (long double)(w.at(co, ci, kt, kh, kw));
            if (bias) acc += (long double)((*bias)[co]);
            y.at(n, co, to, ho, wo) = T(double(acc));
          }
  return y;
}

/// Same-size pooling by collecting every in-range window member into a list.
template <class T>
Tensor5<T> pool3d_ref(const Tensor5<T>& x, const PoolSpec& sp) {
  const Shape5& s = x.shape();
  Tensor5<T> y(s);
  auto half = [](int64_t win, int64_t extent) -> int64_t {
    return win == kGlobal ? extent : (win - 1) / 2;
  };
  const int64_t rt = half(sp.wt, s.t), rh = half(sp.wh, s.h),
                rw = half(sp.ww, s.w);
  for (int64_t n = 0; n < s.n; ++n)
    for (int64_t c = 0; c < s.c; ++c)
      for (int64_t t = 0; t < s.t; ++t)
        for (int64_t h = 0; h < s.h; ++h)
          for (int64_t w = 0; w < s.w; ++w) {
            std::vector<T> members;
            for (int64_t tt = t - rt; tt <= t + rt; ++tt)
              for (int64_t hh = h - rh; hh <= h + rh; ++hh)
                for (int64_t ww = w - rw; ww <= w + rw; ++ww)
                  if (tt >= 0 && tt < s.t && hh >= 0 && hh < s.h && ww >= 0 &&
                      ww < s.w)
                    members.push_back(x.at(n, c, tt, hh, ww));
            if (sp.mode == PoolMode::Max) {
              T best = members[0];
              for (T v : members) best = std::max(best, v);
              y.at(n, c, t, h, w) = best;
            } else {
              long double sum = 0;
              for (T v : members) sum += (long double)(v);
              y.at(n, c, t, h, w) = T(double(sum / (long double)(members.size())));
            }
          }
  return y;
}

/// Temporal mixing written directly from its three-term definition:
/// y_t = Tb x_t + Ta x_{t-1} + Tc x_{t+1} (missing neighbors contribute 0).
template <class T>
Tensor5<T> temconv_ref(const Tensor5<T>& x, const Tensor5<T>& ta,
                       const Tensor5<T>& tb, const Tensor5<T>& tc) {
  const Shape5& s = x.shape();
  const int64_t out = tb.shape().n;
  Tensor5<T> y(s.n, out, s.t, s.h, s.w);
  for (int64_t n = 0; n < s.n; ++n)
    for (int64_t o = 0; o < out; ++o)
      for (int64_t t = 0; t < s.t; ++t)
        for (int64_t h = 0; h < s.h; ++h)
          for (int64_t w = 0; w < s.w; ++w) {
            long double acc = 0;
            for (int64_t c = 0; c < s.c; ++c) {
              acc += (long double)(tb.at(o, c, 0, 0, 0)) *
                     (long double)(x.at(n, c, t, h, w));
              if (t - 1 >= 0)
                acc += (long double)(ta.at(o, c, 0, 0, 0)) *
                       (long double)(x.at(n, c, t - 1, h, w));
              if (t + 1 < s.t)
                acc += (long double)(tc.at(o, c, 0, 0, 0)) *
                       (long double)(x.at(n, c, t + 1, h, w));
            }
            y.at(n, o, t, h, w) = T(double(acc));
          }
  return y;
}

/// Residual attention by per-position-pair double loop.
template <class T>
Tensor5<T> nonlocal_ref(const Tensor5<T>& x, const Tensor5<T>& vt,
                        const Tensor5<T>& vp, const Tensor5<T>& vg,
                        const Tensor5<T>& vo) {
  const Shape5& s = x.shape();
  const int64_t C = s.c, E = vt.shape().n, P = s.t * s.h * s.w;
  Tensor5<T> y = x;
  auto emb = [&](const Tensor5<T>& w, int64_t n, int64_t k, int64_t i) {
    long double a = 0;
    for (int64_t c = 0; c < C; ++c)
      a += (long double)(w.at(k, c, 0, 0, 0)) *
           (long double)(x[x.offset(n, c, 0, 0, 0) + i]);
    return a;
  };
  for (int64_t n = 0; n < s.n; ++n)
    for (int64_t i = 0; i < P; ++i) {
      // softmax over j of <theta_i, phi_j>
      std::vector<long double> logit(size_t(P), 0.0L);
      long double mx = -1e30L;
      for (int64_t j = 0; j < P; ++j) {
        long double d = 0;
        for (int64_t k = 0; k < E; ++k) d += emb(vt, n, k, i) * emb(vp, n, k, j);
        logit[size_t(j)] = d;
        mx = std::max(mx, d);
      }
      long double z = 0;
      for (int64_t j = 0; j < P; ++j) {
        logit[size_t(j)] = std::exp(double(logit[size_t(j)] - mx));
        z += logit[size_t(j)];
      }
      for (int64_t c = 0; c < C; ++c) {
        long double acc = 0;
        for (int64_t j = 0; j < P; ++j)
          for (int64_t k = 0; k < E; ++k)
            acc += (logit[size_t(j)] / z) * (long double)(vo.at(c, k, 0, 0, 0)) *
                   emb(vg, n, k, j);
        y[y.offset(n, c, 0, 0, 0) + i] += T(double(acc));
      }
    }
  return y;
}

/// Central finite difference of scalar(theta) at every coordinate of theta.
inline std::vector<double> central_diff(
    std::vector<double>& theta, const std::function<double()>& scalar,
    double step = 1e-5) {
  std::vector<double> g(theta.size());
  for (size_t i = 0; i < theta.size(); ++i) {
    const double keep = theta[i];
    theta[i] = keep + step;
    const double up = scalar();
    theta[i] = keep - step;
    const double dn = scalar();
    theta[i] = keep;
    g[i] = (up - dn) / (2 * step);
  }
  return g;
}

}  // namespace oracle
