#pragma once

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "smallbig/tensor.hpp"

namespace smallbig {

/// Axis extent that pools over the full feature-map extent.
inline constexpr int64_t kGlobal = -1;

struct ConvSpec {
  int64_t in_channels = 0, out_channels = 0;
  int64_t kt = 1, kh = 1, kw = 1;
  int64_t st = 1, sh = 1, sw = 1;
  int64_t pt = 0, ph = 0, pw = 0;
  bool has_bias = false;

  Shape5 weight_shape() const {
    return {out_channels, in_channels, kt, kh, kw};
  }

  static int64_t out_dim(int64_t in, int64_t p, int64_t k, int64_t s) {
    return (in + 2 * p - k) / s + 1;
  }

  Shape5 out_shape(const Shape5& in) const {
    if (in.c != in_channels)
      throw ShapeError("conv3d: input has " + std::to_string(in.c) +
                       " channels, spec expects " + std::to_string(in_channels));
    Shape5 out{in.n, out_channels, out_dim(in.t, pt, kt, st),
               out_dim(in.h, ph, kh, sh), out_dim(in.w, pw, kw, sw)};
    if (out.t <= 0 || out.h <= 0 || out.w <= 0)
      throw ShapeError("conv3d: non-positive output dims for input " + in.str());
    return out;
  }

  int64_t weight_count() const {
    return out_channels * in_channels * kt * kh * kw;
  }
  /// MACs for one forward application on `in` (zero-padded positions count).
  int64_t macs(const Shape5& in) const {
    Shape5 o = out_shape(in);
    return o.numel() * in_channels * kt * kh * kw;
  }
};

enum class PoolMode { Max, Avg };

/// Same-size pooling: stride 1, centered window, boundary truncation.
struct PoolSpec {
  int64_t wt = 1, wh = 1, ww = 1;  // any axis may be kGlobal
  PoolMode mode = PoolMode::Max;

  void validate() const {
    for (int64_t v : {wt, wh, ww})
      if (v != kGlobal && (v < 1 || v % 2 == 0))
        throw ShapeError("pool3d: window axes must be odd or GLOBAL");
  }
};

/// Multiply-accumulate counter, bumped by every conv/linear/matmul forward.
/// Used to cross-check the analytic FLOP model against an executed pass.
inline std::atomic<uint64_t>& mac_counter() {
  static std::atomic<uint64_t> c{0};
  return c;
}
inline void reset_mac_counter() { mac_counter().store(0); }
inline uint64_t mac_count() { return mac_counter().load(); }

// ---------------------------------------------------------------------------
// conv3d

template <class T>
Tensor5<T> conv3d(const Tensor5<T>& x, const ConvSpec& spec,
                  const Tensor5<T>& weight, const Tensor5<T>* bias = nullptr) {
  if (weight.shape() != spec.weight_shape())
    throw ShapeError("conv3d: weight shape " + weight.shape().str() +
                     " does not match spec " + spec.weight_shape().str());
  const Shape5& in = x.shape();
  Shape5 os = spec.out_shape(in);
  Tensor5<T> y(os);
  mac_counter().fetch_add(uint64_t(spec.macs(in)), std::memory_order_relaxed);

  const int64_t C = spec.in_channels;
#pragma omp parallel for collapse(2) schedule(static)
  for (int64_t n = 0; n < os.n; ++n)
    for (int64_t co = 0; co < os.c; ++co) {
      for (int64_t to = 0; to < os.t; ++to)
        for (int64_t ho = 0; ho < os.h; ++ho)
          for (int64_t wo = 0; wo < os.w; ++wo) {
            double acc = 0;
            const int64_t t0 = to * spec.st - spec.pt;
            const int64_t h0 = ho * spec.sh - spec.ph;
            const int64_t w0 = wo * spec.sw - spec.pw;
            for (int64_t ci = 0; ci < C; ++ci)
              for (int64_t kt = 0; kt < spec.kt; ++kt) {
                const int64_t ti = t0 + kt;
                if (ti < 0 || ti >= in.t) continue;
                for (int64_t kh = 0; kh < spec.kh; ++kh) {
                  const int64_t hi = h0 + kh;
                  if (hi < 0 || hi >= in.h) continue;
                  for (int64_t kw = 0; kw < spec.kw; ++kw) {
                    const int64_t wi = w0 + kw;
                    if (wi < 0 || wi >= in.w) continue;
                    acc += double(x.at(n, ci, ti, hi, wi)) *
                           double(weight.at(co, ci, kt, kh, kw));
                  }
                }
              }
            if (bias) acc += double((*bias)[co]);
            y.at(n, co, to, ho, wo) = T(acc);
          }
    }
  return y;
}

/// Gradients of conv3d. Gather-form loops: every output element of every
/// gradient tensor is written by exactly one task, so results are bitwise
/// independent of thread count.
template <class T>
struct Conv3dGrads {
  Tensor5<T> gx, gw, gb;
};

template <class T>
Conv3dGrads<T> conv3d_backward(const Tensor5<T>& x, const ConvSpec& spec,
                               const Tensor5<T>& weight, const Tensor5<T>& gy) {
  const Shape5& in = x.shape();
  Shape5 os = spec.out_shape(in);
  if (gy.shape() != os)
    throw ShapeError("conv3d_backward: upstream shape " + gy.shape().str() +
                     " does not match output " + os.str());
  Conv3dGrads<T> g;
  g.gx = Tensor5<T>(in);
  g.gw = Tensor5<T>(spec.weight_shape());
  if (spec.has_bias) g.gb = Tensor5<T>(Shape5{1, spec.out_channels, 1, 1, 1});

  // d(loss)/d(x): for each input element gather contributions from outputs.
#pragma omp parallel for collapse(2) schedule(static)
  for (int64_t n = 0; n < in.n; ++n)
    for (int64_t ci = 0; ci < in.c; ++ci)
      for (int64_t ti = 0; ti < in.t; ++ti)
        for (int64_t hi = 0; hi < in.h; ++hi)
          for (int64_t wi = 0; wi < in.w; ++wi) {
            double acc = 0;
            for (int64_t kt = 0; kt < spec.kt; ++kt) {
              const int64_t tn = ti + spec.pt - kt;
              if (tn < 0 || tn % spec.st) continue;
              const int64_t to = tn / spec.st;
              if (to >= os.t) continue;
              for (int64_t kh = 0; kh < spec.kh; ++kh) {
                const int64_t hn = hi + spec.ph - kh;
                if (hn < 0 || hn % spec.sh) continue;
                const int64_t ho = hn / spec.sh;
                if (ho >= os.h) continue;
                for (int64_t kw = 0; kw < spec.kw; ++kw) {
                  const int64_t wn = wi + spec.pw - kw;
                  if (wn < 0 || wn % spec.sw) continue;
                  const int64_t wo = wn / spec.sw;
                  if (wo >= os.w) continue;
                  for (int64_t co = 0; co < os.c; ++co)
                    acc += double(gy.at(n, co, to, ho, wo)) *
                           double(weight.at(co, ci, kt, kh, kw));
                }
              }
            }
            g.gx.at(n, ci, ti, hi, wi) = T(acc);
          }

  // d(loss)/d(weight)
#pragma omp parallel for collapse(2) schedule(static)
  for (int64_t co = 0; co < spec.out_channels; ++co)
    for (int64_t ci = 0; ci < spec.in_channels; ++ci)
      for (int64_t kt = 0; kt < spec.kt; ++kt)
        for (int64_t kh = 0; kh < spec.kh; ++kh)
          for (int64_t kw = 0; kw < spec.kw; ++kw) {
            double acc = 0;
            for (int64_t n = 0; n < os.n; ++n)
              for (int64_t to = 0; to < os.t; ++to) {
                const int64_t ti = to * spec.st - spec.pt + kt;
                if (ti < 0 || ti >= in.t) continue;
                for (int64_t ho = 0; ho < os.h; ++ho) {
                  const int64_t hi = ho * spec.sh - spec.ph + kh;
                  if (hi < 0 || hi >= in.h) continue;
                  for (int64_t wo = 0; wo < os.w; ++wo) {
                    const int64_t wi = wo * spec.sw - spec.pw + kw;
                    if (wi < 0 || wi >= in.w) continue;
                    acc += double(gy.at(n, co, to, ho, wo)) *
                           double(x.at(n, ci, ti, hi, wi));
                  }
                }
              }
            g.gw.at(co, ci, kt, kh, kw) = T(acc);
          }

  if (spec.has_bias) {
#pragma omp parallel for schedule(static)
    for (int64_t co = 0; co < spec.out_channels; ++co) {
      double acc = 0;
      for (int64_t n = 0; n < os.n; ++n)
        for (int64_t to = 0; to < os.t; ++to)
          for (int64_t ho = 0; ho < os.h; ++ho)
            for (int64_t wo = 0; wo < os.w; ++wo)
              acc += double(gy.at(n, co, to, ho, wo));
      g.gb[co] = T(acc);
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// pool3d

template <class T>
struct Pool3dResult {
  Tensor5<T> y;
  // Flat (t,h,w) index of the argmax per output element; empty for avg.
  std::vector<int32_t> argmax;
};

template <class T>
Pool3dResult<T> pool3d(const Tensor5<T>& x, const PoolSpec& spec) {
  spec.validate();
  const Shape5& s = x.shape();
  Pool3dResult<T> r;
  r.y = Tensor5<T>(s);
  const bool is_max = spec.mode == PoolMode::Max;
  if (is_max) r.argmax.assign(size_t(s.numel()), -1);

  const int64_t rt = spec.wt == kGlobal ? -1 : (spec.wt - 1) / 2;
  const int64_t rh = spec.wh == kGlobal ? -1 : (spec.wh - 1) / 2;
  const int64_t rw = spec.ww == kGlobal ? -1 : (spec.ww - 1) / 2;

#pragma omp parallel for collapse(2) schedule(static)
  for (int64_t n = 0; n < s.n; ++n)
    for (int64_t c = 0; c < s.c; ++c)
      for (int64_t t = 0; t < s.t; ++t) {
        const int64_t t0 = rt < 0 ? 0 : std::max<int64_t>(0, t - rt);
        const int64_t t1 = rt < 0 ? s.t - 1 : std::min(s.t - 1, t + rt);
        for (int64_t h = 0; h < s.h; ++h) {
          const int64_t h0 = rh < 0 ? 0 : std::max<int64_t>(0, h - rh);
          const int64_t h1 = rh < 0 ? s.h - 1 : std::min(s.h - 1, h + rh);
          for (int64_t w = 0; w < s.w; ++w) {
            const int64_t w0 = rw < 0 ? 0 : std::max<int64_t>(0, w - rw);
            const int64_t w1 = rw < 0 ? s.w - 1 : std::min(s.w - 1, w + rw);
            if (is_max) {
              T best = -std::numeric_limits<T>::infinity();
              int32_t best_idx = -1;
              // First index in (t,h,w) scan order wins on ties.
              for (int64_t tt = t0; tt <= t1; ++tt)
                for (int64_t hh = h0; hh <= h1; ++hh)
                  for (int64_t ww = w0; ww <= w1; ++ww) {
                    T v = x.at(n, c, tt, hh, ww);
                    if (v > best) {
                      best = v;
                      best_idx = int32_t((tt * s.h + hh) * s.w + ww);
                    }
                  }
              r.y.at(n, c, t, h, w) = best;
              r.argmax[size_t(r.y.offset(n, c, t, h, w))] = best_idx;
            } else {
              double acc = 0;
              int64_t cnt = 0;
              for (int64_t tt = t0; tt <= t1; ++tt)
                for (int64_t hh = h0; hh <= h1; ++hh)
                  for (int64_t ww = w0; ww <= w1; ++ww) {
                    acc += double(x.at(n, c, tt, hh, ww));
                    ++cnt;
                  }
              r.y.at(n, c, t, h, w) = T(acc / double(cnt));
            }
          }
        }
      }
  return r;
}

template <class T>
Tensor5<T> pool3d_backward(const Tensor5<T>& x, const PoolSpec& spec,
                           const Pool3dResult<T>& saved, const Tensor5<T>& gy) {
  const Shape5& s = x.shape();
  if (gy.shape() != s) throw ShapeError("pool3d_backward: shape mismatch");
  Tensor5<T> gx(s);
  if (spec.mode == PoolMode::Max) {
    // Gather per input element: sum upstream over outputs whose argmax is it.
    const int64_t rt = spec.wt == kGlobal ? -1 : (spec.wt - 1) / 2;
    const int64_t rh = spec.wh == kGlobal ? -1 : (spec.wh - 1) / 2;
    const int64_t rw = spec.ww == kGlobal ? -1 : (spec.ww - 1) / 2;
#pragma omp parallel for collapse(2) schedule(static)
    for (int64_t n = 0; n < s.n; ++n)
      for (int64_t c = 0; c < s.c; ++c)
        for (int64_t ti = 0; ti < s.t; ++ti) {
          const int64_t t0 = rt < 0 ? 0 : std::max<int64_t>(0, ti - rt);
          const int64_t t1 = rt < 0 ? s.t - 1 : std::min(s.t - 1, ti + rt);
          for (int64_t hi = 0; hi < s.h; ++hi) {
            const int64_t h0 = rh < 0 ? 0 : std::max<int64_t>(0, hi - rh);
            const int64_t h1 = rh < 0 ? s.h - 1 : std::min(s.h - 1, hi + rh);
            for (int64_t wi = 0; wi < s.w; ++wi) {
              const int64_t w0 = rw < 0 ? 0 : std::max<int64_t>(0, wi - rw);
              const int64_t w1 = rw < 0 ? s.w - 1 : std::min(s.w - 1, wi + rw);
              const int32_t me = int32_t((ti * s.h + hi) * s.w + wi);
              double acc = 0;
              // Outputs that could select (ti,hi,wi) are those whose window
              // contains it; the window relation is symmetric.
              for (int64_t to = t0; to <= t1; ++to)
                for (int64_t ho = h0; ho <= h1; ++ho)
                  for (int64_t wo = w0; wo <= w1; ++wo)
                    if (saved.argmax[size_t(gy.offset(n, c, to, ho, wo))] == me)
                      acc += double(gy.at(n, c, to, ho, wo));
              gx.at(n, c, ti, hi, wi) = T(acc);
            }
          }
        }
  } else {
    const int64_t rt = spec.wt == kGlobal ? -1 : (spec.wt - 1) / 2;
    const int64_t rh = spec.wh == kGlobal ? -1 : (spec.wh - 1) / 2;
    const int64_t rw = spec.ww == kGlobal ? -1 : (spec.ww - 1) / 2;
#pragma omp parallel for collapse(2) schedule(static)
    for (int64_t n = 0; n < s.n; ++n)
      for (int64_t c = 0; c < s.c; ++c)
        for (int64_t ti = 0; ti < s.t; ++ti) {
          const int64_t t0 = rt < 0 ? 0 : std::max<int64_t>(0, ti - rt);
          const int64_t t1 = rt < 0 ? s.t - 1 : std::min(s.t - 1, ti + rt);
          for (int64_t hi = 0; hi < s.h; ++hi) {
            const int64_t h0 = rh < 0 ? 0 : std::max<int64_t>(0, hi - rh);
            const int64_t h1 = rh < 0 ? s.h - 1 : std::min(s.h - 1, hi + rh);
            for (int64_t wi = 0; wi < s.w; ++wi) {
              const int64_t w0 = rw < 0 ? 0 : std::max<int64_t>(0, wi - rw);
              const int64_t w1 = rw < 0 ? s.w - 1 : std::min(s.w - 1, wi + rw);
              double acc = 0;
              for (int64_t to = t0; to <= t1; ++to) {
                const int64_t ct = rt < 0 ? s.t
                                          : std::min(s.t - 1, to + rt) -
                                                std::max<int64_t>(0, to - rt) + 1;
                for (int64_t ho = h0; ho <= h1; ++ho) {
                  const int64_t ch = rh < 0 ? s.h
                                            : std::min(s.h - 1, ho + rh) -
                                                  std::max<int64_t>(0, ho - rh) + 1;
                  for (int64_t wo = w0; wo <= w1; ++wo) {
                    const int64_t cw = rw < 0 ? s.w
                                              : std::min(s.w - 1, wo + rw) -
                                                    std::max<int64_t>(0, wo - rw) + 1;
                    acc += double(gy.at(n, c, to, ho, wo)) / double(ct * ch * cw);
                  }
                }
              }
              gx.at(n, c, ti, hi, wi) = T(acc);
            }
          }
        }
  }
  return gx;
}

// ---------------------------------------------------------------------------
// activations and small reductions

template <class T>
Tensor5<T> relu(const Tensor5<T>& x) {
  Tensor5<T> y(x.shape());
  const int64_t n = x.numel();
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < n; ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
  return y;
}

template <class T>
Tensor5<T> relu_backward(const Tensor5<T>& x, const Tensor5<T>& gy) {
  Tensor5<T> gx(x.shape());
  const int64_t n = x.numel();
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < n; ++i) gx[i] = x[i] > T(0) ? gy[i] : T(0);
  return gx;
}

template <class T>
Tensor5<T> sigmoid(const Tensor5<T>& x) {
  Tensor5<T> y(x.shape());
  for (int64_t i = 0; i < x.numel(); ++i)
    y[i] = T(1.0 / (1.0 + std::exp(-double(x[i]))));
  return y;
}

template <class T>
Tensor5<T> sigmoid_backward(const Tensor5<T>& y, const Tensor5<T>& gy) {
  Tensor5<T> gx(y.shape());
  for (int64_t i = 0; i < y.numel(); ++i)
    gx[i] = T(double(gy[i]) * double(y[i]) * (1.0 - double(y[i])));
  return gx;
}

/// Softmax over the channel axis.
template <class T>
Tensor5<T> softmax_channels(const Tensor5<T>& x) {
  const Shape5& s = x.shape();
  Tensor5<T> y(s);
  for (int64_t n = 0; n < s.n; ++n)
    for (int64_t t = 0; t < s.t; ++t)
      for (int64_t h = 0; h < s.h; ++h)
        for (int64_t w = 0; w < s.w; ++w) {
          double mx = -std::numeric_limits<double>::infinity();
          for (int64_t c = 0; c < s.c; ++c)
            mx = std::max(mx, double(x.at(n, c, t, h, w)));
          double sum = 0;
          for (int64_t c = 0; c < s.c; ++c)
            sum += std::exp(double(x.at(n, c, t, h, w)) - mx);
          for (int64_t c = 0; c < s.c; ++c)
            y.at(n, c, t, h, w) =
                T(std::exp(double(x.at(n, c, t, h, w)) - mx) / sum);
        }
  return y;
}

/// Reduce (T,H,W) to (1,1,1) by mean.
template <class T>
Tensor5<T> global_avg_pool(const Tensor5<T>& x) {
  const Shape5& s = x.shape();
  Tensor5<T> y(s.n, s.c, 1, 1, 1);
  const double inv = 1.0 / double(s.t * s.h * s.w);
  for (int64_t n = 0; n < s.n; ++n)
    for (int64_t c = 0; c < s.c; ++c) {
      double acc = 0;
      for (int64_t t = 0; t < s.t; ++t)
        for (int64_t h = 0; h < s.h; ++h)
          for (int64_t w = 0; w < s.w; ++w) acc += double(x.at(n, c, t, h, w));
      y.at(n, c, 0, 0, 0) = T(acc * inv);
    }
  return y;
}

template <class T>
Tensor5<T> global_avg_pool_backward(const Shape5& in_shape, const Tensor5<T>& gy) {
  Tensor5<T> gx(in_shape);
  const double inv = 1.0 / double(in_shape.t * in_shape.h * in_shape.w);
  for (int64_t n = 0; n < in_shape.n; ++n)
    for (int64_t c = 0; c < in_shape.c; ++c) {
      const T g = T(double(gy.at(n, c, 0, 0, 0)) * inv);
      for (int64_t t = 0; t < in_shape.t; ++t)
        for (int64_t h = 0; h < in_shape.h; ++h)
          for (int64_t w = 0; w < in_shape.w; ++w) gx.at(n, c, t, h, w) = g;
    }
  return gx;
}

/// Reduce (T,H,W) to (1,1,1) by max; saves argmax for backward.
template <class T>
struct GlobalMaxResult {
  Tensor5<T> y;
  std::vector<int32_t> argmax;  // flat (t,h,w) index per (n,c)
};

template <class T>
GlobalMaxResult<T> global_max_pool(const Tensor5<T>& x) {
  const Shape5& s = x.shape();
  GlobalMaxResult<T> r;
  r.y = Tensor5<T>(s.n, s.c, 1, 1, 1);
  r.argmax.assign(size_t(s.n * s.c), -1);
  for (int64_t n = 0; n < s.n; ++n)
    for (int64_t c = 0; c < s.c; ++c) {
      T best = -std::numeric_limits<T>::infinity();
      int32_t best_idx = -1;
      for (int64_t t = 0; t < s.t; ++t)
        for (int64_t h = 0; h < s.h; ++h)
          for (int64_t w = 0; w < s.w; ++w) {
            T v = x.at(n, c, t, h, w);
            if (v > best) {
              best = v;
              best_idx = int32_t((t * s.h + h) * s.w + w);
            }
          }
      r.y.at(n, c, 0, 0, 0) = best;
      r.argmax[size_t(n * s.c + c)] = best_idx;
    }
  return r;
}

template <class T>
Tensor5<T> global_max_pool_backward(const Shape5& in_shape,
                                    const GlobalMaxResult<T>& saved,
                                    const Tensor5<T>& gy) {
  Tensor5<T> gx(in_shape);
  for (int64_t n = 0; n < in_shape.n; ++n)
    for (int64_t c = 0; c < in_shape.c; ++c) {
      const int32_t idx = saved.argmax[size_t(n * in_shape.c + c)];
      const int64_t t = idx / (in_shape.h * in_shape.w);
      const int64_t h = (idx / in_shape.w) % in_shape.h;
      const int64_t w = idx % in_shape.w;
      gx.at(n, c, t, h, w) = gy.at(n, c, 0, 0, 0);
    }
  return gx;
}

/// Fully connected map on (N,C,1,1,1) tensors: y = W x + b, W is (out,in).
template <class T>
Tensor5<T> linear(const Tensor5<T>& x, const Tensor5<T>& weight,
                  const Tensor5<T>* bias = nullptr) {
  const Shape5& s = x.shape();
  const int64_t out = weight.shape().n, in = weight.shape().c;
  if (s.c != in || s.t != 1 || s.h != 1 || s.w != 1)
    throw ShapeError("linear: input must be (N," + std::to_string(in) + ",1,1,1)");
  Tensor5<T> y(s.n, out, 1, 1, 1);
  mac_counter().fetch_add(uint64_t(s.n * out * in), std::memory_order_relaxed);
#pragma omp parallel for collapse(2) schedule(static)
  for (int64_t n = 0; n < s.n; ++n)
    for (int64_t o = 0; o < out; ++o) {
      double acc = bias ? double((*bias)[o]) : 0.0;
      for (int64_t i = 0; i < in; ++i)
        acc += double(weight.at(o, i, 0, 0, 0)) * double(x.at(n, i, 0, 0, 0));
      y.at(n, o, 0, 0, 0) = T(acc);
    }
  return y;
}

template <class T>
struct LinearGrads {
  Tensor5<T> gx, gw, gb;
};

template <class T>
LinearGrads<T> linear_backward(const Tensor5<T>& x, const Tensor5<T>& weight,
                               bool has_bias, const Tensor5<T>& gy) {
  const Shape5& s = x.shape();
  const int64_t out = weight.shape().n, in = weight.shape().c;
  LinearGrads<T> g;
  g.gx = Tensor5<T>(s);
  g.gw = Tensor5<T>(weight.shape());
  if (has_bias) g.gb = Tensor5<T>(Shape5{1, out, 1, 1, 1});
  for (int64_t n = 0; n < s.n; ++n)
    for (int64_t i = 0; i < in; ++i) {
      double acc = 0;
      for (int64_t o = 0; o < out; ++o)
        acc += double(gy.at(n, o, 0, 0, 0)) * double(weight.at(o, i, 0, 0, 0));
      g.gx.at(n, i, 0, 0, 0) = T(acc);
    }
  for (int64_t o = 0; o < out; ++o)
    for (int64_t i = 0; i < in; ++i) {
      double acc = 0;
      for (int64_t n = 0; n < s.n; ++n)
        acc += double(gy.at(n, o, 0, 0, 0)) * double(x.at(n, i, 0, 0, 0));
      g.gw.at(o, i, 0, 0, 0) = T(acc);
    }
  if (has_bias)
    for (int64_t o = 0; o < out; ++o) {
      double acc = 0;
      for (int64_t n = 0; n < s.n; ++n) acc += double(gy.at(n, o, 0, 0, 0));
      g.gb[o] = T(acc);
    }
  return g;
}

template <class T>
Tensor5<T> add(const Tensor5<T>& a, const Tensor5<T>& b) {
  if (a.shape() != b.shape())
    throw ShapeError("add: shape mismatch " + a.shape().str() + " vs " +
                     b.shape().str());
  Tensor5<T> y(a.shape());
  const int64_t n = a.numel();
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < n; ++i) y[i] = a[i] + b[i];
  return y;
}

}  // namespace smallbig
