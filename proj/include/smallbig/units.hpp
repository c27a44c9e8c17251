#pragma once

#include <memory>
#include <string>
#include <vector>

#include "smallbig/layers.hpp"

namespace smallbig {

enum class BnPolicy { Individual, Single };

/// Temporal convolution: y_t = Tb x_t + Ta x_{t-1} + Tc x_{t+1} per spatial
/// location. Each T* is a pointwise (out,in) filter. Equivalent to a 3x1x1
/// convolution with temporal zero-padding 1.
template <class T>
Tensor5<T> temconv_unit(const Tensor5<T>& x, const Tensor5<T>& theta_prev,
                        const Tensor5<T>& theta_center,
                        const Tensor5<T>& theta_next) {
  const int64_t out = theta_center.shape().n, in = theta_center.shape().c;
  ConvSpec spec{.in_channels = in, .out_channels = out, .kt = 3, .pt = 1};
  Tensor5<T> weight(spec.weight_shape());
  for (int64_t o = 0; o < out; ++o)
    for (int64_t i = 0; i < in; ++i) {
      weight.at(o, i, 0, 0, 0) = theta_prev.at(o, i, 0, 0, 0);
      weight.at(o, i, 1, 0, 0) = theta_center.at(o, i, 0, 0, 0);
      weight.at(o, i, 2, 0, 0) = theta_next.at(o, i, 0, 0, 0);
    }
  return conv3d(x, spec, weight);
}

// ---------------------------------------------------------------------------

/// Two-view context aggregation: a small view (pointwise conv of the center
/// feature) summed with a big view (conv of the max-pooled tube around it).
///
/// bn_policy Individual:  y = BN(conv(x)) + BN'(conv'(maxpool(x)))
/// bn_policy Single:      y = BN(conv(x + maxpool(x)))   (requires sharing)
template <class T>
class SmallBigUnit final : public Node<T> {
 public:
  SmallBigUnit(std::string conv_name, std::string bn_name, ConvSpec conv,
               PoolSpec pool, bool share, BnPolicy policy,
               bool big_bn_zero_init, ParamStore<T>& store)
      : conv_(conv), pool_(pool), share_(share), policy_(policy) {
    this->name = conv_name;
    pool_.validate();
    if (policy_ == BnPolicy::Single && !share_)
      throw ConfigError(this->name +
                        ": single BN policy requires parameter sharing");
    w_small_ = store.add(conv_name + ".w", conv_.weight_shape(), true, true);
    if (share_)
      w_big_ = store.share(conv_name + ".w_big", w_small_);
    else
      w_big_ = store.add(conv_name + ".w_big", conv_.weight_shape(), true, true);
    bn_small_ = std::make_unique<BatchNormNode<T>>(bn_name, conv_.out_channels,
                                                   store, 1.0);
    if (policy_ == BnPolicy::Individual)
      bn_big_ = std::make_unique<BatchNormNode<T>>(
          bn_name + "_big", conv_.out_channels, store,
          big_bn_zero_init ? 0.0 : 1.0);
  }

  Tensor5<T> forward(const Tensor5<T>& x, bool train) override {
    x_ = x;
    pooled_ = pool3d(x, pool_);
    if (policy_ == BnPolicy::Individual) {
      Tensor5<T> small = conv3d(x, conv_, w_small_->value);
      Tensor5<T> big = conv3d(pooled_.y, conv_, w_big_->value);
      return add(bn_small_->forward(small, train), bn_big_->forward(big, train));
    }
    sum_ = add(x, pooled_.y);
    return bn_small_->forward(conv3d(sum_, conv_, w_small_->value), train);
  }

  Tensor5<T> backward(const Tensor5<T>& gy) override {
    if (policy_ == BnPolicy::Individual) {
      Tensor5<T> g_small = bn_small_->backward(gy);
      Tensor5<T> g_big = bn_big_->backward(gy);
      auto gs = conv3d_backward(x_, conv_, w_small_->value, g_small);
      auto gb = conv3d_backward(pooled_.y, conv_, w_big_->value, g_big);
      accumulate(w_small_->grad, gs.gw);
      accumulate(w_big_->grad, gb.gw);
      Tensor5<T> g_from_pool = pool3d_backward(x_, pool_, pooled_, gb.gx);
      return add(gs.gx, g_from_pool);
    }
    Tensor5<T> g_conv = bn_small_->backward(gy);
    auto gs = conv3d_backward(sum_, conv_, w_small_->value, g_conv);
    accumulate(w_small_->grad, gs.gw);
    Tensor5<T> g_from_pool = pool3d_backward(x_, pool_, pooled_, gs.gx);
    return add(gs.gx, g_from_pool);
  }

  Shape5 out_shape(const Shape5& in) const override { return conv_.out_shape(in); }

  void count(const Shape5& in, std::vector<CountRow>& rows) const override {
    const int64_t w = conv_.weight_count();
    const int64_t macs = conv_.macs(in);
    if (policy_ == BnPolicy::Individual) {
      rows.push_back({this->name + ".small", "conv", w, macs});
      rows.push_back({this->name + ".big", "conv", share_ ? 0 : w, macs});
      bn_small_->count(in, rows);
      bn_big_->count(in, rows);
    } else {
      rows.push_back({this->name, "conv", w, macs});
      bn_small_->count(in, rows);
    }
  }

  BatchNormNode<T>* bn_small() const { return bn_small_.get(); }
  BatchNormNode<T>* bn_big() const { return bn_big_.get(); }
  typename ParamStore<T>::Ptr weight_small() const { return w_small_; }
  typename ParamStore<T>::Ptr weight_big() const { return w_big_; }
  const ConvSpec& conv_spec() const { return conv_; }

 private:
  static void accumulate(Tensor5<T>& dst, const Tensor5<T>& src) {
    for (int64_t i = 0; i < dst.numel(); ++i) dst[i] += src[i];
  }

  ConvSpec conv_;
  PoolSpec pool_;
  bool share_;
  BnPolicy policy_;
  typename ParamStore<T>::Ptr w_small_, w_big_;
  std::unique_ptr<BatchNormNode<T>> bn_small_, bn_big_;
  Tensor5<T> x_, sum_;
  Pool3dResult<T> pooled_;
};

// ---------------------------------------------------------------------------

/// Residual attention over all P = T*H*W positions with embedded-Gaussian
/// similarity: y_i = x_i + Vo * sum_j softmax_j((Vt x_i)^T (Vp x_j)) Vg x_j.
template <class T>
class NonLocalUnit final : public Node<T> {
 public:
  NonLocalUnit(std::string name, int64_t channels, ParamStore<T>& store)
      : c_(channels), e_(std::max<int64_t>(1, channels / 2)) {
    this->name = std::move(name);
    Shape5 es{e_, c_, 1, 1, 1}, os{c_, e_, 1, 1, 1};
    v_theta_ = store.add(this->name + ".theta.w", es, true, true);
    v_phi_ = store.add(this->name + ".phi.w", es, true, true);
    v_g_ = store.add(this->name + ".g.w", es, true, true);
    v_o_ = store.add(this->name + ".out.w", os, true, true);
  }

  Tensor5<T> forward(const Tensor5<T>& x, bool) override {
    const Shape5& s = x.shape();
    if (s.c != c_)
      throw ShapeError(this->name + ": channel mismatch");
    x_ = x;
    const int64_t P = s.t * s.h * s.w;
    p_ = P;
    theta_.assign(size_t(s.n * e_ * P), 0);
    phi_.assign(size_t(s.n * e_ * P), 0);
    gmat_.assign(size_t(s.n * e_ * P), 0);
    scores_.assign(size_t(s.n * P * P), 0);
    agg_.assign(size_t(s.n * e_ * P), 0);

    Tensor5<T> y = x;  // residual term
    mac_counter().fetch_add(uint64_t(s.n) * uint64_t(3 * e_ * c_ * P +
                                                     2 * P * P * e_ + c_ * e_ * P),
                            std::memory_order_relaxed);
    for (int64_t n = 0; n < s.n; ++n) {
      // embeddings, (e_,P) each
      embed(n, v_theta_->value, theta_);
      embed(n, v_phi_->value, phi_);
      embed(n, v_g_->value, gmat_);
      // row-softmax of theta^T phi
      double* sc = &scores_[size_t(n * P * P)];
      const double* th = &theta_[size_t(n * e_ * P)];
      const double* ph = &phi_[size_t(n * e_ * P)];
      const double* gm = &gmat_[size_t(n * e_ * P)];
#pragma omp parallel for schedule(static)
      for (int64_t i = 0; i < P; ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (int64_t j = 0; j < P; ++j) {
          double e = 0;
          for (int64_t k = 0; k < e_; ++k) e += th[k * P + i] * ph[k * P + j];
          sc[i * P + j] = e;
          mx = std::max(mx, e);
        }
        double sum = 0;
        for (int64_t j = 0; j < P; ++j) {
          sc[i * P + j] = std::exp(sc[i * P + j] - mx);
          sum += sc[i * P + j];
        }
        for (int64_t j = 0; j < P; ++j) sc[i * P + j] /= sum;
      }
      // aggregate and output projection
      double* ag = &agg_[size_t(n * e_ * P)];
#pragma omp parallel for schedule(static)
      for (int64_t k = 0; k < e_; ++k)
        for (int64_t i = 0; i < P; ++i) {
          double acc = 0;
          for (int64_t j = 0; j < P; ++j) acc += sc[i * P + j] * gm[k * P + j];
          ag[k * P + i] = acc;
        }
#pragma omp parallel for schedule(static)
      for (int64_t c = 0; c < c_; ++c)
        for (int64_t i = 0; i < P; ++i) {
          double acc = 0;
          for (int64_t k = 0; k < e_; ++k)
            acc += double(v_o_->value.at(c, k, 0, 0, 0)) * ag[k * P + i];
          y[y.offset(n, c, 0, 0, 0) + i] += T(acc);
        }
    }
    return y;
  }

  Tensor5<T> backward(const Tensor5<T>& gy) override {
    const Shape5& s = x_.shape();
    const int64_t P = p_;
    Tensor5<T> gx = gy;  // residual path
    std::vector<double> gtheta(size_t(e_ * P)), gphi(size_t(e_ * P)),
        gg(size_t(e_ * P)), gagg(size_t(e_ * P)), gsc(size_t(P * P));
    for (int64_t n = 0; n < s.n; ++n) {
      const double* th = &theta_[size_t(n * e_ * P)];
      const double* ph = &phi_[size_t(n * e_ * P)];
      const double* gm = &gmat_[size_t(n * e_ * P)];
      const double* ag = &agg_[size_t(n * e_ * P)];
      const double* sc = &scores_[size_t(n * P * P)];
      // d/d agg and d/d Vo
      for (int64_t k = 0; k < e_; ++k)
        for (int64_t i = 0; i < P; ++i) {
          double acc = 0;
          for (int64_t c = 0; c < c_; ++c)
            acc += double(v_o_->value.at(c, k, 0, 0, 0)) *
                   double(gy[gy.offset(n, c, 0, 0, 0) + i]);
          gagg[size_t(k * P + i)] = acc;
        }
      for (int64_t c = 0; c < c_; ++c)
        for (int64_t k = 0; k < e_; ++k) {
          double acc = 0;
          for (int64_t i = 0; i < P; ++i)
            acc += double(gy[gy.offset(n, c, 0, 0, 0) + i]) * ag[k * P + i];
          v_o_->grad.at(c, k, 0, 0, 0) += T(acc);
        }
      // d/d scores and d/d g
      for (int64_t i = 0; i < P; ++i)
        for (int64_t j = 0; j < P; ++j) {
          double acc = 0;
          for (int64_t k = 0; k < e_; ++k)
            acc += gagg[size_t(k * P + i)] * gm[k * P + j];
          gsc[size_t(i * P + j)] = acc;
        }
      for (int64_t k = 0; k < e_; ++k)
        for (int64_t j = 0; j < P; ++j) {
          double acc = 0;
          for (int64_t i = 0; i < P; ++i)
            acc += sc[i * P + j] * gagg[size_t(k * P + i)];
          gg[size_t(k * P + j)] = acc;
        }
      // softmax backward per row -> d/d logits, then theta/phi
      for (int64_t i = 0; i < P; ++i) {
        double dot = 0;
        for (int64_t j = 0; j < P; ++j)
          dot += sc[i * P + j] * gsc[size_t(i * P + j)];
        for (int64_t j = 0; j < P; ++j)
          gsc[size_t(i * P + j)] = sc[i * P + j] * (gsc[size_t(i * P + j)] - dot);
      }
      for (int64_t k = 0; k < e_; ++k)
        for (int64_t i = 0; i < P; ++i) {
          double acc = 0;
          for (int64_t j = 0; j < P; ++j)
            acc += gsc[size_t(i * P + j)] * ph[k * P + j];
          gtheta[size_t(k * P + i)] = acc;
        }
      for (int64_t k = 0; k < e_; ++k)
        for (int64_t j = 0; j < P; ++j) {
          double acc = 0;
          for (int64_t i = 0; i < P; ++i)
            acc += gsc[size_t(i * P + j)] * th[k * P + i];
          gphi[size_t(k * P + j)] = acc;
        }
      // back through the three embeddings
      embed_backward(n, v_theta_, gtheta, gx);
      embed_backward(n, v_phi_, gphi, gx);
      embed_backward(n, v_g_, gg, gx);
    }
    return gx;
  }

  Shape5 out_shape(const Shape5& in) const override { return in; }

  /// Attention rows of the last forward pass: scores()[n*P*P + i*P + j].
  const std::vector<double>& scores() const { return scores_; }
  int64_t positions() const { return p_; }

  void count(const Shape5& in, std::vector<CountRow>& rows) const override {
    const int64_t P = in.t * in.h * in.w;
    rows.push_back({this->name + ".embed", "conv", 3 * e_ * c_, 3 * e_ * c_ * P});
    rows.push_back({this->name + ".attend", "attention", 0, 2 * P * P * e_});
    rows.push_back({this->name + ".out", "conv", c_ * e_, c_ * e_ * P});
  }

 private:
  // (e_,P) = W (c_,P) for batch item n
  void embed(int64_t n, const Tensor5<T>& w, std::vector<double>& out) {
    const Shape5& s = x_.shape();
    const int64_t P = p_;
    double* o = &out[size_t(n * e_ * P)];
#pragma omp parallel for schedule(static)
    for (int64_t k = 0; k < e_; ++k)
      for (int64_t i = 0; i < P; ++i) {
        double acc = 0;
        for (int64_t c = 0; c < c_; ++c)
          acc += double(w.at(k, c, 0, 0, 0)) *
                 double(x_[x_.offset(n, c, 0, 0, 0) + i]);
        o[k * P + i] = acc;
      }
    (void)s;
  }

  void embed_backward(int64_t n, typename ParamStore<T>::Ptr w,
                      const std::vector<double>& gout, Tensor5<T>& gx) {
    const int64_t P = p_;
    for (int64_t k = 0; k < e_; ++k)
      for (int64_t c = 0; c < c_; ++c) {
        double acc = 0;
        for (int64_t i = 0; i < P; ++i)
          acc += gout[size_t(k * P + i)] *
                 double(x_[x_.offset(n, c, 0, 0, 0) + i]);
        w->grad.at(k, c, 0, 0, 0) += T(acc);
      }
    for (int64_t c = 0; c < c_; ++c)
      for (int64_t i = 0; i < P; ++i) {
        double acc = 0;
        for (int64_t k = 0; k < e_; ++k)
          acc += double(w->value.at(k, c, 0, 0, 0)) * gout[size_t(k * P + i)];
        gx[gx.offset(n, c, 0, 0, 0) + i] += T(acc);
      }
  }

  int64_t c_, e_;
  typename ParamStore<T>::Ptr v_theta_, v_phi_, v_g_, v_o_;
  Tensor5<T> x_;
  int64_t p_ = 0;
  std::vector<double> theta_, phi_, gmat_, scores_, agg_;
};

// ---------------------------------------------------------------------------

/// Global context gate: a = sigmoid(W2 relu(BN(W1 gmaxpool(x))) + b2) with a
/// 4:1 reduction then 1:4 expansion; y = x + BN'(x (.) a). The gate works on
/// one pooled vector per clip, so its cost is O(C^2) regardless of the
/// spatio-temporal extent. BN' is the unit's big-view normalization; its
/// scale starts at zero so a fresh block is an identity map.
template <class T>
class ExtraUnit final : public Node<T> {
 public:
  ExtraUnit(std::string name, int64_t channels, ParamStore<T>& store,
            bool big_bn_zero_init = true)
      : c_(channels), r_(std::max<int64_t>(1, channels / 4)) {
    this->name = std::move(name);
    w1_ = store.add(this->name + ".reduce.w", Shape5{r_, c_, 1, 1, 1}, true, true);
    w2_ = store.add(this->name + ".expand.w", Shape5{c_, r_, 1, 1, 1}, true, true);
    b2_ = store.add(this->name + ".expand.b", Shape5{1, c_, 1, 1, 1}, true, false);
    bn_mid_ = std::make_unique<BatchNormNode<T>>(this->name + ".bn", r_, store, 1.0);
    bn_big_ = std::make_unique<BatchNormNode<T>>(this->name + ".bn_big", c_,
                                                 store, big_bn_zero_init ? 0.0 : 1.0);
  }

  Tensor5<T> forward(const Tensor5<T>& x, bool train) override {
    if (x.shape().c != c_)
      throw ShapeError(this->name + ": channel mismatch");
    x_ = x;
    gmax_ = global_max_pool(x);
    u_ = linear(gmax_.y, w1_->value);
    m_ = bn_mid_->forward(u_, train);
    h_ = relu(m_);
    a_ = sigmoid(linear(h_, w2_->value, &b2_->value));
    gated_ = Tensor5<T>(x.shape());
    const Shape5& s = x.shape();
    for (int64_t n = 0; n < s.n; ++n)
      for (int64_t c = 0; c < s.c; ++c) {
        const T a = a_.at(n, c, 0, 0, 0);
        for (int64_t t = 0; t < s.t; ++t)
          for (int64_t h = 0; h < s.h; ++h)
            for (int64_t w = 0; w < s.w; ++w)
              gated_.at(n, c, t, h, w) = x.at(n, c, t, h, w) * a;
      }
    return add(x, bn_big_->forward(gated_, train));
  }

  Tensor5<T> backward(const Tensor5<T>& gy) override {
    const Shape5& s = x_.shape();
    Tensor5<T> g_gated = bn_big_->backward(gy);
    Tensor5<T> gx = gy;  // residual path
    Tensor5<T> ga(s.n, c_, 1, 1, 1);
    for (int64_t n = 0; n < s.n; ++n)
      for (int64_t c = 0; c < c_; ++c) {
        const T a = a_.at(n, c, 0, 0, 0);
        double acc = 0;
        for (int64_t t = 0; t < s.t; ++t)
          for (int64_t h = 0; h < s.h; ++h)
            for (int64_t w = 0; w < s.w; ++w) {
              const T g = g_gated.at(n, c, t, h, w);
              gx.at(n, c, t, h, w) += g * a;
              acc += double(g) * double(x_.at(n, c, t, h, w));
            }
        ga.at(n, c, 0, 0, 0) = T(acc);
      }
    Tensor5<T> gz2 = sigmoid_backward(a_, ga);
    auto g2 = linear_backward(h_, w2_->value, true, gz2);
    accumulate(w2_->grad, g2.gw);
    accumulate(b2_->grad, g2.gb);
    Tensor5<T> gm = relu_backward(m_, g2.gx);
    Tensor5<T> gu = bn_mid_->backward(gm);
    auto g1 = linear_backward(gmax_.y, w1_->value, false, gu);
    accumulate(w1_->grad, g1.gw);
    Tensor5<T> gv = global_max_pool_backward(s, gmax_, g1.gx);
    return add(gx, gv);
  }

  Shape5 out_shape(const Shape5& in) const override { return in; }

  void count(const Shape5& in, std::vector<CountRow>& rows) const override {
    rows.push_back({this->name + ".reduce", "fc", r_ * c_, r_ * c_});
    rows.push_back({this->name + ".expand", "fc", c_ * r_ + c_, c_ * r_});
    bn_mid_->count(in, rows);
    bn_big_->count(in, rows);
  }

  BatchNormNode<T>* bn_big() const { return bn_big_.get(); }
  BatchNormNode<T>* bn_mid() const { return bn_mid_.get(); }
  typename ParamStore<T>::Ptr reduce_weight() const { return w1_; }
  typename ParamStore<T>::Ptr expand_weight() const { return w2_; }
  typename ParamStore<T>::Ptr expand_bias() const { return b2_; }

 private:
  static void accumulate(Tensor5<T>& dst, const Tensor5<T>& src) {
    for (int64_t i = 0; i < dst.numel(); ++i) dst[i] += src[i];
  }

  int64_t c_, r_;
  typename ParamStore<T>::Ptr w1_, w2_, b2_;
  std::unique_ptr<BatchNormNode<T>> bn_mid_, bn_big_;
  Tensor5<T> x_, u_, m_, h_, a_, gated_;
  GlobalMaxResult<T> gmax_;
};

}  // namespace smallbig
