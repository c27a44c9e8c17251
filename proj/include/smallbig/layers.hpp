#pragma once

#include <memory>
#include <string>
#include <vector>

#include "smallbig/ops.hpp"
#include "smallbig/param.hpp"

namespace smallbig {

/// One row of the analytic cost report.
struct CountRow {
  std::string name;
  std::string kind;
  int64_t params = 0;
  int64_t flops = 0;  // MACs; 1 MAC = 1 FLOP
};

/// A differentiable graph node. forward() saves whatever backward() needs;
/// backward() returns the input gradient and accumulates parameter
/// gradients into the store (+=, so shared tensors sum over use sites).
template <class T>
class Node {
 public:
  virtual ~Node() = default;
  virtual Tensor5<T> forward(const Tensor5<T>& x, bool train) = 0;
  virtual Tensor5<T> backward(const Tensor5<T>& gy) = 0;
  virtual Shape5 out_shape(const Shape5& in) const = 0;
  /// Append analytic per-layer rows for an input of shape `in`.
  virtual void count(const Shape5& in, std::vector<CountRow>& rows) const = 0;

  std::string name;
};

template <class T>
using NodePtr = std::unique_ptr<Node<T>>;

// ---------------------------------------------------------------------------

template <class T>
class Conv3dNode final : public Node<T> {
 public:
  Conv3dNode(std::string name, ConvSpec spec, typename ParamStore<T>::Ptr w,
             typename ParamStore<T>::Ptr b = nullptr)
      : spec_(spec), w_(std::move(w)), b_(std::move(b)) {
    this->name = std::move(name);
  }

  Tensor5<T> forward(const Tensor5<T>& x, bool) override {
    x_ = x;
    return conv3d(x, spec_, w_->value, b_ ? &b_->value : nullptr);
  }

  Tensor5<T> backward(const Tensor5<T>& gy) override {
    auto g = conv3d_backward(x_, spec_, w_->value, gy);
    accumulate(w_->grad, g.gw);
    if (b_) accumulate(b_->grad, g.gb);
    return g.gx;
  }

  Shape5 out_shape(const Shape5& in) const override { return spec_.out_shape(in); }

  void count(const Shape5& in, std::vector<CountRow>& rows) const override {
    int64_t params = spec_.weight_count() + (b_ ? spec_.out_channels : 0);
    rows.push_back({this->name, "conv", params, spec_.macs(in)});
  }

  const ConvSpec& spec() const { return spec_; }
  typename ParamStore<T>::Ptr weight() const { return w_; }

 private:
  static void accumulate(Tensor5<T>& dst, const Tensor5<T>& src) {
    for (int64_t i = 0; i < dst.numel(); ++i) dst[i] += src[i];
  }
  ConvSpec spec_;
  typename ParamStore<T>::Ptr w_, b_;
  Tensor5<T> x_;
};

// ---------------------------------------------------------------------------

/// Per-channel batch normalization over (N,T,H,W). Train mode uses batch
/// statistics and updates running stats with momentum 0.9; eval mode is an
/// affine per-channel map from the running stats.
template <class T>
class BatchNormNode final : public Node<T> {
 public:
  static constexpr double kEps = 1e-5;
  static constexpr double kMomentum = 0.9;

  BatchNormNode(std::string name, int64_t channels, ParamStore<T>& store,
                double gamma_init = 1.0)
      : channels_(channels) {
    this->name = std::move(name);
    Shape5 cs{1, channels, 1, 1, 1};
    gamma_ = store.add(this->name + ".gamma", cs, true, false);
    beta_ = store.add(this->name + ".beta", cs, true, false);
    rmean_ = store.add(this->name + ".running_mean", cs, false, false);
    rvar_ = store.add(this->name + ".running_var", cs, false, false);
    gamma_->value.fill(T(gamma_init));
    rvar_->value.fill(T(1));
  }

  Tensor5<T> forward(const Tensor5<T>& x, bool train) override {
    const Shape5& s = x.shape();
    if (s.c != channels_)
      throw ShapeError(this->name + ": expected " + std::to_string(channels_) +
                       " channels, got " + std::to_string(s.c));
    x_ = x;
    train_ = train;
    const int64_t m = s.n * s.t * s.h * s.w;
    mean_.assign(size_t(channels_), 0.0);
    invstd_.assign(size_t(channels_), 0.0);
    Tensor5<T> y(s);
#pragma omp parallel for schedule(static)
    for (int64_t c = 0; c < channels_; ++c) {
      double mu, var;
      if (train) {
        double sum = 0;
        for (int64_t n = 0; n < s.n; ++n)
          for (int64_t t = 0; t < s.t; ++t)
            for (int64_t h = 0; h < s.h; ++h)
              for (int64_t w = 0; w < s.w; ++w) sum += double(x.at(n, c, t, h, w));
        mu = sum / double(m);
        double sq = 0;
        for (int64_t n = 0; n < s.n; ++n)
          for (int64_t t = 0; t < s.t; ++t)
            for (int64_t h = 0; h < s.h; ++h)
              for (int64_t w = 0; w < s.w; ++w) {
                double d = double(x.at(n, c, t, h, w)) - mu;
                sq += d * d;
              }
        var = sq / double(m);  // biased, matching normalization
        rmean_->value[c] = T(kMomentum * double(rmean_->value[c]) + (1 - kMomentum) * mu);
        rvar_->value[c] = T(kMomentum * double(rvar_->value[c]) + (1 - kMomentum) * var);
      } else {
        mu = double(rmean_->value[c]);
        var = double(rvar_->value[c]);
      }
      const double inv = 1.0 / std::sqrt(var + kEps);
      mean_[size_t(c)] = mu;
      invstd_[size_t(c)] = inv;
      const double g = double(gamma_->value[c]), b = double(beta_->value[c]);
      for (int64_t n = 0; n < s.n; ++n)
        for (int64_t t = 0; t < s.t; ++t)
          for (int64_t h = 0; h < s.h; ++h)
            for (int64_t w = 0; w < s.w; ++w)
              y.at(n, c, t, h, w) =
                  T((double(x.at(n, c, t, h, w)) - mu) * inv * g + b);
    }
    return y;
  }

  Tensor5<T> backward(const Tensor5<T>& gy) override {
    const Shape5& s = x_.shape();
    const int64_t m = s.n * s.t * s.h * s.w;
    Tensor5<T> gx(s);
#pragma omp parallel for schedule(static)
    for (int64_t c = 0; c < channels_; ++c) {
      const double mu = mean_[size_t(c)], inv = invstd_[size_t(c)];
      const double g = double(gamma_->value[c]);
      double sum_gy = 0, sum_gy_xhat = 0;
      for (int64_t n = 0; n < s.n; ++n)
        for (int64_t t = 0; t < s.t; ++t)
          for (int64_t h = 0; h < s.h; ++h)
            for (int64_t w = 0; w < s.w; ++w) {
              const double go = double(gy.at(n, c, t, h, w));
              const double xhat = (double(x_.at(n, c, t, h, w)) - mu) * inv;
              sum_gy += go;
              sum_gy_xhat += go * xhat;
            }
      gamma_->grad[c] += T(sum_gy_xhat);
      beta_->grad[c] += T(sum_gy);
      if (train_) {
        for (int64_t n = 0; n < s.n; ++n)
          for (int64_t t = 0; t < s.t; ++t)
            for (int64_t h = 0; h < s.h; ++h)
              for (int64_t w = 0; w < s.w; ++w) {
                const double go = double(gy.at(n, c, t, h, w));
                const double xhat = (double(x_.at(n, c, t, h, w)) - mu) * inv;
                gx.at(n, c, t, h, w) =
                    T(g * inv *
                      (go - sum_gy / double(m) - xhat * sum_gy_xhat / double(m)));
              }
      } else {
        for (int64_t n = 0; n < s.n; ++n)
          for (int64_t t = 0; t < s.t; ++t)
            for (int64_t h = 0; h < s.h; ++h)
              for (int64_t w = 0; w < s.w; ++w)
                gx.at(n, c, t, h, w) = T(double(gy.at(n, c, t, h, w)) * g * inv);
      }
    }
    return gx;
  }

  Shape5 out_shape(const Shape5& in) const override { return in; }

  void count(const Shape5&, std::vector<CountRow>& rows) const override {
    rows.push_back({this->name, "bn", 2 * channels_, 0});
  }

  typename ParamStore<T>::Ptr gamma() const { return gamma_; }
  typename ParamStore<T>::Ptr beta() const { return beta_; }

 private:
  int64_t channels_;
  typename ParamStore<T>::Ptr gamma_, beta_, rmean_, rvar_;
  Tensor5<T> x_;
  std::vector<double> mean_, invstd_;
  bool train_ = false;
};

// ---------------------------------------------------------------------------

template <class T>
class ReluNode final : public Node<T> {
 public:
  explicit ReluNode(std::string name) { this->name = std::move(name); }
  Tensor5<T> forward(const Tensor5<T>& x, bool) override {
    x_ = x;
    return relu(x);
  }
  Tensor5<T> backward(const Tensor5<T>& gy) override {
    return relu_backward(x_, gy);
  }
  Shape5 out_shape(const Shape5& in) const override { return in; }
  void count(const Shape5&, std::vector<CountRow>&) const override {}

 private:
  Tensor5<T> x_;
};

// ---------------------------------------------------------------------------

/// Strided max pool used by the stem (kernel/stride/pad semantics like conv).
template <class T>
class StridedMaxPoolNode final : public Node<T> {
 public:
  StridedMaxPoolNode(std::string name, int64_t kt, int64_t kh, int64_t kw,
                     int64_t st, int64_t sh, int64_t sw, int64_t pt, int64_t ph,
                     int64_t pw)
      : kt_(kt), kh_(kh), kw_(kw), st_(st), sh_(sh), sw_(sw), pt_(pt), ph_(ph),
        pw_(pw) {
    this->name = std::move(name);
  }

  Shape5 out_shape(const Shape5& in) const override {
    Shape5 o{in.n, in.c, ConvSpec::out_dim(in.t, pt_, kt_, st_),
             ConvSpec::out_dim(in.h, ph_, kh_, sh_),
             ConvSpec::out_dim(in.w, pw_, kw_, sw_)};
    if (o.t <= 0 || o.h <= 0 || o.w <= 0)
      throw ShapeError(this->name + ": non-positive output dims");
    return o;
  }

  Tensor5<T> forward(const Tensor5<T>& x, bool) override {
    in_shape_ = x.shape();
    Shape5 os = out_shape(in_shape_);
    Tensor5<T> y(os);
    argmax_.assign(size_t(os.numel()), -1);
    const Shape5& s = in_shape_;
#pragma omp parallel for collapse(2) schedule(static)
    for (int64_t n = 0; n < os.n; ++n)
      for (int64_t c = 0; c < os.c; ++c)
        for (int64_t to = 0; to < os.t; ++to)
          for (int64_t ho = 0; ho < os.h; ++ho)
            for (int64_t wo = 0; wo < os.w; ++wo) {
              T best = -std::numeric_limits<T>::infinity();
              int32_t best_idx = -1;
              for (int64_t kt = 0; kt < kt_; ++kt) {
                const int64_t ti = to * st_ - pt_ + kt;
                if (ti < 0 || ti >= s.t) continue;
                for (int64_t kh = 0; kh < kh_; ++kh) {
                  const int64_t hi = ho * sh_ - ph_ + kh;
                  if (hi < 0 || hi >= s.h) continue;
                  for (int64_t kw = 0; kw < kw_; ++kw) {
                    const int64_t wi = wo * sw_ - pw_ + kw;
                    if (wi < 0 || wi >= s.w) continue;
                    T v = x.at(n, c, ti, hi, wi);
                    if (v > best) {
                      best = v;
                      best_idx = int32_t((ti * s.h + hi) * s.w + wi);
                    }
                  }
                }
              }
              y.at(n, c, to, ho, wo) = best;
              argmax_[size_t(y.offset(n, c, to, ho, wo))] = best_idx;
            }
    y_shape_ = os;
    return y;
  }

  Tensor5<T> backward(const Tensor5<T>& gy) override {
    const Shape5& s = in_shape_;
    const Shape5& os = y_shape_;
    Tensor5<T> gx(s);
    // Serial scatter: overlap between windows is possible when stride < kernel.
    for (int64_t n = 0; n < os.n; ++n)
      for (int64_t c = 0; c < os.c; ++c)
        for (int64_t to = 0; to < os.t; ++to)
          for (int64_t ho = 0; ho < os.h; ++ho)
            for (int64_t wo = 0; wo < os.w; ++wo) {
              const int32_t idx = argmax_[size_t(gy.offset(n, c, to, ho, wo))];
              if (idx < 0) continue;
              const int64_t ti = idx / (s.h * s.w);
              const int64_t hi = (idx / s.w) % s.h;
              const int64_t wi = idx % s.w;
              gx.at(n, c, ti, hi, wi) += gy.at(n, c, to, ho, wo);
            }
    return gx;
  }

  void count(const Shape5&, std::vector<CountRow>& rows) const override {
    rows.push_back({this->name, "maxpool", 0, 0});
  }

 private:
  int64_t kt_, kh_, kw_, st_, sh_, sw_, pt_, ph_, pw_;
  Shape5 in_shape_{}, y_shape_{};
  std::vector<int32_t> argmax_;
};

// ---------------------------------------------------------------------------

template <class T>
class GlobalAvgPoolNode final : public Node<T> {
 public:
  explicit GlobalAvgPoolNode(std::string name) { this->name = std::move(name); }
  Tensor5<T> forward(const Tensor5<T>& x, bool) override {
    in_shape_ = x.shape();
    return global_avg_pool(x);
  }
  Tensor5<T> backward(const Tensor5<T>& gy) override {
    return global_avg_pool_backward(in_shape_, gy);
  }
  Shape5 out_shape(const Shape5& in) const override {
    return {in.n, in.c, 1, 1, 1};
  }
  void count(const Shape5&, std::vector<CountRow>& rows) const override {
    rows.push_back({this->name, "avgpool", 0, 0});
  }

 private:
  Shape5 in_shape_{};
};

// ---------------------------------------------------------------------------

template <class T>
class LinearNode final : public Node<T> {
 public:
  LinearNode(std::string name, int64_t in, int64_t out, ParamStore<T>& store)
      : in_(in), out_(out) {
    this->name = std::move(name);
    w_ = store.add(this->name + ".w", Shape5{out, in, 1, 1, 1}, true, true);
    b_ = store.add(this->name + ".b", Shape5{1, out, 1, 1, 1}, true, false);
  }

  Tensor5<T> forward(const Tensor5<T>& x, bool) override {
    x_ = x;
    return linear(x, w_->value, &b_->value);
  }
  Tensor5<T> backward(const Tensor5<T>& gy) override {
    auto g = linear_backward(x_, w_->value, true, gy);
    for (int64_t i = 0; i < w_->grad.numel(); ++i) w_->grad[i] += g.gw[i];
    for (int64_t i = 0; i < b_->grad.numel(); ++i) b_->grad[i] += g.gb[i];
    return g.gx;
  }
  Shape5 out_shape(const Shape5& in) const override {
    return {in.n, out_, 1, 1, 1};
  }
  void count(const Shape5&, std::vector<CountRow>& rows) const override {
    rows.push_back({this->name, "fc", in_ * out_ + out_, in_ * out_});
  }

  typename ParamStore<T>::Ptr weight() const { return w_; }
  typename ParamStore<T>::Ptr bias() const { return b_; }

 private:
  int64_t in_, out_;
  typename ParamStore<T>::Ptr w_, b_;
  Tensor5<T> x_;
};

}  // namespace smallbig
