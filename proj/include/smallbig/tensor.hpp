#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

namespace smallbig {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
// Shape violations are config-level problems (bad net spec or input).
struct ShapeError : ConfigError {
  using ConfigError::ConfigError;
};

/// (N,C,T,H,W) extents of a dense activation tensor.
struct Shape5 {
  int64_t n = 0, c = 0, t = 0, h = 0, w = 0;

  int64_t numel() const { return n * c * t * h * w; }
  bool operator==(const Shape5&) const = default;

  std::string str() const {
    return "(" + std::to_string(n) + "," + std::to_string(c) + "," +
           std::to_string(t) + "," + std::to_string(h) + "," +
           std::to_string(w) + ")";
  }
};

inline std::ostream& operator<<(std::ostream& os, const Shape5& s) {
  return os << s.str();
}

/// Dense 5-D array in row-major (N,C,T,H,W) layout. Element (n,c,t,h,w)
/// lives at ((((n*C+c)*T+t)*H+h)*W+w).
template <class T>
class Tensor5 {
 public:
  Tensor5() = default;
  explicit Tensor5(const Shape5& s) : shape_(s), data_(s.numel(), T(0)) {
    if (s.n < 0 || s.c < 0 || s.t < 0 || s.h < 0 || s.w < 0)
      throw ShapeError("negative tensor extent " + s.str());
  }
  Tensor5(int64_t n, int64_t c, int64_t t, int64_t h, int64_t w)
      : Tensor5(Shape5{n, c, t, h, w}) {}

  const Shape5& shape() const { return shape_; }
  int64_t numel() const { return shape_.numel(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }

  int64_t offset(int64_t n, int64_t c, int64_t t, int64_t h, int64_t w) const {
    return ((((n * shape_.c + c) * shape_.t + t) * shape_.h + h) * shape_.w) + w;
  }
  T& at(int64_t n, int64_t c, int64_t t, int64_t h, int64_t w) {
    return data_[offset(n, c, t, h, w)];
  }
  const T& at(int64_t n, int64_t c, int64_t t, int64_t h, int64_t w) const {
    return data_[offset(n, c, t, h, w)];
  }
  T& operator[](int64_t i) { return data_[i]; }
  const T& operator[](int64_t i) const { return data_[i]; }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }
  void zero() { fill(T(0)); }

  bool all_finite() const {
    for (T v : data_)
      if (!std::isfinite(double(v))) return false;
    return true;
  }

  template <class U>
  Tensor5<U> cast() const {
    Tensor5<U> out(shape_);
    for (int64_t i = 0; i < numel(); ++i) out[i] = static_cast<U>(data_[i]);
    return out;
  }

  bool operator==(const Tensor5&) const = default;

 private:
  Shape5 shape_{};
  std::vector<T> data_;
};

/// Deterministic RNG with a fixed generation algorithm. All stochastic
/// pieces of the library draw through this so results are reproducible
/// from the seed alone.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed ? seed : 0x9e3779b97f4a7c15ull) {}

  uint64_t next_u64() {
    // splitmix64
    uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  /// Uniform in [0,1).
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Integer in [0, n).
  int64_t uniform_int(int64_t n) {
    return int64_t(uniform() * double(n)) % n;
  }

  double normal() {
    // Box-Muller; second value discarded to keep the stream simple.
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

 private:
  uint64_t state_;
};

template <class T>
void fill_uniform(Tensor5<T>& x, Rng& rng, double lo = -1.0, double hi = 1.0) {
  for (int64_t i = 0; i < x.numel(); ++i) x[i] = T(rng.uniform(lo, hi));
}

template <class T>
void fill_normal(Tensor5<T>& x, Rng& rng, double mean = 0.0, double stddev = 1.0) {
  for (int64_t i = 0; i < x.numel(); ++i) x[i] = T(mean + stddev * rng.normal());
}

/// Flip the temporal axis.
template <class T>
Tensor5<T> reverse_t(const Tensor5<T>& x) {
  const Shape5& s = x.shape();
  Tensor5<T> out(s);
  for (int64_t n = 0; n < s.n; ++n)
    for (int64_t c = 0; c < s.c; ++c)
      for (int64_t t = 0; t < s.t; ++t)
        for (int64_t h = 0; h < s.h; ++h)
          for (int64_t w = 0; w < s.w; ++w)
            out.at(n, c, t, h, w) = x.at(n, c, s.t - 1 - t, h, w);
  return out;
}

template <class T>
double max_abs_diff(const Tensor5<T>& a, const Tensor5<T>& b) {
  if (a.shape() != b.shape())
    throw ShapeError("max_abs_diff: shape mismatch " + a.shape().str() + " vs " +
                     b.shape().str());
  double m = 0;
  for (int64_t i = 0; i < a.numel(); ++i)
    m = std::max(m, std::abs(double(a[i]) - double(b[i])));
  return m;
}

template <class T>
double max_rel_diff(const Tensor5<T>& a, const Tensor5<T>& b) {
  if (a.shape() != b.shape())
    throw ShapeError("max_rel_diff: shape mismatch");
  double m = 0;
  for (int64_t i = 0; i < a.numel(); ++i) {
    double denom = std::max({std::abs(double(a[i])), std::abs(double(b[i])), 1e-12});
    m = std::max(m, std::abs(double(a[i]) - double(b[i])) / denom);
  }
  return m;
}

}  // namespace smallbig
