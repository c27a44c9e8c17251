#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include "smallbig/tensor.hpp"

namespace smallbig {

enum class ClipMode {
  Strided,    // fixed-stride frame indices inside a sliding window
  Segmented,  // one frame per equal segment of the source
};

/// How to pick frames from a source video. Strided mode reads `frames`
/// indices spaced `stride` apart inside a `window`-frame span; segmented mode
/// splits the source into `frames` equal segments and takes one frame from
/// each. Short sources wrap modulo their length.
struct ClipPlan {
  ClipMode mode = ClipMode::Strided;
  int64_t frames = 8;
  int64_t window = 64;
  int64_t stride = 8;
  int64_t clip_index = 0;  // which of num_clips eval windows
  int64_t num_clips = 1;
  bool train = false;  // train: random start / random frame per segment
};

/// Frame indices for one clip. Deterministic given (plan, rng state).
inline std::vector<int64_t> sample_clip(int64_t source_len, const ClipPlan& plan,
                                        Rng& rng) {
  if (source_len < 1) throw DataError("sample_clip: empty source");
  std::vector<int64_t> idx(size_t(plan.frames));
  if (plan.mode == ClipMode::Strided) {
    int64_t start;
    if (plan.train) {
      start = int64_t(rng.uniform_int(uint64_t(source_len)));
    } else {
      const int64_t span = std::max<int64_t>(source_len - plan.window, 0);
      start = plan.num_clips > 1
                  ? span * plan.clip_index / (plan.num_clips - 1)
                  : span / 2;
    }
    for (int64_t i = 0; i < plan.frames; ++i)
      idx[size_t(i)] = (start + i * plan.stride) % source_len;
  } else {
    for (int64_t i = 0; i < plan.frames; ++i) {
      const int64_t lo = i * source_len / plan.frames;
      const int64_t hi = (i + 1) * source_len / plan.frames;  // exclusive
      const int64_t extent = std::max<int64_t>(hi - lo, 1);
      const int64_t off =
          plan.train ? int64_t(rng.uniform_int(uint64_t(extent))) : extent / 2;
      idx[size_t(i)] = (lo + off) % source_len;
    }
  }
  return idx;
}

// ---------------------------------------------------------------------------
// spatial transforms (operate on (N,C,T,H,W), applied per frame)

/// Bilinear resample of the spatial plane to (oh, ow).
template <class T>
Tensor5<T> resize_bilinear(const Tensor5<T>& x, int64_t oh, int64_t ow) {
  const Shape5& s = x.shape();
  if (oh < 1 || ow < 1) throw DataError("resize: degenerate target size");
  Tensor5<T> y(s.n, s.c, s.t, oh, ow);
  const double sh = oh > 1 ? double(s.h - 1) / double(oh - 1) : 0.0;
  const double sw = ow > 1 ? double(s.w - 1) / double(ow - 1) : 0.0;
  for (int64_t n = 0; n < s.n; ++n)
    for (int64_t c = 0; c < s.c; ++c)
      for (int64_t t = 0; t < s.t; ++t)
        for (int64_t h = 0; h < oh; ++h) {
          const double fy = double(h) * sh;
          const int64_t y0 = int64_t(fy);
          const int64_t y1 = std::min(y0 + 1, s.h - 1);
          const double wy = fy - double(y0);
          for (int64_t w = 0; w < ow; ++w) {
            const double fx = double(w) * sw;
            const int64_t x0 = int64_t(fx);
            const int64_t x1 = std::min(x0 + 1, s.w - 1);
            const double wx = fx - double(x0);
            const double v =
                (1 - wy) * ((1 - wx) * double(x.at(n, c, t, y0, x0)) +
                            wx * double(x.at(n, c, t, y0, x1))) +
                wy * ((1 - wx) * double(x.at(n, c, t, y1, x0)) +
                      wx * double(x.at(n, c, t, y1, x1)));
            y.at(n, c, t, h, w) = T(v);
          }
        }
  return y;
}

/// Scale so the shorter spatial side equals `side` (aspect preserved,
/// round-half-up on the longer side).
template <class T>
Tensor5<T> rescale_shorter_side(const Tensor5<T>& x, int64_t side) {
  const Shape5& s = x.shape();
  if (s.h < 1 || s.w < 1) throw DataError("rescale: degenerate frame");
  int64_t oh, ow;
  if (s.h <= s.w) {
    oh = side;
    ow = int64_t(std::floor(double(s.w) * double(side) / double(s.h) + 0.5));
  } else {
    ow = side;
    oh = int64_t(std::floor(double(s.h) * double(side) / double(s.w) + 0.5));
  }
  if (oh == s.h && ow == s.w) return x;
  return resize_bilinear(x, oh, ow);
}

template <class T>
Tensor5<T> crop(const Tensor5<T>& x, int64_t top, int64_t left, int64_t ch,
                int64_t cw) {
  const Shape5& s = x.shape();
  if (top < 0 || left < 0 || top + ch > s.h || left + cw > s.w)
    throw DataError("crop out of bounds");
  Tensor5<T> y(s.n, s.c, s.t, ch, cw);
  for (int64_t n = 0; n < s.n; ++n)
    for (int64_t c = 0; c < s.c; ++c)
      for (int64_t t = 0; t < s.t; ++t)
        for (int64_t h = 0; h < ch; ++h)
          for (int64_t w = 0; w < cw; ++w)
            y.at(n, c, t, h, w) = x.at(n, c, t, top + h, left + w);
  return y;
}

/// Crop offsets (left, middle, right) along the longer axis of an
/// already-rescaled frame whose shorter side equals `side`.
inline std::array<int64_t, 3> three_crop_offsets(int64_t longer, int64_t side) {
  if (longer < side) throw DataError("three_crop: frame shorter than crop");
  return {0, (longer - side) / 2, longer - side};
}

/// Evaluation transform: rescale to shorter side `side`, then three
/// square crops along the longer axis.
template <class T>
std::array<Tensor5<T>, 3> eval_transform(const Tensor5<T>& frames,
                                         int64_t side = 256) {
  Tensor5<T> r = rescale_shorter_side(frames, side);
  const Shape5& s = r.shape();
  std::array<Tensor5<T>, 3> out;
  if (s.w >= s.h) {
    auto offs = three_crop_offsets(s.w, side);
    for (int i = 0; i < 3; ++i) out[size_t(i)] = crop(r, 0, offs[size_t(i)], side, side);
  } else {
    auto offs = three_crop_offsets(s.h, side);
    for (int i = 0; i < 3; ++i) out[size_t(i)] = crop(r, offs[size_t(i)], 0, side, side);
  }
  return out;
}

/// Training transform: rescale shorter side to a random length in
/// [lo, hi], then a random square crop of `crop_side` (flip optional).
template <class T>
Tensor5<T> train_transform(const Tensor5<T>& frames, Rng& rng,
                           int64_t crop_side = 224, int64_t lo = 256,
                           int64_t hi = 320, bool hflip = false) {
  const int64_t side = lo + int64_t(rng.uniform_int(uint64_t(hi - lo + 1)));
  Tensor5<T> r = rescale_shorter_side(frames, side);
  const Shape5& s = r.shape();
  const int64_t top = int64_t(rng.uniform_int(uint64_t(s.h - crop_side + 1)));
  const int64_t left = int64_t(rng.uniform_int(uint64_t(s.w - crop_side + 1)));
  Tensor5<T> c = crop(r, top, left, crop_side, crop_side);
  if (hflip && rng.uniform() < 0.5) {
    const Shape5& cs = c.shape();
    Tensor5<T> f(cs);
    for (int64_t n = 0; n < cs.n; ++n)
      for (int64_t ch = 0; ch < cs.c; ++ch)
        for (int64_t t = 0; t < cs.t; ++t)
          for (int64_t h = 0; h < cs.h; ++h)
            for (int64_t w = 0; w < cs.w; ++w)
              f.at(n, ch, t, h, w) = c.at(n, ch, t, h, cs.w - 1 - w);
    return f;
  }
  return c;
}

// ---------------------------------------------------------------------------

/// Mean of softmaxed logit vectors across clips, crops, and models.
inline std::vector<double> fuse_scores(
    const std::vector<std::vector<double>>& logit_lists) {
  if (logit_lists.empty()) throw DataError("fuse_scores: empty list");
  const size_t k = logit_lists.front().size();
  std::vector<double> fused(k, 0.0);
  for (const auto& logits : logit_lists) {
    if (logits.size() != k)
      throw DataError("fuse_scores: mismatched class counts");
    double mx = logits[0];
    for (double v : logits) mx = std::max(mx, v);
    double sum = 0;
    std::vector<double> e(k);
    for (size_t i = 0; i < k; ++i) {
      e[i] = std::exp(logits[i] - mx);
      sum += e[i];
    }
    for (size_t i = 0; i < k; ++i) fused[i] += e[i] / sum;
  }
  for (double& v : fused) v /= double(logit_lists.size());
  return fused;
}

}  // namespace smallbig
