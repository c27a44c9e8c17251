#pragma once

#include <string>
#include <vector>

#include "smallbig/weights.hpp"

namespace smallbig {

/// Temporal-co-occurrence toy task. Each clip is an (1,8,32,32) scalar video
/// containing two bright 5x5 blob events at independent random spatial
/// locations and frame times t1, t2. Label 1 iff |t1-t2| <= 1, label 0 iff
/// |t1-t2| >= 3; gap cases are resampled so the classes are cleanly
/// separated. Classes are exactly balanced. Frame-level appearance is
/// identical across classes — only temporal proximity of the two events
/// carries the label, so per-frame (2-D) processing alone cannot solve it.
struct SyntheticVideoSet {
  Tensor5<float> clips;  // (N,1,8,32,32)
  std::vector<int64_t> labels;
  uint64_t seed = 0;

  int64_t size() const { return clips.shape().n; }

  /// One-clip batch view (n-th clip), shape (1,1,8,32,32).
  Tensor5<float> clip(int64_t n) const {
    const Shape5& s = clips.shape();
    Tensor5<float> out(1, s.c, s.t, s.h, s.w);
    const int64_t stride = s.c * s.t * s.h * s.w;
    for (int64_t i = 0; i < stride; ++i) out[i] = clips[n * stride + i];
    return out;
  }
};

constexpr int64_t kSynthT = 8, kSynthHW = 32, kSynthBlob = 5;

/// |t1-t2| for the two blob events of one generated clip, recovered from the
/// pixels alone (independent checker used by tests).
inline int64_t synth_event_gap(const Tensor5<float>& clips, int64_t n) {
  const Shape5& s = clips.shape();
  std::vector<int64_t> event_frames;
  for (int64_t t = 0; t < s.t; ++t) {
    int64_t bright = 0;
    for (int64_t h = 0; h < s.h; ++h)
      for (int64_t w = 0; w < s.w; ++w)
        if (clips.at(n, 0, t, h, w) > 0.5f) ++bright;
    // one blob is 25 bright pixels; two overlapping blobs at least 25
    if (bright >= kSynthBlob * kSynthBlob)
      event_frames.push_back(t);
  }
  if (event_frames.empty()) return -1;
  return event_frames.back() - event_frames.front();
}

inline SyntheticVideoSet gen_synth(int64_t n, uint64_t seed) {
  if (n < 2) throw ConfigError("gen_synth: need at least 2 clips");
  SyntheticVideoSet set;
  set.seed = seed;
  set.clips = Tensor5<float>(n, 1, kSynthT, kSynthHW, kSynthHW);
  set.labels.resize(size_t(n));
  Rng rng(seed);
  const int64_t pos_max = kSynthHW - kSynthBlob + 1;
  for (int64_t i = 0; i < n; ++i) {
    const int64_t label = i % 2;  // exact balance
    int64_t t1, t2;
    do {
      t1 = int64_t(rng.uniform_int(kSynthT));
      t2 = int64_t(rng.uniform_int(kSynthT));
      const int64_t gap = t1 > t2 ? t1 - t2 : t2 - t1;
      if (label == 1 ? gap <= 1 : gap >= 3) break;
    } while (true);
    const int64_t h1 = int64_t(rng.uniform_int(uint64_t(pos_max)));
    const int64_t w1 = int64_t(rng.uniform_int(uint64_t(pos_max)));
    const int64_t h2 = int64_t(rng.uniform_int(uint64_t(pos_max)));
    const int64_t w2 = int64_t(rng.uniform_int(uint64_t(pos_max)));
    // faint background noise, then the two events
    for (int64_t t = 0; t < kSynthT; ++t)
      for (int64_t h = 0; h < kSynthHW; ++h)
        for (int64_t w = 0; w < kSynthHW; ++w)
          set.clips.at(i, 0, t, h, w) = float(rng.uniform() * 0.05);
    for (int64_t dh = 0; dh < kSynthBlob; ++dh)
      for (int64_t dw = 0; dw < kSynthBlob; ++dw) {
        set.clips.at(i, 0, t1, h1 + dh, w1 + dw) = 1.0f;
        set.clips.at(i, 0, t2, h2 + dh, w2 + dw) = 1.0f;
      }
    set.labels[size_t(i)] = label;
  }
  return set;
}

// ---------------------------------------------------------------------------
// container I/O: tensor record framing as in the weight file, plus a label
// block ("SBL1" | u32 count | i64 labels[count]) appended after the clips.

inline std::string save_synth(const SyntheticVideoSet& set) {
  ParamStore<float> store;
  auto p = store.add("clips", set.clips.shape());
  p->value = set.clips;
  std::string out = save_weights(store);
  out += "SBL1";
  wire::put_u32(out, uint32_t(set.labels.size()));
  for (int64_t l : set.labels)
    for (int i = 0; i < 8; ++i) out.push_back(char((uint64_t(l) >> (8 * i)) & 0xff));
  return out;
}

inline SyntheticVideoSet load_synth(const std::string& bytes) {
  // parse the single tensor record by hand to learn its shape first
  wire::Reader r(bytes.data(), bytes.size());
  if (r.str(4) != "SBW1") throw BadMagicError("bad magic: not a data container");
  if (r.u32() != 1) throw DataError("unsupported data container version");
  if (r.u32() != 1) throw DataError("data container must hold one tensor");
  const std::string name = r.str(r.u16());
  if (name != "clips") throw DataError("data container missing clips tensor");
  if (r.u8() != 5) throw ShapeMismatchError("clips tensor must be 5-D");
  Shape5 s{int64_t(r.u32()), int64_t(r.u32()), int64_t(r.u32()),
           int64_t(r.u32()), int64_t(r.u32())};
  if (r.u8() != 0) throw UnknownDtypeError("clips tensor must be f32");
  SyntheticVideoSet set;
  set.clips = Tensor5<float>(s);
  r.raw(set.clips.data(), size_t(4 * s.numel()));
  if (r.str(4) != "SBL1") throw DataError("missing label block");
  const uint32_t count = r.u32();
  if (int64_t(count) != s.n) throw DataError("label count != clip count");
  set.labels.resize(count);
  for (uint32_t i = 0; i < count; ++i) {
    uint64_t v = 0;
    for (int b = 0; b < 8; ++b) v |= uint64_t(r.u8()) << (8 * b);
    set.labels[i] = int64_t(v);
  }
  return set;
}

}  // namespace smallbig
