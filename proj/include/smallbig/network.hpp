#pragma once

#include <array>
#include <fstream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "smallbig/units.hpp"

namespace smallbig {

enum class BlockKind {
  Plain2D,        // 1x1x1 / 1x3x3 / 1x1x1 convs
  Temporal3x1x1,  // first conv inflated to 3x1x1
  SB_TemporalPool,  // two-view unit on 1st layer, pool 3x1x1
  SB_TubePool,      // two-view unit on 1st layer, pool 3x3x3
  SB_Typical,       // all three layers two-view, pools 3x3x3/3x3x3/Tx3x3
  SB_Full,          // Typical + global context gate after the residual add
};

inline BlockKind block_kind_from_string(const std::string& s) {
  if (s == "plain2d") return BlockKind::Plain2D;
  if (s == "temporal3x1x1") return BlockKind::Temporal3x1x1;
  if (s == "sb_temporal_pool") return BlockKind::SB_TemporalPool;
  if (s == "sb_tube_pool") return BlockKind::SB_TubePool;
  if (s == "sb_typical") return BlockKind::SB_Typical;
  if (s == "sb_full") return BlockKind::SB_Full;
  throw ConfigError("unknown block kind: " + s);
}

inline std::string to_string(BlockKind k) {
  switch (k) {
    case BlockKind::Plain2D: return "plain2d";
    case BlockKind::Temporal3x1x1: return "temporal3x1x1";
    case BlockKind::SB_TemporalPool: return "sb_temporal_pool";
    case BlockKind::SB_TubePool: return "sb_tube_pool";
    case BlockKind::SB_Typical: return "sb_typical";
    case BlockKind::SB_Full: return "sb_full";
  }
  return "?";
}

/// Declarative network description (see configs/ for the JSON form).
struct NetSpec {
  std::array<int, 4> stage_blocks{1, 2, 3, 1};        // R23; R50 is 3,4,6,3
  int64_t width = 64;                                 // stem channels
  int64_t in_channels = 3;
  int64_t num_classes = 400;
  std::array<BlockKind, 4> block_kinds{BlockKind::Plain2D, BlockKind::Plain2D,
                                       BlockKind::Plain2D, BlockKind::Plain2D};
  bool share = true;
  BnPolicy bn_policy = BnPolicy::Individual;
  PoolMode pool_mode = PoolMode::Max;
  bool big_bn_zero_init = true;
  std::optional<std::array<int64_t, 3>> first_pool;  // override layer-1 window
  std::array<bool, 4> nonlocal_stage{false, false, false, false};
  int64_t in_t = 8, in_h = 224, in_w = 224;

  int64_t bottleneck(int stage) const { return width << stage; }
  int64_t out_channels(int stage) const { return 4 * bottleneck(stage); }

  static NetSpec from_json(const nlohmann::json& j);
  static NetSpec from_file(const std::string& path);
  nlohmann::json to_json() const;
};

inline NetSpec NetSpec::from_json(const nlohmann::json& j) {
  NetSpec s;
  try {
    std::string depth = j.value("depth", "r23");
    if (depth == "r23")
      s.stage_blocks = {1, 2, 3, 1};
    else if (depth == "r50")
      s.stage_blocks = {3, 4, 6, 3};
    else if (depth != "custom")
      throw ConfigError("depth must be r23, r50 or custom");
    if (j.contains("stage_blocks")) {
      auto v = j.at("stage_blocks").get<std::vector<int>>();
      if (v.size() != 4) throw ConfigError("stage_blocks must have 4 entries");
      for (int i = 0; i < 4; ++i) s.stage_blocks[size_t(i)] = v[size_t(i)];
    }
    s.width = j.value("width", 64);
    s.in_channels = j.value("in_channels", 3);
    s.num_classes = j.value("num_classes", 400);
    if (j.contains("block_kinds")) {
      auto v = j.at("block_kinds").get<std::vector<std::string>>();
      if (v.size() == 1) {
        for (auto& k : s.block_kinds) k = block_kind_from_string(v[0]);
      } else if (v.size() == 4) {
        for (int i = 0; i < 4; ++i)
          s.block_kinds[size_t(i)] = block_kind_from_string(v[size_t(i)]);
      } else {
        throw ConfigError("block_kinds must have 1 or 4 entries");
      }
    }
    s.share = j.value("share", true);
    std::string bp = j.value("bn_policy", "individual");
    if (bp == "individual")
      s.bn_policy = BnPolicy::Individual;
    else if (bp == "single")
      s.bn_policy = BnPolicy::Single;
    else
      throw ConfigError("bn_policy must be individual or single");
    std::string pm = j.value("pool_mode", "max");
    if (pm == "max")
      s.pool_mode = PoolMode::Max;
    else if (pm == "avg")
      s.pool_mode = PoolMode::Avg;
    else
      throw ConfigError("pool_mode must be max or avg");
    s.big_bn_zero_init = j.value("big_bn_zero_init", true);
    if (j.contains("first_pool")) {
      auto v = j.at("first_pool").get<std::vector<int64_t>>();
      if (v.size() != 3) throw ConfigError("first_pool must have 3 entries");
      s.first_pool = {v[0], v[1], v[2]};
    }
    if (j.contains("nonlocal_stages")) {
      for (const auto& st : j.at("nonlocal_stages").get<std::vector<std::string>>()) {
        if (st == "res2") s.nonlocal_stage[0] = true;
        else if (st == "res3") s.nonlocal_stage[1] = true;
        else if (st == "res4") s.nonlocal_stage[2] = true;
        else if (st == "res5") s.nonlocal_stage[3] = true;
        else throw ConfigError("unknown stage in nonlocal_stages: " + st);
      }
    }
    if (j.contains("input")) {
      auto v = j.at("input").get<std::vector<int64_t>>();
      if (v.size() != 3) throw ConfigError("input must be [T,H,W]");
      s.in_t = v[0];
      s.in_h = v[1];
      s.in_w = v[2];
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad net config: ") + e.what());
  }
  return s;
}

inline NetSpec NetSpec::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return from_json(j);
}

inline nlohmann::json NetSpec::to_json() const {
  nlohmann::json j;
  j["depth"] = "custom";
  j["stage_blocks"] = stage_blocks;
  j["width"] = width;
  j["in_channels"] = in_channels;
  j["num_classes"] = num_classes;
  std::vector<std::string> kinds;
  for (auto k : block_kinds) kinds.push_back(to_string(k));
  j["block_kinds"] = kinds;
  j["share"] = share;
  j["bn_policy"] = bn_policy == BnPolicy::Single ? "single" : "individual";
  j["pool_mode"] = pool_mode == PoolMode::Avg ? "avg" : "max";
  j["input"] = {in_t, in_h, in_w};
  return j;
}

// ---------------------------------------------------------------------------

/// One layer slot of a bottleneck block: plain conv+BN or a two-view unit.
template <class T>
class ConvBn final : public Node<T> {
 public:
  ConvBn(const std::string& conv_name, const std::string& bn_name,
         ConvSpec spec, ParamStore<T>& store) {
    this->name = conv_name;
    auto w = store.add(conv_name + ".w", spec.weight_shape(), true, true);
    conv_ = std::make_unique<Conv3dNode<T>>(conv_name, spec, w);
    bn_ = std::make_unique<BatchNormNode<T>>(bn_name, spec.out_channels, store);
  }
  Tensor5<T> forward(const Tensor5<T>& x, bool train) override {
    return bn_->forward(conv_->forward(x, train), train);
  }
  Tensor5<T> backward(const Tensor5<T>& gy) override {
    return conv_->backward(bn_->backward(gy));
  }
  Shape5 out_shape(const Shape5& in) const override {
    return conv_->out_shape(in);
  }
  void count(const Shape5& in, std::vector<CountRow>& rows) const override {
    conv_->count(in, rows);
    bn_->count(conv_->out_shape(in), rows);
  }
  BatchNormNode<T>* bn() const { return bn_.get(); }

 private:
  std::unique_ptr<Conv3dNode<T>> conv_;
  std::unique_ptr<BatchNormNode<T>> bn_;
};

/// Bottleneck residual block: three layers (1x1x1, 1x3x3, 1x1x1), any of
/// which may be a two-view unit depending on the variant, plus an optional
/// global context gate. Spatial stride-2 sits on the middle conv; a two-view
/// middle layer pools the full-resolution input before the strided conv.
template <class T>
class BottleneckBlock final : public Node<T> {
 public:
  BottleneckBlock(const std::string& name, BlockKind kind, int64_t in_ch,
                  int64_t bottleneck_ch, int64_t out_ch, int64_t stride,
                  const NetSpec& spec, ParamStore<T>& store)
      : kind_(kind) {
    this->name = name;
    if (in_ch <= 0 || bottleneck_ch <= 0 || out_ch <= 0)
      throw ConfigError(name + ": invalid channel combination");

    const bool sb1 = kind != BlockKind::Plain2D && kind != BlockKind::Temporal3x1x1;
    const bool sb23 = kind == BlockKind::SB_Typical || kind == BlockKind::SB_Full;

    ConvSpec c1{.in_channels = in_ch, .out_channels = bottleneck_ch};
    if (kind == BlockKind::Temporal3x1x1) {
      c1.kt = 3;
      c1.pt = 1;
    }
    ConvSpec c2{.in_channels = bottleneck_ch, .out_channels = bottleneck_ch,
                .kh = 3, .kw = 3, .sh = stride, .sw = stride, .ph = 1, .pw = 1};
    ConvSpec c3{.in_channels = bottleneck_ch, .out_channels = out_ch};

    PoolSpec p1{3, 1, 1, spec.pool_mode};
    if (kind == BlockKind::SB_TubePool || sb23) p1 = {3, 3, 3, spec.pool_mode};
    if (spec.first_pool)
      p1 = {(*spec.first_pool)[0], (*spec.first_pool)[1], (*spec.first_pool)[2],
            spec.pool_mode};
    PoolSpec p2{3, 3, 3, spec.pool_mode};
    PoolSpec p3{kGlobal, 3, 3, spec.pool_mode};

    layer1_ = make_layer(name + ".conv1", name + ".bn1", c1, p1, sb1, spec, store);
    layer2_ = make_layer(name + ".conv2", name + ".bn2", c2, p2, sb23, spec, store);
    layer3_ = make_layer(name + ".conv3", name + ".bn3", c3, p3, sb23, spec, store);
    relu1_ = std::make_unique<ReluNode<T>>(name + ".relu1");
    relu2_ = std::make_unique<ReluNode<T>>(name + ".relu2");
    relu3_ = std::make_unique<ReluNode<T>>(name + ".relu3");

    if (in_ch != out_ch || stride != 1) {
      ConvSpec cs{.in_channels = in_ch, .out_channels = out_ch,
                  .sh = stride, .sw = stride};
      shortcut_ = std::make_unique<ConvBn<T>>(name + ".downsample.conv",
                                              name + ".downsample.bn", cs, store);
    }
    if (kind == BlockKind::SB_Full)
      extra_ = std::make_unique<ExtraUnit<T>>(name + ".extra", out_ch, store,
                                              spec.big_bn_zero_init);
  }

  Tensor5<T> forward(const Tensor5<T>& x, bool train) override {
    Tensor5<T> l1 = relu1_->forward(layer1_->forward(x, train), train);
    Tensor5<T> l2 = relu2_->forward(layer2_->forward(l1, train), train);
    Tensor5<T> f = layer3_->forward(l2, train);
    Tensor5<T> sc = shortcut_ ? shortcut_->forward(x, train) : x;
    Tensor5<T> y = relu3_->forward(add(f, sc), train);
    if (extra_) y = extra_->forward(y, train);
    return y;
  }

  Tensor5<T> backward(const Tensor5<T>& gy) override {
    Tensor5<T> g = extra_ ? extra_->backward(gy) : gy;
    g = relu3_->backward(g);
    Tensor5<T> g_sc = shortcut_ ? shortcut_->backward(g) : g;
    Tensor5<T> g_path = layer3_->backward(g);
    g_path = relu2_->backward(g_path);
    g_path = layer2_->backward(g_path);
    g_path = relu1_->backward(g_path);
    g_path = layer1_->backward(g_path);
    return add(g_path, g_sc);
  }

  Shape5 out_shape(const Shape5& in) const override {
    return layer3_->out_shape(layer2_->out_shape(layer1_->out_shape(in)));
  }

  void count(const Shape5& in, std::vector<CountRow>& rows) const override {
    Shape5 s1 = layer1_->out_shape(in);
    Shape5 s2 = layer2_->out_shape(s1);
    layer1_->count(in, rows);
    layer2_->count(s1, rows);
    layer3_->count(s2, rows);
    if (shortcut_) shortcut_->count(in, rows);
    if (extra_) extra_->count(layer3_->out_shape(s2), rows);
  }

  BlockKind kind() const { return kind_; }
  ExtraUnit<T>* extra() const { return extra_.get(); }

 private:
  NodePtr<T> make_layer(const std::string& conv_name, const std::string& bn_name,
                        const ConvSpec& c, const PoolSpec& p, bool smallbig,
                        const NetSpec& spec, ParamStore<T>& store) {
    if (smallbig)
      return std::make_unique<SmallBigUnit<T>>(conv_name, bn_name, c, p,
                                               spec.share, spec.bn_policy,
                                               spec.big_bn_zero_init, store);
    return std::make_unique<ConvBn<T>>(conv_name, bn_name, c, store);
  }

  BlockKind kind_;
  NodePtr<T> layer1_, layer2_, layer3_;
  std::unique_ptr<ReluNode<T>> relu1_, relu2_, relu3_;
  std::unique_ptr<ConvBn<T>> shortcut_;
  std::unique_ptr<ExtraUnit<T>> extra_;
};

// ---------------------------------------------------------------------------

template <class T>
class Network {
 public:
  NetSpec spec;
  ParamStore<T> store;

  Tensor5<T> forward(const Tensor5<T>& x, bool train = false) {
    ++forward_calls;
    Tensor5<T> y = x;
    for (auto& node : seq_) {
      try {
        y = node->forward(y, train);
      } catch (const ShapeError& e) {
        throw ShapeError(node->name + ": " + e.what());
      }
      if (!capture_name_.empty() && node->name == capture_name_) captured_ = y;
    }
    return y;
  }

  Tensor5<T> backward(const Tensor5<T>& gy) {
    Tensor5<T> g = gy;
    for (auto it = seq_.rbegin(); it != seq_.rend(); ++it) g = (*it)->backward(g);
    return g;
  }

  Shape5 output_shape(const Shape5& in) const {
    Shape5 s = in;
    for (const auto& node : seq_) s = node->out_shape(s);
    return s;
  }

  /// Shape after the node with the given name (empty if not found).
  std::optional<Shape5> shape_after(const std::string& node_name,
                                    const Shape5& in) const {
    Shape5 s = in;
    for (const auto& node : seq_) {
      s = node->out_shape(s);
      if (node->name == node_name) return s;
    }
    return std::nullopt;
  }

  const std::vector<NodePtr<T>>& nodes() const { return seq_; }

  void set_capture(const std::string& node_name) { capture_name_ = node_name; }
  const Tensor5<T>& captured() const { return captured_; }
  bool has_node(const std::string& node_name) const {
    for (const auto& n : seq_)
      if (n->name == node_name) return true;
    return false;
  }

  Shape5 input_shape(int64_t batch = 1) const {
    return {batch, spec.in_channels, spec.in_t, spec.in_h, spec.in_w};
  }

  uint64_t forward_calls = 0;

  template <class N, class... Args>
  N* emplace(Args&&... args) {
    auto node = std::make_unique<N>(std::forward<Args>(args)...);
    N* raw = node.get();
    seq_.push_back(std::move(node));
    return raw;
  }

 private:
  std::vector<NodePtr<T>> seq_;
  std::string capture_name_;
  Tensor5<T> captured_;
};

/// Assemble the full network: 1x7x7 stem, four residual stages, global
/// average pool and classifier. Matches the reference skeleton: with input
/// 8x224x224 the stages produce 8x56x56, 8x28x28, 8x14x14, 8x7x7.
template <class T>
std::unique_ptr<Network<T>> build_net(const NetSpec& spec) {
  auto net = std::make_unique<Network<T>>();
  net->spec = spec;
  ParamStore<T>& store = net->store;

  ConvSpec stem{.in_channels = spec.in_channels, .out_channels = spec.width,
                .kh = 7, .kw = 7, .sh = 2, .sw = 2, .ph = 3, .pw = 3};
  auto w = store.add("stem.conv.w", stem.weight_shape(), true, true);
  net->template emplace<Conv3dNode<T>>("stem.conv", stem, w);
  net->template emplace<BatchNormNode<T>>("stem.bn", spec.width, store);
  net->template emplace<ReluNode<T>>("stem.relu");
  net->template emplace<StridedMaxPoolNode<T>>("stem.pool", 1, 3, 3, 1, 2, 2, 0,
                                               1, 1);

  int64_t in_ch = spec.width;
  for (int stage = 0; stage < 4; ++stage) {
    const std::string stage_name = "res" + std::to_string(stage + 2);
    const int64_t bottleneck = spec.bottleneck(stage);
    const int64_t out_ch = spec.out_channels(stage);
    for (int b = 0; b < spec.stage_blocks[size_t(stage)]; ++b) {
      const int64_t stride = (stage > 0 && b == 0) ? 2 : 1;
      const std::string bname = stage_name + "." + std::to_string(b);
      net->template emplace<BottleneckBlock<T>>(
          bname, spec.block_kinds[size_t(stage)], in_ch, bottleneck, out_ch,
          stride, spec, store);
      in_ch = out_ch;
      if (spec.nonlocal_stage[size_t(stage)])
        net->template emplace<NonLocalUnit<T>>(bname + ".nl", out_ch, store);
    }
  }
  net->template emplace<GlobalAvgPoolNode<T>>("gap");
  net->template emplace<LinearNode<T>>("fc", in_ch, spec.num_classes, store);
  return net;
}

// ---------------------------------------------------------------------------
// initialization

/// He-normal for conv/fc weights, zero biases; BN parameters keep their
/// constructed values (big-view scales stay zero). Draws in registration
/// order from a single stream, so a seed pins the whole store.
template <class T>
void init_random_he(ParamStore<T>& store, uint64_t seed) {
  Rng rng(seed);
  for (auto& p : store.canonical()) {
    if (!p->trainable) continue;
    const std::string& n = p->name;
    const bool is_weight = n.size() > 2 && n.compare(n.size() - 2, 2, ".w") == 0;
    const bool is_big = n.size() > 6 && n.compare(n.size() - 6, 6, ".w_big") == 0;
    if (is_weight || is_big) {
      const Shape5& s = p->value.shape();
      const double fan_in = double(s.c * s.t * s.h * s.w);
      fill_normal(p->value, rng, 0.0, std::sqrt(2.0 / fan_in));
    } else if (n.size() > 2 && n.compare(n.size() - 2, 2, ".b") == 0) {
      p->value.zero();
    }
    // gamma/beta keep constructor defaults
  }
}

/// Initialize from a frame-level (kt == 1 kernels) donor store. Pointwise and
/// spatial kernels copy directly; 3x1x1 kernels replicate the donor scalar
/// over time divided by kt, so a static clip reproduces the donor response.
/// Names absent from the donor (big-view BNs, context gates, attention
/// blocks) keep their constructed state.
template <class T>
void init_inflate_from_2d(ParamStore<T>& store, const ParamStore<T>& donor) {
  for (auto& p : store.canonical()) {
    if (!donor.has(p->name)) continue;
    const auto d = donor.get(p->name);
    const Shape5& ts = p->value.shape();
    const Shape5& ds = d->value.shape();
    if (ts == ds) {
      p->value = d->value;
      continue;
    }
    if (ts.n == ds.n && ts.c == ds.c && ts.h == ds.h && ts.w == ds.w &&
        ds.t == 1 && ts.t > 1) {
      const double inv = 1.0 / double(ts.t);
      for (int64_t o = 0; o < ts.n; ++o)
        for (int64_t i = 0; i < ts.c; ++i)
          for (int64_t t = 0; t < ts.t; ++t)
            for (int64_t h = 0; h < ts.h; ++h)
              for (int64_t w = 0; w < ts.w; ++w)
                p->value.at(o, i, t, h, w) =
                    T(double(d->value.at(o, i, 0, h, w)) * inv);
      continue;
    }
    throw ConfigError("inflate: donor shape " + ds.str() +
                      " incompatible with " + p->name + " " + ts.str());
  }
}

/// FNV-1a over canonical parameter names and f32 payloads; stable across
/// runs with the same seed.
template <class T>
uint64_t store_checksum(const ParamStore<T>& store) {
  uint64_t h = 1469598103934665603ull;
  auto mix = [&h](const void* data, size_t len) {
    const unsigned char* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < len; ++i) {
      h ^= p[i];
      h *= 1099511628211ull;
    }
  };
  for (const auto& p : store.canonical()) {
    mix(p->name.data(), p->name.size());
    for (int64_t i = 0; i < p->value.numel(); ++i) {
      float v = float(p->value[i]);
      mix(&v, sizeof(v));
    }
  }
  return h;
}

}  // namespace smallbig
