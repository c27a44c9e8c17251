#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "smallbig/clip.hpp"
#include "smallbig/network.hpp"
#include "smallbig/synth.hpp"

namespace smallbig {

enum class LrSchedule { Cosine, Step };

struct TrainConfig {
  int64_t epochs = 50;
  double base_lr = 0.01;
  int64_t batch_size = 8;
  double weight_decay = 1e-4;
  double momentum = 0.9;
  LrSchedule schedule = LrSchedule::Cosine;
  std::vector<int64_t> milestones{30, 40, 45};  // step schedule only
  uint64_t seed = 0;
};

inline double lr_at(const TrainConfig& cfg, int64_t epoch) {
  if (epoch < 0 || epoch >= cfg.epochs)
    throw ConfigError("lr_at: epoch " + std::to_string(epoch) +
                      " outside [0," + std::to_string(cfg.epochs) + ")");
  if (cfg.schedule == LrSchedule::Cosine)
    return cfg.base_lr * 0.5 *
           (1.0 + std::cos(M_PI * double(epoch) / double(cfg.epochs)));
  int hits = 0;
  for (int64_t m : cfg.milestones)
    if (m <= epoch) ++hits;
  return cfg.base_lr * std::pow(0.1, hits);
}

// ---------------------------------------------------------------------------

template <class T>
struct LossResult {
  double loss = 0;
  Tensor5<T> glogits;  // d loss / d logits (already averaged over batch)
};

/// Mean cross-entropy over the batch; logits are (N,K,1,1,1).
template <class T>
LossResult<T> cross_entropy(const Tensor5<T>& logits,
                            const std::vector<int64_t>& labels) {
  const Shape5& s = logits.shape();
  if (int64_t(labels.size()) != s.n)
    throw DataError("cross_entropy: label count != batch size");
  LossResult<T> out;
  out.glogits = Tensor5<T>(s);
  for (int64_t n = 0; n < s.n; ++n) {
    const int64_t y = labels[size_t(n)];
    if (y < 0 || y >= s.c) throw DataError("cross_entropy: label out of range");
    double mx = -std::numeric_limits<double>::infinity();
    for (int64_t k = 0; k < s.c; ++k)
      mx = std::max(mx, double(logits.at(n, k, 0, 0, 0)));
    double sum = 0;
    for (int64_t k = 0; k < s.c; ++k)
      sum += std::exp(double(logits.at(n, k, 0, 0, 0)) - mx);
    const double logz = mx + std::log(sum);
    out.loss += (logz - double(logits.at(n, y, 0, 0, 0))) / double(s.n);
    for (int64_t k = 0; k < s.c; ++k) {
      const double p = std::exp(double(logits.at(n, k, 0, 0, 0)) - logz);
      out.glogits.at(n, k, 0, 0, 0) = T((p - (k == y ? 1.0 : 0.0)) / double(s.n));
    }
  }
  return out;
}

/// SGD with momentum plus weight decay decoupled from the loss: decayed
/// tensors first scale by (1 - lr*wd), so a zero-gradient weight shrinks by
/// exactly that factor per step. BN parameters and biases never decay.
template <class T>
void sgd_update(ParamStore<T>& store, double lr, const TrainConfig& cfg) {
  for (auto& p : store.canonical()) {
    if (!p->trainable) continue;
    if (p->velocity.numel() == 0) p->velocity = Tensor5<T>(p->value.shape());
    const T scale = T(1.0 - lr * (p->decay ? cfg.weight_decay : 0.0));
    for (int64_t i = 0; i < p->value.numel(); ++i) {
      p->velocity[i] = T(cfg.momentum) * p->velocity[i] + p->grad[i];
      p->value[i] = scale * p->value[i] - T(lr) * p->velocity[i];
    }
  }
}

/// Walk the graph on `x` and report the first node whose output is
/// non-finite (diagnostic path after a NaN loss).
template <class T>
std::string first_nonfinite_node(Network<T>& net, const Tensor5<T>& x,
                                 bool train) {
  Tensor5<T> y = x;
  for (auto& node : net.nodes()) {
    y = node->forward(y, train);
    if (!y.all_finite()) return node->name;
  }
  return "loss";
}

/// One optimizer step on a batch. Returns the (finite) loss.
template <class T>
double train_step(Network<T>& net, const Tensor5<T>& x,
                  const std::vector<int64_t>& labels, double lr,
                  const TrainConfig& cfg) {
  net.store.zero_grads();
  Tensor5<T> logits = net.forward(x, /*train=*/true);
  LossResult<T> lr_res = cross_entropy(logits, labels);
  if (!std::isfinite(lr_res.loss))
    throw NumericError("non-finite loss; first bad layer: " +
                       first_nonfinite_node(net, x, true));
  net.backward(lr_res.glogits);
  sgd_update(net.store, lr, cfg);
  return lr_res.loss;
}

// ---------------------------------------------------------------------------

/// Compare the full reverse-mode loss gradient against central finite
/// differences in 64-bit on a small random batch. Samples `samples` evenly
/// spaced coordinates per parameter tensor (plus the input) and returns the
/// worst relative error. Relative error uses a small denominator floor so
/// near-zero gradients are compared absolutely.
inline double gradcheck(const NetSpec& spec, uint64_t seed, int64_t samples = 4,
                        double step = 1e-6) {
  // step 1e-6: small enough that a probe almost never pushes a pre-activation
  // across a relu kink or flips a pooling argmax, large enough that the
  // central difference keeps ~9 significant digits in 64-bit
  auto net = build_net<double>(spec);
  init_random_he(net->store, seed);
  Rng rng(seed + 1);
  Tensor5<double> x(2, spec.in_channels, spec.in_t, spec.in_h, spec.in_w);
  fill_uniform(x, rng);
  std::vector<int64_t> labels{0, spec.num_classes > 1 ? 1 : 0};

  auto loss = [&] {
    return cross_entropy(net->forward(x, true), labels).loss;
  };
  net->store.zero_grads();
  Tensor5<double> logits = net->forward(x, true);
  LossResult<double> lr = cross_entropy(logits, labels);
  Tensor5<double> gx = net->backward(lr.glogits);

  double worst = 0;
  auto probe = [&](double& coord, double analytic) {
    const double keep = coord;
    coord = keep + step;
    const double up = loss();
    coord = keep - step;
    const double dn = loss();
    coord = keep;
    const double fd = (up - dn) / (2 * step);
    const double denom = std::max({std::abs(fd), std::abs(analytic), 1e-3});
    worst = std::max(worst, std::abs(fd - analytic) / denom);
  };
  for (auto& p : net->store.canonical()) {
    if (!p->trainable) continue;
    const int64_t stride = std::max<int64_t>(1, p->value.numel() / samples);
    for (int64_t i = 0; i < p->value.numel(); i += stride)
      probe(p->value[i], p->grad[i]);
  }
  const int64_t xstride = std::max<int64_t>(1, x.numel() / (4 * samples));
  for (int64_t i = 0; i < x.numel(); i += xstride) probe(x[i], gx[i]);
  return worst;
}

/// Fraction of clips whose argmax logit matches the label (eval mode,
/// one clip per forward pass).
template <class T>
double accuracy(Network<T>& net, const SyntheticVideoSet& data) {
  int64_t hits = 0;
  for (int64_t i = 0; i < data.size(); ++i) {
    Tensor5<T> x = data.clip(i).template cast<T>();
    Tensor5<T> logits = net.forward(x, /*train=*/false);
    int64_t best = 0;
    for (int64_t k = 1; k < logits.shape().c; ++k)
      if (logits.at(0, k, 0, 0, 0) > logits.at(0, best, 0, 0, 0)) best = k;
    if (best == data.labels[size_t(i)]) ++hits;
  }
  return double(hits) / double(data.size());
}

/// Multi-clip multi-crop inference on one source video (1,C,T,H,W): sample
/// `clips` uniformly spaced strided windows, take `crops` square crops of the
/// network's input size (3 = left/middle/right, 1 = middle), run one forward
/// pass per clip-crop pair and average the softmax scores.
template <class T>
std::vector<double> eval_protocol(Network<T>& net, const Tensor5<T>& video,
                                  int64_t clips, int64_t crops) {
  const Shape5& vs = video.shape();
  if (crops != 1 && crops != 3)
    throw ConfigError("eval_protocol: crops must be 1 or 3");
  const int64_t side = net.spec.in_h;
  std::vector<std::vector<double>> scores;
  Rng rng(0);  // eval sampling is deterministic; stream unused
  for (int64_t ci = 0; ci < clips; ++ci) {
    ClipPlan plan;
    plan.frames = net.spec.in_t;
    plan.clip_index = ci;
    plan.num_clips = clips;
    std::vector<int64_t> idx = sample_clip(vs.t, plan, rng);
    Tensor5<T> frames(1, vs.c, net.spec.in_t, vs.h, vs.w);
    for (int64_t f = 0; f < net.spec.in_t; ++f)
      for (int64_t c = 0; c < vs.c; ++c)
        for (int64_t h = 0; h < vs.h; ++h)
          for (int64_t w = 0; w < vs.w; ++w)
            frames.at(0, c, f, h, w) = video.at(0, c, idx[size_t(f)], h, w);
    std::vector<Tensor5<T>> crop_list;
    if (crops == 3) {
      auto three = eval_transform(frames, side);
      for (auto& t : three) crop_list.push_back(std::move(t));
    } else {
      Tensor5<T> r = rescale_shorter_side(frames, side);
      const Shape5& rs = r.shape();
      crop_list.push_back(
          crop(r, (rs.h - side) / 2, (rs.w - side) / 2, side, side));
    }
    for (const auto& c : crop_list) {
      Tensor5<T> logits = net.forward(c, /*train=*/false);
      std::vector<double> row(size_t(logits.shape().c), 0.0);
      for (int64_t k = 0; k < logits.shape().c; ++k)
        row[size_t(k)] = double(logits.at(0, k, 0, 0, 0));
      scores.push_back(std::move(row));
    }
  }
  return fuse_scores(scores);
}

/// Epoch-level loop over a synthetic set with seeded shuffling. Returns the
/// per-epoch mean losses.
template <class T>
std::vector<double> train_epochs(Network<T>& net, const SyntheticVideoSet& data,
                                 const TrainConfig& cfg) {
  const int64_t n = data.size();
  const Shape5& cs = data.clips.shape();
  Rng rng(cfg.seed);
  std::vector<double> losses;
  std::vector<int64_t> order(size_t(n), 0);
  for (int64_t i = 0; i < n; ++i) order[size_t(i)] = i;
  for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = lr_at(cfg, epoch);
    // Fisher-Yates with the seeded stream
    for (int64_t i = n - 1; i > 0; --i) {
      const int64_t j = rng.uniform_int(i + 1);
      std::swap(order[size_t(i)], order[size_t(j)]);
    }
    double epoch_loss = 0;
    int64_t batches = 0;
    for (int64_t b = 0; b < n; b += cfg.batch_size) {
      const int64_t bs = std::min(cfg.batch_size, n - b);
      Tensor5<T> x(bs, cs.c, cs.t, cs.h, cs.w);
      std::vector<int64_t> labels(size_t(bs), 0);
      const int64_t stride = cs.c * cs.t * cs.h * cs.w;
      for (int64_t k = 0; k < bs; ++k) {
        const int64_t src = order[size_t(b + k)];
        for (int64_t i = 0; i < stride; ++i)
          x[k * stride + i] = T(data.clips[src * stride + i]);
        labels[size_t(k)] = data.labels[size_t(src)];
      }
      epoch_loss += train_step(net, x, labels, lr, cfg);
      ++batches;
    }
    losses.push_back(epoch_loss / double(batches));
  }
  return losses;
}

}  // namespace smallbig
