#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "smallbig/analytics.hpp"
#include "smallbig/train.hpp"

using namespace smallbig;

namespace {

/// Small-but-complete ladder exercising every block variant plus attention.
NetSpec mixed_tiny_spec() {
  NetSpec spec;
  spec.stage_blocks = {1, 1, 1, 1};
  spec.width = 4;
  spec.in_channels = 1;
  spec.num_classes = 2;
  spec.block_kinds = {BlockKind::SB_Typical, BlockKind::SB_Full,
                      BlockKind::Plain2D, BlockKind::SB_TemporalPool};
  spec.nonlocal_stage = {false, false, true, false};
  spec.in_t = 4;
  spec.in_h = 16;
  spec.in_w = 16;
  return spec;
}

}  // namespace

TEST_CASE("full-network gradient matches finite differences (64-bit)") {
  CHECK(gradcheck(mixed_tiny_spec(), 2024) < 1e-4);
}

TEST_CASE("gradient check covers the single-BN and unshared paths") {
  NetSpec spec = mixed_tiny_spec();
  spec.nonlocal_stage = {false, false, false, false};
  spec.bn_policy = BnPolicy::Single;
  CHECK(gradcheck(spec, 2025) < 1e-4);
  spec.bn_policy = BnPolicy::Individual;
  spec.share = false;
  CHECK(gradcheck(spec, 2026) < 1e-4);
}

TEST_CASE("gradient check covers average pooling in the big view") {
  NetSpec spec = mixed_tiny_spec();
  spec.nonlocal_stage = {false, false, false, false};
  spec.pool_mode = PoolMode::Avg;
  CHECK(gradcheck(spec, 2027) < 1e-4);
}

TEST_CASE("backward is deterministic and thread-count independent") {
  NetSpec spec = mixed_tiny_spec();
  auto run = [&](int threads) {
#ifdef _OPENMP
    omp_set_num_threads(threads);
#else
    (void)threads;
#endif
    auto net = build_net<float>(spec);
    init_random_he(net->store, 3);
    Rng rng(4);
    Tensor5<float> x(2, 1, 4, 16, 16);
    fill_uniform(x, rng);
    std::vector<int64_t> labels{0, 1};
    net->store.zero_grads();
    auto lr = cross_entropy(net->forward(x, true), labels);
    net->backward(lr.glogits);
    uint64_t h = 1469598103934665603ull;
    auto mix = [&h](float v) {
      uint32_t bits;
      std::memcpy(&bits, &v, 4);
      for (int i = 0; i < 4; ++i) {
        h ^= (bits >> (8 * i)) & 0xff;
        h *= 1099511628211ull;
      }
    };
    for (const auto& p : net->store.canonical())
      for (int64_t i = 0; i < p->grad.numel(); ++i) mix(p->grad[i]);
    return h;
  };
  const uint64_t h1 = run(1);
  const uint64_t h4 = run(4);
#ifdef _OPENMP
  omp_set_num_threads(omp_get_num_procs());
#endif
  CHECK(h1 == h4);
}

TEST_CASE("non-finite losses abort with the offending layer named") {
  NetSpec spec = mixed_tiny_spec();
  spec.nonlocal_stage = {false, false, false, false};
  auto net = build_net<float>(spec);
  init_random_he(net->store, 6);
  // poison the classifier weight: a NaN planted earlier would be flushed by
  // the next relu (max(NaN,0) picks 0), so the head is the realistic source
  net->store.get("fc.w")->value[0] = std::numeric_limits<float>::quiet_NaN();
  Rng rng(7);
  Tensor5<float> x(1, 1, 4, 16, 16);
  fill_uniform(x, rng);
  TrainConfig cfg;
  try {
    train_step(*net, x, {0}, 0.01, cfg);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("fc") != std::string::npos);
  }
}
