#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "oracles.hpp"
#include "smallbig/units.hpp"

using namespace smallbig;

namespace {

template <class T>
Tensor5<T> random_tensor(const Shape5& s, Rng& rng, double lo = -1, double hi = 1) {
  Tensor5<T> x(s);
  fill_uniform(x, rng, lo, hi);
  return x;
}

/// Randomize a BN layer's state so oracle comparisons are non-trivial.
template <class T>
void randomize_bn(ParamStore<T>& store, const std::string& name, Rng& rng) {
  fill_uniform(store.get(name + ".gamma")->value, rng, 0.5, 1.5);
  fill_uniform(store.get(name + ".beta")->value, rng, -0.5, 0.5);
  fill_uniform(store.get(name + ".running_mean")->value, rng, -0.2, 0.2);
  fill_uniform(store.get(name + ".running_var")->value, rng, 0.5, 1.5);
}

}  // namespace

// ---------------------------------------------------------------------------
// temporal convolution

TEST_CASE("temconv with zero neighbor filters is a pointwise conv") {
  Rng rng(21);
  Tensor5<double> x = random_tensor<double>({1, 2, 4, 3, 3}, rng);
  Shape5 fs{3, 2, 1, 1, 1};
  Tensor5<double> tb = random_tensor<double>(fs, rng);
  Tensor5<double> zero(fs);
  Tensor5<double> y = temconv_unit(x, zero, tb, zero);
  ConvSpec pw{.in_channels = 2, .out_channels = 3};
  CHECK(max_abs_diff(y, conv3d(x, pw, tb)) == 0.0);
}

TEST_CASE("temconv on a static clip with averaging identity filters") {
  // all frames equal; Ta = Tb = Tc = I/3 -> interior frames reproduce input
  Tensor5<double> x(1, 2, 4, 2, 2);
  Rng rng(22);
  for (int64_t c = 0; c < 2; ++c)
    for (int64_t h = 0; h < 2; ++h)
      for (int64_t w = 0; w < 2; ++w) {
        const double v = rng.uniform(-1, 1);
        for (int64_t t = 0; t < 4; ++t) x.at(0, c, t, h, w) = v;
      }
  Tensor5<double> third(2, 2, 1, 1, 1);
  for (int64_t i = 0; i < 2; ++i) third.at(i, i, 0, 0, 0) = 1.0 / 3.0;
  Tensor5<double> y = temconv_unit(x, third, third, third);
  for (int64_t c = 0; c < 2; ++c)
    for (int64_t t = 1; t < 3; ++t)  // interior frames only
      for (int64_t h = 0; h < 2; ++h)
        for (int64_t w = 0; w < 2; ++w)
          CHECK(y.at(0, c, t, h, w) ==
                doctest::Approx(x.at(0, c, t, h, w)).epsilon(1e-12));
}

TEST_CASE("temconv matches the three-term summation reference") {
  Rng rng(23);
  Tensor5<double> x = random_tensor<double>({1, 2, 4, 3, 3}, rng);
  Shape5 fs{2, 2, 1, 1, 1};
  Tensor5<double> ta = random_tensor<double>(fs, rng);
  Tensor5<double> tb = random_tensor<double>(fs, rng);
  Tensor5<double> tc = random_tensor<double>(fs, rng);
  CHECK(max_rel_diff(temconv_unit(x, ta, tb, tc),
                     oracle::temconv_ref(x, ta, tb, tc)) < 1e-6);
}

// ---------------------------------------------------------------------------
// two-view unit

TEST_CASE("zero big-view scale reduces the unit to its small view") {
  Rng rng(31);
  ParamStore<float> store;
  ConvSpec cs{.in_channels = 3, .out_channels = 4};
  SmallBigUnit<float> unit("u.conv", "u.bn", cs, PoolSpec{3, 3, 3, PoolMode::Max},
                           /*share=*/true, BnPolicy::Individual,
                           /*big_bn_zero_init=*/true, store);
  fill_normal(store.get("u.conv.w")->value, rng, 0, 0.5);
  randomize_bn(store, "u.bn", rng);
  Tensor5<float> x = random_tensor<float>({2, 3, 4, 5, 5}, rng);
  Tensor5<float> small_only =
      unit.bn_small()->forward(conv3d(x, cs, store.get("u.conv.w")->value),
                               /*train=*/false);
  CHECK(max_abs_diff(unit.forward(x, false), small_only) == 0.0);
}

TEST_CASE("shared linear views distribute over the sum (BN-free algebra)") {
  // conv(x) + conv(pool(x)) == conv(x + pool(x)) with one shared filter
  for (uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed + 4000);
    ConvSpec cs{.in_channels = 2, .out_channels = 3};
    Tensor5<double> w = random_tensor<double>(cs.weight_shape(), rng);
    Tensor5<double> x = random_tensor<double>({1, 2, 3, 4, 4}, rng);
    Tensor5<double> pooled = pool3d(x, PoolSpec{3, 3, 3, PoolMode::Max}).y;
    Tensor5<double> lhs = add(conv3d(x, cs, w), conv3d(pooled, cs, w));
    Tensor5<double> rhs = conv3d(add(x, pooled), cs, w);
    CHECK(max_rel_diff(lhs, rhs) < 1e-6);
  }
}

TEST_CASE("constant input with shared filter doubles the response") {
  ConvSpec cs{.in_channels = 2, .out_channels = 2};
  Rng rng(32);
  Tensor5<double> w = random_tensor<double>(cs.weight_shape(), rng);
  Tensor5<double> x(1, 2, 3, 4, 4);
  x.fill(0.75);
  Tensor5<double> pooled = pool3d(x, PoolSpec{3, 3, 3, PoolMode::Max}).y;
  Tensor5<double> y = add(conv3d(x, cs, w), conv3d(pooled, cs, w));
  Tensor5<double> twice = conv3d(x, cs, w);
  for (int64_t i = 0; i < y.numel(); ++i)
    CHECK(y[i] == doctest::Approx(2.0 * twice[i]).epsilon(1e-12));
}

TEST_CASE("individual-BN unit equals its compositional oracle bitwise") {
  Rng rng(33);
  ParamStore<float> store;
  ConvSpec cs{.in_channels = 2, .out_channels = 3};
  PoolSpec ps{3, 3, 3, PoolMode::Max};
  SmallBigUnit<float> unit("u.conv", "u.bn", cs, ps, /*share=*/false,
                           BnPolicy::Individual, /*big_bn_zero_init=*/false,
                           store);
  fill_normal(store.get("u.conv.w")->value, rng, 0, 0.5);
  fill_normal(store.get("u.conv.w_big")->value, rng, 0, 0.5);
  randomize_bn(store, "u.bn", rng);
  randomize_bn(store, "u.bn_big", rng);
  Tensor5<float> x = random_tensor<float>({1, 2, 4, 5, 5}, rng);
  Tensor5<float> expected =
      add(unit.bn_small()->forward(conv3d(x, cs, store.get("u.conv.w")->value),
                                   false),
          unit.bn_big()->forward(
              conv3d(pool3d(x, ps).y, cs, store.get("u.conv.w_big")->value),
              false));
  CHECK(max_abs_diff(unit.forward(x, false), expected) == 0.0);
}

TEST_CASE("single-BN policy requires sharing") {
  ParamStore<float> store;
  ConvSpec cs{.in_channels = 2, .out_channels = 2};
  CHECK_THROWS_AS(SmallBigUnit<float>("u.conv", "u.bn", cs,
                                      PoolSpec{3, 3, 3, PoolMode::Max},
                                      /*share=*/false, BnPolicy::Single, true,
                                      store),
                  ConfigError);
}

TEST_CASE("property: single-BN equivalence, 100 seeds, train and eval") {
  // bn(conv(s) + conv(b)) == bn(conv(s + b)) with a shared filter
  for (uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed + 5000);
    ConvSpec cs{.in_channels = 2, .out_channels = 3};
    Tensor5<float> w = random_tensor<float>(cs.weight_shape(), rng);
    Tensor5<float> x = random_tensor<float>({2, 2, 3, 4, 4}, rng);
    Tensor5<float> b = pool3d(x, PoolSpec{3, 3, 3, PoolMode::Max}).y;
    for (bool train : {true, false}) {
      ParamStore<float> s1, s2;
      BatchNormNode<float> bn1("bn", 3, s1), bn2("bn", 3, s2);
      randomize_bn(s1, "bn", rng);
      s2.get("bn.gamma")->value = s1.get("bn.gamma")->value;
      s2.get("bn.beta")->value = s1.get("bn.beta")->value;
      s2.get("bn.running_mean")->value = s1.get("bn.running_mean")->value;
      s2.get("bn.running_var")->value = s1.get("bn.running_var")->value;
      Tensor5<float> lhs = bn1.forward(add(conv3d(x, cs, w), conv3d(b, cs, w)),
                                       train);
      Tensor5<float> rhs = bn2.forward(conv3d(add(x, b), cs, w), train);
      CHECK(max_abs_diff(lhs, rhs) < 1e-5);
    }
  }
}

TEST_CASE("single-BN unit output matches the two-conv individual sum pre-BN") {
  // unit-level: the Single policy computes one conv on the summed views
  Rng rng(34);
  ParamStore<float> store;
  ConvSpec cs{.in_channels = 2, .out_channels = 3};
  PoolSpec ps{3, 3, 3, PoolMode::Max};
  SmallBigUnit<float> unit("u.conv", "u.bn", cs, ps, true, BnPolicy::Single,
                           true, store);
  fill_normal(store.get("u.conv.w")->value, rng, 0, 0.5);
  Tensor5<float> x = random_tensor<float>({1, 2, 3, 4, 4}, rng);
  Tensor5<float> expected = unit.bn_small()->forward(
      conv3d(add(x, pool3d(x, ps).y), cs, store.get("u.conv.w")->value), false);
  CHECK(max_abs_diff(unit.forward(x, false), expected) == 0.0);
}

// ---------------------------------------------------------------------------
// nonlocal unit

TEST_CASE("nonlocal with identical position vectors is position-independent") {
  Rng rng(41);
  ParamStore<double> store;
  NonLocalUnit<double> nl("nl", 4, store);
  for (auto& p : store.canonical()) fill_normal(p->value, rng, 0, 0.5);
  Tensor5<double> x(1, 4, 2, 2, 2);
  std::vector<double> x0{0.3, -0.7, 1.1, 0.4};
  for (int64_t c = 0; c < 4; ++c)
    for (int64_t t = 0; t < 2; ++t)
      for (int64_t h = 0; h < 2; ++h)
        for (int64_t w = 0; w < 2; ++w) x.at(0, c, t, h, w) = x0[size_t(c)];
  Tensor5<double> y = nl.forward(x, false);
  const int64_t P = 8;
  // every attention row is uniform 1/P
  for (int64_t i = 0; i < P; ++i)
    for (int64_t j = 0; j < P; ++j)
      CHECK(nl.scores()[size_t(i * P + j)] == doctest::Approx(1.0 / P));
  // y = x0 + Vo Vg x0 everywhere
  const auto& vg = store.get("nl.g.w")->value;
  const auto& vo = store.get("nl.out.w")->value;
  for (int64_t c = 0; c < 4; ++c) {
    double expect = x0[size_t(c)];
    for (int64_t k = 0; k < 2; ++k) {
      double gk = 0;
      for (int64_t cc = 0; cc < 4; ++cc)
        gk += vg.at(k, cc, 0, 0, 0) * x0[size_t(cc)];
      expect += vo.at(c, k, 0, 0, 0) * gk;
    }
    for (int64_t t = 0; t < 2; ++t)
      for (int64_t h = 0; h < 2; ++h)
        for (int64_t w = 0; w < 2; ++w)
          CHECK(y.at(0, c, t, h, w) == doctest::Approx(expect).epsilon(1e-9));
  }
}

TEST_CASE("nonlocal with zero output projection is the identity") {
  Rng rng(42);
  ParamStore<float> store;
  NonLocalUnit<float> nl("nl", 4, store);
  fill_normal(store.get("nl.theta.w")->value, rng, 0, 0.5);
  fill_normal(store.get("nl.phi.w")->value, rng, 0, 0.5);
  fill_normal(store.get("nl.g.w")->value, rng, 0, 0.5);
  Tensor5<float> x = random_tensor<float>({2, 4, 2, 3, 3}, rng);
  CHECK(nl.forward(x, false) == x);
}

TEST_CASE("nonlocal P=2 toy matches the double-loop reference") {
  Rng rng(43);
  ParamStore<double> store;
  NonLocalUnit<double> nl("nl", 2, store);
  for (auto& p : store.canonical()) fill_normal(p->value, rng, 0, 0.7);
  Tensor5<double> x = random_tensor<double>({1, 2, 2, 1, 1}, rng);
  Tensor5<double> ref = oracle::nonlocal_ref(
      x, store.get("nl.theta.w")->value, store.get("nl.phi.w")->value,
      store.get("nl.g.w")->value, store.get("nl.out.w")->value);
  CHECK(max_rel_diff(nl.forward(x, false), ref) < 1e-6);
}

TEST_CASE("property: nonlocal matches reference on random shapes") {
  for (uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed + 6000);
    const int64_t c = 2 + 2 * rng.uniform_int(2);  // 2 or 4
    ParamStore<double> store;
    NonLocalUnit<double> nl("nl", c, store);
    for (auto& p : store.canonical()) fill_normal(p->value, rng, 0, 0.5);
    Tensor5<double> x = random_tensor<double>(
        {1, c, 1 + rng.uniform_int(3), 1 + rng.uniform_int(3),
         1 + rng.uniform_int(3)},
        rng);
    Tensor5<double> ref = oracle::nonlocal_ref(
        x, store.get("nl.theta.w")->value, store.get("nl.phi.w")->value,
        store.get("nl.g.w")->value, store.get("nl.out.w")->value);
    CHECK(max_rel_diff(nl.forward(x, false), ref) < 1e-6);
    // attention rows are probability distributions
    const int64_t P = nl.positions();
    for (int64_t i = 0; i < P; ++i) {
      double row = 0;
      for (int64_t j = 0; j < P; ++j) row += nl.scores()[size_t(i * P + j)];
      CHECK(row == doctest::Approx(1.0).epsilon(1e-6));
    }
  }
}

TEST_CASE("hard max-pool selection vs soft attention aggregation") {
  // one-hot spike: the tube max equals the spike exactly; the attention
  // aggregate is a strict convex combination, so it stays strictly below
  Tensor5<double> x(1, 1, 3, 3, 3);
  x.at(0, 0, 1, 1, 1) = 3.0;
  Tensor5<double> pooled = pool3d(x, PoolSpec{3, 3, 3, PoolMode::Max}).y;
  CHECK(pooled.at(0, 0, 1, 1, 1) == 3.0);  // hard: exact selection
  ParamStore<double> store;
  NonLocalUnit<double> nl("nl", 1, store);
  store.get("nl.theta.w")->value.fill(1.0);
  store.get("nl.phi.w")->value.fill(1.0);
  store.get("nl.g.w")->value.fill(1.0);
  store.get("nl.out.w")->value.fill(1.0);
  Tensor5<double> y = nl.forward(x, false);
  const double aggregate = y.at(0, 0, 1, 1, 1) - x.at(0, 0, 1, 1, 1);
  CHECK(aggregate < 3.0);  // soft: strictly below the max
  CHECK(aggregate > 0.0);  // and strictly above the min
}

// ---------------------------------------------------------------------------
// global context gate

TEST_CASE("context gate examples: closed and open attention") {
  Rng rng(51);
  for (double bias : {-20.0, 20.0}) {
    ParamStore<double> store;
    ExtraUnit<double> unit("e", 8, store, /*big_bn_zero_init=*/false);
    fill_normal(store.get("e.reduce.w")->value, rng, 0, 0.1);
    fill_normal(store.get("e.expand.w")->value, rng, 0, 0.1);
    store.get("e.expand.b")->value.fill(bias);
    Tensor5<double> x = random_tensor<double>({1, 8, 2, 4, 4}, rng);
    Tensor5<double> y = unit.forward(x, /*train=*/false);
    if (bias < 0) {
      CHECK(max_abs_diff(y, x) < 1e-6);  // gate ~0: y ~ x
    } else {
      Tensor5<double> two_x = x;
      for (int64_t i = 0; i < two_x.numel(); ++i) two_x[i] *= 2.0;
      CHECK(max_rel_diff(y, two_x) < 1e-5);  // gate ~1: y ~ 2x
    }
  }
}

TEST_CASE("context gate attention entries lie in (0,1)") {
  Rng rng(52);
  ParamStore<double> store;
  ExtraUnit<double> unit("e", 8, store);
  fill_normal(store.get("e.reduce.w")->value, rng, 0, 0.5);
  fill_normal(store.get("e.expand.w")->value, rng, 0, 0.5);
  Tensor5<double> x = random_tensor<double>({2, 8, 2, 3, 3}, rng);
  unit.forward(x, true);
  // recompute the gate from primitives and check its range
  auto gmax = global_max_pool(x);
  Tensor5<double> a = sigmoid(
      linear(relu(unit.bn_mid()->forward(
                 linear(gmax.y, store.get("e.reduce.w")->value), false)),
             store.get("e.expand.w")->value, &store.get("e.expand.b")->value));
  for (int64_t i = 0; i < a.numel(); ++i) {
    CHECK(a[i] > 0.0);
    CHECK(a[i] < 1.0);
  }
}

TEST_CASE("context gate equals its compositional oracle bitwise") {
  Rng rng(53);
  ParamStore<float> store;
  ExtraUnit<float> unit("e", 8, store, /*big_bn_zero_init=*/false);
  fill_normal(store.get("e.reduce.w")->value, rng, 0, 0.5);
  fill_normal(store.get("e.expand.w")->value, rng, 0, 0.5);
  fill_normal(store.get("e.expand.b")->value, rng, 0, 0.5);
  randomize_bn(store, "e.bn", rng);
  randomize_bn(store, "e.bn_big", rng);
  Tensor5<float> x = random_tensor<float>({2, 8, 2, 3, 3}, rng);
  // oracle from primitives, eval mode so no state mutates between the runs
  auto gmax = global_max_pool(x);
  Tensor5<float> a = sigmoid(
      linear(relu(unit.bn_mid()->forward(
                 linear(gmax.y, store.get("e.reduce.w")->value), false)),
             store.get("e.expand.w")->value, &store.get("e.expand.b")->value));
  Tensor5<float> gated(x.shape());
  const Shape5& s = x.shape();
  for (int64_t n = 0; n < s.n; ++n)
    for (int64_t c = 0; c < s.c; ++c)
      for (int64_t t = 0; t < s.t; ++t)
        for (int64_t h = 0; h < s.h; ++h)
          for (int64_t w = 0; w < s.w; ++w)
            gated.at(n, c, t, h, w) = x.at(n, c, t, h, w) * a.at(n, c, 0, 0, 0);
  Tensor5<float> expected = add(x, unit.bn_big()->forward(gated, false));
  CHECK(max_abs_diff(unit.forward(x, false), expected) == 0.0);
}

TEST_CASE("fresh context gate with zero-init scale is an identity map") {
  Rng rng(54);
  ParamStore<float> store;
  ExtraUnit<float> unit("e", 8, store);  // default: zero-init big-view scale
  fill_normal(store.get("e.reduce.w")->value, rng, 0, 0.5);
  fill_normal(store.get("e.expand.w")->value, rng, 0, 0.5);
  Tensor5<float> x = random_tensor<float>({1, 8, 2, 4, 4}, rng);
  CHECK(max_abs_diff(unit.forward(x, false), x) == 0.0);
}

// ---------------------------------------------------------------------------
// gradient soundness per unit (64-bit finite differences)

namespace {

template <class Unit>
void check_unit_gradients(Unit& unit, ParamStore<double>& store,
                          const Shape5& in_shape, uint64_t seed,
                          double tol = 1e-4) {
  Rng rng(seed);
  Tensor5<double> x = random_tensor<double>(in_shape, rng);
  Tensor5<double> r = random_tensor<double>(unit.out_shape(in_shape), rng);
  auto loss = [&] {
    Tensor5<double> y = unit.forward(x, true);
    double l = 0;
    for (int64_t i = 0; i < y.numel(); ++i) l += y[i] * r[i];
    return l;
  };
  store.zero_grads();
  loss();  // populate saved state
  Tensor5<double> gx = unit.backward(r);
  // input gradient
  const double step = 1e-6;
  for (int64_t i = 0; i < x.numel(); i += std::max<int64_t>(1, x.numel() / 25)) {
    const double keep = x[i];
    x[i] = keep + step;
    const double up = loss();
    x[i] = keep - step;
    const double dn = loss();
    x[i] = keep;
    const double fd = (up - dn) / (2 * step);
    const double denom = std::max({std::abs(fd), std::abs(gx[i]), 1e-4});
    CHECK(std::abs(fd - gx[i]) / denom < tol);
  }
  // parameter gradients (trainable only; sample a few coordinates each)
  for (auto& p : store.canonical()) {
    if (!p->trainable) continue;
    for (int64_t i = 0; i < p->value.numel();
         i += std::max<int64_t>(1, p->value.numel() / 10)) {
      const double keep = p->value[i];
      p->value[i] = keep + step;
      const double up = loss();
      p->value[i] = keep - step;
      const double dn = loss();
      p->value[i] = keep;
      const double fd = (up - dn) / (2 * step);
      const double an = p->grad[i];
      const double denom = std::max({std::abs(fd), std::abs(an), 1e-4});
      CHECK(std::abs(fd - an) / denom < tol);
    }
  }
}

}  // namespace

TEST_CASE("gradients: two-view unit, individual and single BN") {
  for (auto policy : {BnPolicy::Individual, BnPolicy::Single}) {
    ParamStore<double> store;
    ConvSpec cs{.in_channels = 2, .out_channels = 3};
    SmallBigUnit<double> unit("u.conv", "u.bn", cs,
                              PoolSpec{3, 3, 3, PoolMode::Max}, true, policy,
                              false, store);
    Rng rng(61);
    fill_normal(store.get("u.conv.w")->value, rng, 0, 0.5);
    check_unit_gradients(unit, store, {2, 2, 3, 4, 4}, 62);
  }
}

TEST_CASE("gradients: nonlocal unit") {
  ParamStore<double> store;
  NonLocalUnit<double> nl("nl", 4, store);
  Rng rng(63);
  for (auto& p : store.canonical()) fill_normal(p->value, rng, 0, 0.4);
  check_unit_gradients(nl, store, {1, 4, 2, 2, 2}, 64);
}

TEST_CASE("gradients: context gate") {
  ParamStore<double> store;
  ExtraUnit<double> unit("e", 8, store, false);
  Rng rng(65);
  fill_normal(store.get("e.reduce.w")->value, rng, 0, 0.4);
  fill_normal(store.get("e.expand.w")->value, rng, 0, 0.4);
  fill_normal(store.get("e.expand.b")->value, rng, 0, 0.4);
  check_unit_gradients(unit, store, {2, 8, 2, 3, 3}, 66);
}

TEST_CASE("gradients: batch norm train mode") {
  ParamStore<double> store;
  BatchNormNode<double> bn("bn", 3, store);
  Rng rng(67);
  fill_uniform(store.get("bn.gamma")->value, rng, 0.5, 1.5);
  fill_uniform(store.get("bn.beta")->value, rng, -0.5, 0.5);
  check_unit_gradients(bn, store, {2, 3, 2, 3, 3}, 68);
}
