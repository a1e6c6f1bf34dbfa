#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "oracle.hpp"
#include "pathm3/gradcheck.hpp"
#include "pathm3/graph.hpp"
#include "pathm3/layers.hpp"

using namespace pathm3;

namespace {

template <typename F>
void expect_error(ErrorKind kind, F&& f) {
  try {
    f();
    ADD_FAILURE() << "expected " << error_kind_name(kind);
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), kind) << e.what();
  }
}

Tensor<float> random_tensor(Shape shape, std::mt19937_64& rng, double stddev = 1.0) {
  return normal_tensor<float>(std::move(shape), stddev, rng);
}

}  // namespace

TEST(Tensor, ShapeInvariantHolds) {
  Tensor<float> t({2, 3});
  EXPECT_EQ(t.size(), 6u);
  expect_error(ErrorKind::ShapeMismatch, [] { Tensor<float>({2, 3}, std::vector<float>(5)); });
  expect_error(ErrorKind::ShapeMismatch, [] { Tensor<float>({2, 0}); });
}

TEST(MatMul, IdentityLeavesMatrixUnchanged) {
  Graph<float> g;
  auto x = Tensor<float>::matrix({{1.5f, -2.f, 3.f}, {0.25f, 7.f, -1.f}});
  auto out = matmul(g.constant(Tensor<float>::identity(2)), g.constant(x));
  EXPECT_TRUE(bit_equal(out.value(), x));
}

TEST(MatMul, SmallProduct) {
  Graph<float> g;
  auto out = matmul(g.constant(Tensor<float>::matrix({{1, 2}, {3, 4}})), g.constant(Tensor<float>::matrix({{0}, {1}})));
  EXPECT_EQ(out.shape(), (Shape{2, 1}));
  EXPECT_EQ(out.value()[0], 2.f);
  EXPECT_EQ(out.value()[1], 4.f);
}

TEST(MatMul, MatchesTripleLoopOracle) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    std::uniform_int_distribution<std::size_t> dim(1, 8);
    const std::size_t m = trial == 0 ? 3 : dim(rng), k = trial == 0 ? 4 : dim(rng), n = trial == 0 ? 2 : dim(rng);
    std::uniform_real_distribution<double> u(-10.0, 10.0);
    Tensor<float> a({m, k}), b({k, n});
    for (auto& v : a.values()) v = static_cast<float>(u(rng));
    for (auto& v : b.values()) v = static_cast<float>(u(rng));
    Graph<float> g;
    auto c = matmul(g.constant(a), g.constant(b));
    const auto expected = oracle::matmul(oracle::from_tensor(a), oracle::from_tensor(b));
    // Entries up to 10, so products are O(100·k); compare at float resolution of the result.
    for (std::size_t i = 0; i < c.value().size(); ++i) {
      EXPECT_NEAR(c.value()[i], expected.v[i], 1e-6 * std::max(1.0, std::abs(expected.v[i])));
    }
  }
}

TEST(MatMul, Errors) {
  Graph<float> g;
  expect_error(ErrorKind::ShapeMismatch, [&] { matmul(g.constant(Tensor<float>({2, 3})), g.constant(Tensor<float>({2, 3}))); });
  Tensor<float> bad({1, 1});
  bad[0] = std::numeric_limits<float>::quiet_NaN();
  expect_error(ErrorKind::NonFinite, [&] { g.constant(bad); });
}

TEST(Softmax, EqualValuesGiveUniformRow) {
  Graph<float> g;
  auto y = softmax_rows(g.constant(Tensor<float>::matrix({{5, 5, 5}})));
  for (float v : y.value().values()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-7);
}

TEST(Softmax, ShiftInvariant) {
  std::mt19937_64 rng(3);
  auto x = random_tensor({4, 6}, rng);
  auto shifted = x;
  for (auto& v : shifted.values()) v += 17.25f;
  Graph<float> g;
  auto a = softmax_rows(g.constant(x));
  auto b = softmax_rows(g.constant(shifted));
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(a.value()[i], b.value()[i], 1e-6);
}

TEST(Softmax, LogPowersOfTwo) {
  Graph<double> g;
  auto y = softmax_rows(g.constant(Tensor<double>::matrix({{0.0, std::log(2.0), std::log(4.0)}})));
  // exp gives 1, 2, 4; normalised by 7.
  EXPECT_NEAR(y.value()[0], 1.0 / 7.0, 1e-12);
  EXPECT_NEAR(y.value()[1], 2.0 / 7.0, 1e-12);
  EXPECT_NEAR(y.value()[2], 4.0 / 7.0, 1e-12);
}

TEST(Softmax, RowsSumToOneAndStayInOpenInterval) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    auto x = random_tensor({5, 7}, rng, 3.0);
    Graph<float> g;
    auto y = softmax_rows(g.constant(x));
    for (std::size_t i = 0; i < 5; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < 7; ++j) {
        const float p = y.value()(i, j);
        EXPECT_GT(p, 0.f);
        EXPECT_LT(p, 1.f);
        s += p;
      }
      EXPECT_NEAR(s, 1.0, 1e-6);
    }
  }
}

TEST(Softmax, CausalMaskZeroesFuture) {
  Graph<float> g;
  auto y = causal_softmax_rows(g.constant(Tensor<float>::matrix({{1, 2, 3}, {1, 2, 3}, {1, 2, 3}})));
  EXPECT_EQ(y.value()(0, 0), 1.f);
  EXPECT_EQ(y.value()(0, 1), 0.f);
  EXPECT_EQ(y.value()(1, 2), 0.f);
  EXPECT_NEAR(y.value()(1, 0) + y.value()(1, 1), 1.0, 1e-7);
}

TEST(LayerNorm, ConstantRowMapsToZero) {
  Graph<float> g;
  auto y = layer_norm(g.constant(Tensor<float>::matrix({{4, 4, 4}})), g.constant(Tensor<float>({3}, 1.f)),
                      g.constant(Tensor<float>({3})));
  for (float v : y.value().values()) EXPECT_EQ(v, 0.f);
}

TEST(LayerNorm, StandardisedRowIsFixedPoint) {
  Graph<double> g;
  auto y = layer_norm(g.constant(Tensor<double>::matrix({{-1, 1}})), g.constant(Tensor<double>({2}, 1.0)),
                      g.constant(Tensor<double>({2})), 1e-12);
  EXPECT_NEAR(y.value()[0], -1.0, 1e-9);
  EXPECT_NEAR(y.value()[1], 1.0, 1e-9);
}

TEST(LayerNorm, RandomRowHasZeroMeanUnitVariance) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    auto x = random_tensor({1, 16}, rng, 4.0);
    Graph<float> g;
    auto y = layer_norm(g.constant(x), g.constant(Tensor<float>({16}, 1.f)), g.constant(Tensor<float>({16})));
    double mu = 0.0, var = 0.0;
    for (float v : y.value().values()) mu += v;
    mu /= 16.0;
    for (float v : y.value().values()) var += (v - mu) * (v - mu);
    var /= 16.0;
    EXPECT_LT(std::abs(mu), 1e-6);
    EXPECT_LT(std::abs(var - 1.0), 1e-4);
  }
}

TEST(LayerNorm, GammaLengthChecked) {
  Graph<float> g;
  expect_error(ErrorKind::ShapeMismatch, [&] {
    layer_norm(g.constant(Tensor<float>({2, 3})), g.constant(Tensor<float>({2}, 1.f)), g.constant(Tensor<float>({3})));
  });
}

TEST(CrossEntropy, ConfidentCorrectIsNearZero) {
  Graph<float> g;
  auto loss = cross_entropy_from_logits(g.constant(Tensor<float>::vector({50, -50, -50})), 0);
  EXPECT_LT(loss.value()[0], 1e-6);
}

TEST(CrossEntropy, UniformLogitsGiveLogC) {
  for (int label = 0; label < 3; ++label) {
    Graph<float> g;
    auto loss = cross_entropy_from_logits(g.constant(Tensor<float>::vector({0, 0, 0})), label);
    EXPECT_NEAR(loss.value()[0], std::log(3.0), 1e-6);
  }
}

TEST(CrossEntropy, MatchesScalarOracle) {
  Graph<float> g;
  auto loss = cross_entropy_from_logits(g.constant(Tensor<float>::vector({1, 2, 3})), 2);
  const double expected = -std::log(std::exp(3.0) / (std::exp(1.0) + std::exp(2.0) + std::exp(3.0)));
  EXPECT_NEAR(loss.value()[0], expected, 1e-6);
}

TEST(CrossEntropy, GradientIsSoftmaxMinusOneHot) {
  Graph<double> g;
  auto logits = g.input(Tensor<double>::vector({0.3, -1.2, 2.0}).set_requires_grad(true));
  g.backward(cross_entropy_from_logits(logits, 1));
  const std::vector<double> z{0.3, -1.2, 2.0};
  const double lse = oracle::log_sum_exp(z);
  for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(g.grad(logits)[j], std::exp(z[j] - lse) - (j == 1 ? 1.0 : 0.0), 1e-12);
}

TEST(CrossEntropy, LabelOutOfRange) {
  Graph<float> g;
  expect_error(ErrorKind::LabelOutOfRange, [&] { cross_entropy_from_logits(g.constant(Tensor<float>::vector({0, 0})), 2); });
  expect_error(ErrorKind::LabelOutOfRange, [&] { cross_entropy_from_logits(g.constant(Tensor<float>::vector({0, 0})), -1); });
}

TEST(Backward, SumGivesOnes) {
  std::mt19937_64 rng(1);
  Graph<float> g;
  auto x = g.input(random_tensor({3, 4}, rng).set_requires_grad(true));
  g.backward(sum(x));
  for (float d : g.grad(x)) EXPECT_EQ(d, 1.f);
}

TEST(Backward, HalfSquaredNormGivesIdentity) {
  std::mt19937_64 rng(2);
  auto xv = random_tensor({2, 5}, rng);
  Graph<float> g;
  auto x = g.input(Tensor<float>(xv).set_requires_grad(true));
  g.backward(scale(sum(mul(x, x)), 0.5f));
  for (std::size_t i = 0; i < xv.size(); ++i) EXPECT_FLOAT_EQ(g.grad(x)[i], xv[i]);
}

TEST(Backward, RepeatedCallsAccumulate) {
  ParameterStore<float> store;
  auto id = store.add("w", Tensor<float>::vector({1, 2}));
  Graph<float> g;
  auto root = sum(g.param(store[id]));
  g.backward(root);
  g.backward(root);
  for (float d : store[id].tensor.grad()) EXPECT_EQ(d, 2.f);
}

TEST(Backward, Errors) {
  Graph<float> g;
  auto x = g.input(Tensor<float>({2, 2}).set_requires_grad(true));
  expect_error(ErrorKind::NotScalar, [&] { g.backward(x); });
  auto c = sum(g.constant(Tensor<float>({2, 2})));
  expect_error(ErrorKind::DetachedRoot, [&] { g.backward(c); });
  Graph<float> other;
  auto y = sum(other.input(Tensor<float>({1}).set_requires_grad(true)));
  expect_error(ErrorKind::DetachedRoot, [&] { g.backward(y); });
}

TEST(Backward, CompositeMatchesFiniteDifferences) {
  std::mt19937_64 rng(21);
  ParameterStore<double> store;
  auto a = store.add("a", normal_tensor<double>({3, 4}, 1.0, rng));
  auto b = store.add("b", normal_tensor<double>({4, 5}, 1.0, rng));
  ScalarFn<double> f = [&](Graph<double>& g) { return mean(softmax_rows(matmul(g.param(store[a]), g.param(store[b])))); };
  // mean of row-stochastic rows is constant, so weight the result to make it informative.
  ScalarFn<double> weighted = [&](Graph<double>& g) {
    auto s = softmax_rows(matmul(g.param(store[a]), g.param(store[b])));
    Tensor<double> w({3, 5});
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = static_cast<double>(i % 7) - 3.0;
    return mean(mul(s, g.constant(w)));
  };
  EXPECT_TRUE(grad_check(f, store, 1e-3, 1e-2).all_passed);
  auto report = grad_check(weighted, store, 1e-3, 1e-2);
  EXPECT_TRUE(report.all_passed) << report.max_rel_error;
}

TEST(GradCheck, ConstantFunctionPasses) {
  ParameterStore<double> store;
  store.add("theta", Tensor<double>::vector({1.0, 2.0}));
  ScalarFn<double> f = [](Graph<double>& g) { return g.constant(Tensor<double>::scalar(4.0)); };
  auto report = grad_check(f, store, 1e-3, 1e-2);
  EXPECT_TRUE(report.all_passed);
  EXPECT_EQ(report.max_rel_error, 0.0);
}

TEST(GradCheck, SquareAtThree) {
  ParameterStore<double> store;
  auto id = store.add("theta", Tensor<double>::scalar(3.0));
  ScalarFn<double> f = [&](Graph<double>& g) {
    auto t = g.param(store[id]);
    return mul(t, t);
  };
  auto report = grad_check(f, store, 1e-3, 1e-2);
  ASSERT_EQ(report.entries.size(), 1u);
  EXPECT_NEAR(report.entries[0].numeric, 6.0, 1e-5);
  EXPECT_NEAR(report.entries[0].analytic, 6.0, 1e-12);
}

TEST(GradCheck, DetectsNonDeterminism) {
  ParameterStore<double> store;
  auto id = store.add("theta", Tensor<double>::scalar(1.0));
  int calls = 0;
  ScalarFn<double> f = [&](Graph<double>& g) {
    ++calls;
    return scale(g.param(store[id]), static_cast<double>(calls));
  };
  expect_error(ErrorKind::NonDeterministic, [&] { grad_check(f, store, 1e-3, 1e-2); });
}

// Every differentiable operation against central differences on random small shapes.
class OpGradient : public ::testing::TestWithParam<int> {};

TEST_P(OpGradient, PassesFiniteDifferenceCheck) {
  std::mt19937_64 rng(1000 + GetParam());
  std::uniform_int_distribution<std::size_t> dim(1, 8);
  const std::size_t m = dim(rng), k = dim(rng), n = dim(rng);
  ParameterStore<double> s;
  auto a = s.add("a", normal_tensor<double>({m, k}, 1.0, rng));
  auto b = s.add("b", normal_tensor<double>({k, n}, 1.0, rng));
  auto c = s.add("c", normal_tensor<double>({m, k}, 1.0, rng));
  auto gamma = s.add("gamma", normal_tensor<double>({k}, 1.0, rng));
  auto beta = s.add("beta", normal_tensor<double>({k}, 1.0, rng));
  auto sq = s.add("sq", normal_tensor<double>({k, k}, 1.0, rng));
  auto table = s.add("table", normal_tensor<double>({6, k}, 1.0, rng));
  Tensor<double> probe({m, n});
  for (auto& v : probe.values()) v = std::uniform_real_distribution<double>(-1, 1)(rng);
  Tensor<double> probe_k({m, k});
  for (auto& v : probe_k.values()) v = std::uniform_real_distribution<double>(-1, 1)(rng);
  const int label = static_cast<int>(rng() % k);
  std::vector<int> ids;
  for (std::size_t i = 0; i < m; ++i) ids.push_back(static_cast<int>(rng() % 6));

  // Weighted reductions so that each output entry carries a distinct weight.
  auto weigh = [&](Graph<double>& g, Var<double> x, const Tensor<double>& w) { return sum(mul(x, g.constant(w))); };

  std::vector<std::pair<std::string, ScalarFn<double>>> cases = {
      {"matmul", [&](Graph<double>& g) { return weigh(g, matmul(g.param(s[a]), g.param(s[b])), probe); }},
      {"matmul_nt",
       [&](Graph<double>& g) {
         auto r = matmul_nt(g.param(s[a]), g.param(s[c]));
         return sum(mul(r, r));
       }},
      {"transpose", [&](Graph<double>& g) { return weigh(g, transpose(transpose(g.param(s[a]))), probe_k); }},
      {"add_sub_mul",
       [&](Graph<double>& g) {
         auto x = g.param(s[a]), y = g.param(s[c]);
         return weigh(g, mul(add(x, y), sub(x, y)), probe_k);
       }},
      {"add_bias", [&](Graph<double>& g) { return weigh(g, add_bias(g.param(s[a]), g.param(s[gamma])), probe_k); }},
      {"softmax", [&](Graph<double>& g) { return weigh(g, softmax_rows(g.param(s[a])), probe_k); }},
      {"causal_softmax",
       [&](Graph<double>& g) {
         auto w = Tensor<double>({k, k});
         for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::sin(static_cast<double>(i));
         return weigh(g, causal_softmax_rows(g.param(s[sq])), w);
       }},
      {"layer_norm",
       [&](Graph<double>& g) {
         return weigh(g, layer_norm(g.param(s[a]), g.param(s[gamma]), g.param(s[beta]), 1e-5), probe_k);
       }},
      {"gelu", [&](Graph<double>& g) { return weigh(g, gelu(g.param(s[a])), probe_k); }},
      {"cross_entropy", [&](Graph<double>& g) { return cross_entropy_from_logits(slice_rows(g.param(s[a]), 0, 1), label); }},
      {"token_cross_entropy",
       [&](Graph<double>& g) {
         std::vector<int> t(m);
         for (std::size_t i = 0; i < m; ++i) t[i] = static_cast<int>((i * 3) % k);
         t[0] = -1;  // ignored row
         if (m == 1) t[0] = 0;
         return token_cross_entropy(g.param(s[a]), t, -1);
       }},
      {"mean_rows", [&](Graph<double>& g) { return sum(mul(mean_rows(g.param(s[a])), mean_rows(g.param(s[c])))); }},
      {"slices_concat",
       [&](Graph<double>& g) {
         auto x = g.param(s[a]);
         std::vector<Var<double>> parts{slice_cols(x, 0, 1), slice_cols(x, 0, k)};
         std::vector<Var<double>> stacked{concat_cols<double>(parts), concat_cols<double>(parts)};
         auto y = concat_rows<double>(stacked);
         return sum(mul(y, y));
       }},
      {"embedding",
       [&](Graph<double>& g) {
         auto e = embedding(g.param(s[table]), ids);
         return weigh(g, e, probe_k);
       }},
      {"segment_mean",
       [&](Graph<double>& g) {
         SegmentBounds seg{{0, (m + 1) / 2}};
         if (m > 1) seg.emplace_back((m + 1) / 2, m);
         auto y = segment_mean_rows(g.param(s[a]), seg);
         return sum(mul(y, y));
       }},
      {"norms_and_div",
       [&](Graph<double>& g) {
         auto x = g.param(s[sq]);
         auto scaled = div_scalar(x, mul(max_abs_col_sum(x), max_abs_row_sum(x)));
         return sum(mul(scaled, identity_minus(scaled, 2.0)));
       }},
  };
  for (auto& [name, fn] : cases) {
    auto report = grad_check(fn, s, 1e-3, 1e-2);
    EXPECT_TRUE(report.all_passed) << name << " max rel error " << report.max_rel_error;
  }
}

INSTANTIATE_TEST_SUITE_P(RandomShapes, OpGradient, ::testing::Range(0, 12));

TEST(Checkpoint, RoundTripsBitExactly) {
  std::mt19937_64 rng(99);
  ParameterStore<float> store;
  store.add("fusion.block0.selfattn.wq", normal_tensor<float>({4, 4}, 1.0, rng));
  store.add("head.b", normal_tensor<float>({3}, 1.0, rng));
  store.add("queries", normal_tensor<float>({2, 3, 5}, 1e-30, rng));
  const auto path = std::filesystem::temp_directory_path() / "pathm3_ckpt_test.pm3w";
  write_checkpoint(store, path);
  auto loaded = read_checkpoint(path);
  ASSERT_EQ(loaded.size(), store.size());
  for (const auto& p : store) {
    auto id = loaded.find(p.name);
    ASSERT_TRUE(id.has_value());
    EXPECT_TRUE(bit_equal(loaded[*id].tensor, p.tensor)) << p.name;
  }
  std::filesystem::remove(path);
}

TEST(Checkpoint, RejectsBadMagic) {
  const auto path = std::filesystem::temp_directory_path() / "pathm3_bad_magic.pm3w";
  {
    std::ofstream out(path, std::ios::binary);
    out << "XXXXjunkjunk";
  }
  expect_error(ErrorKind::BadMagic, [&] { read_checkpoint(path); });
  std::filesystem::remove(path);
}

TEST(ParameterStore, NamesAreUnique) {
  ParameterStore<float> store;
  store.add("w", Tensor<float>({1}));
  expect_error(ErrorKind::DuplicateName, [&] { store.add("w", Tensor<float>({1})); });
}
