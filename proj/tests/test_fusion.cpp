#include <gtest/gtest.h>

#include <numeric>
#include <random>

#include "model_fixtures.hpp"
#include "pathm3/fusion.hpp"
#include "pathm3/gradcheck.hpp"

using namespace pathm3;

namespace {

Tensor<double> to_tensor(const oracle::Mat& m) { return Tensor<double>({m.rows, m.cols}, m.v); }

struct FusionFixture {
  FusionConfig cfg;
  ParameterStore<double> store;
  FusionWeights w;

  FusionFixture(std::size_t blocks, std::uint64_t seed, std::size_t k = 2, std::size_t d = 4) {
    cfg.d_model = d;
    cfg.num_queries = k;
    cfg.num_blocks = blocks;
    cfg.num_heads = 2;
    cfg.vocab_size = 7;
    cfg.max_text_len = 5;
    Rng rng(seed);
    w = add_fusion(store, "fusion", cfg, 0.5, rng);
    perturb_all(store, seed + 1, 0.1);
  }

  Tensor<double> run(const Tensor<double>& image, std::optional<std::vector<int>> text, FusionMode mode) {
    Graph<double> g;
    Binder<double> bind(g, store);
    std::optional<std::span<const int>> span;
    if (text) span = std::span<const int>(*text);
    return fusion_forward(bind, g.constant(image), span, mode, w, cfg).value();
  }

  // Straight-line reimplementation of one pass through the blocks.
  oracle::Mat reference(const oracle::Mat& image, const std::vector<int>& text) const {
    WeightReader<double> r{store};
    const std::size_t k = cfg.num_queries;
    oracle::Mat x = r.mat("fusion.queries");
    if (!text.empty()) {
      oracle::Mat t = oracle::add(r.gather("fusion.text.tokens", text),
                                  oracle::rows(r.mat("fusion.text.positions"), 0, text.size()));
      x = oracle::stack_rows(x, t);
    }
    for (std::size_t b = 0; b < cfg.num_blocks; ++b) {
      const std::string p = "fusion.block" + std::to_string(b);
      const oracle::Mat h = r.ln(x, p + ".self_ln");
      x = oracle::add(r.attn(h, h, p + ".self_attn", cfg.num_heads), x);
      oracle::Mat q = oracle::rows(x, 0, k);
      q = oracle::add(r.attn(r.ln(q, p + ".cross_ln"), image, p + ".cross_attn", cfg.num_heads), q);
      if (x.rows > k) {
        x = oracle::stack_rows(q, oracle::rows(x, k, x.rows - k));
      } else {
        x = q;
      }
      x = oracle::add(r.ffn(r.ln(x, p + ".ffn_ln"), p + ".ffn"), x);
    }
    return oracle::rows(x, 0, k);
  }
};

}  // namespace

TEST(Fusion, NoBlocksReturnsQueries) {
  FusionFixture f(0, 1);
  std::mt19937_64 rng(1);
  auto image = to_tensor(oracle::random(3, 4, rng));
  auto out = f.run(image, std::vector<int>{3, 4}, FusionMode::ImageAndText);
  EXPECT_TRUE(bit_equal(out, Tensor<double>(f.store[f.w.queries.queries].tensor.shape(),
                                            f.store[f.w.queries.queries].tensor.storage())));
}

TEST(Fusion, EmptyTextMatchesImageOnly) {
  FusionFixture f(2, 2);
  std::mt19937_64 rng(2);
  auto image = to_tensor(oracle::random(5, 4, rng));
  auto a = f.run(image, std::vector<int>{}, FusionMode::ImageAndText);
  auto b = f.run(image, std::nullopt, FusionMode::ImageOnly);
  EXPECT_TRUE(bit_equal(a, b));
}

TEST(Fusion, MatchesStraightLineOracleInBothModes) {
  FusionFixture f(1, 3);
  std::mt19937_64 rng(3);
  const auto image = oracle::random(3, 4, rng);
  const std::vector<int> text{3, 5, 1};
  auto with_text = f.run(to_tensor(image), text, FusionMode::ImageAndText);
  EXPECT_LT(oracle::max_abs_diff(oracle::from_tensor(with_text), f.reference(image, text)), 1e-5);
  auto image_only = f.run(to_tensor(image), std::nullopt, FusionMode::ImageOnly);
  EXPECT_LT(oracle::max_abs_diff(oracle::from_tensor(image_only), f.reference(image, {})), 1e-5);
  // The text must actually change the result.
  EXPECT_GT(oracle::max_abs_diff(oracle::from_tensor(with_text), oracle::from_tensor(image_only)), 1e-6);
}

TEST(Fusion, FloatPathAgreesWithOracle) {
  FusionFixture f(2, 4);
  std::mt19937_64 rng(4);
  const auto image = oracle::random(6, 4, rng);
  const std::vector<int> text{2, 6};
  ParameterStore<float> single = f.store.cast<float>();
  Graph<float> g;
  Binder<float> bind(g, single);
  std::vector<float> img(image.v.begin(), image.v.end());
  auto out = fusion_forward(bind, g.constant(Tensor<float>({6, 4}, img)), std::optional<std::span<const int>>(text),
                            FusionMode::ImageAndText, f.w, f.cfg);
  EXPECT_LT(oracle::max_abs_diff(oracle::from_tensor(out.value()), f.reference(image, text)), 1e-5);
}

TEST(Fusion, ModeTextMismatch) {
  FusionFixture f(1, 5);
  auto image = Tensor<double>({2, 4}, 0.5);
  for (auto call : {std::function<void()>([&] { f.run(image, std::nullopt, FusionMode::ImageAndText); }),
                    std::function<void()>([&] { f.run(image, std::vector<int>{3}, FusionMode::ImageOnly); })}) {
    try {
      call();
      ADD_FAILURE() << "expected ModeTextMismatch";
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::ModeTextMismatch);
    }
  }
}

TEST(Fusion, WrongImageWidth) {
  FusionFixture f(1, 6);
  EXPECT_THROW(f.run(Tensor<double>({2, 5}), std::nullopt, FusionMode::ImageOnly), Error);
}

TEST(Fusion, OutputShapeIndependentOfInputs) {
  FusionFixture f(2, 7, 3, 4);
  std::mt19937_64 rng(7);
  for (std::size_t m : {1, 4, 9}) {
    for (std::size_t l : {0, 1, 5}) {
      std::vector<int> text(l, 4);
      auto image = to_tensor(oracle::random(m, 4, rng));
      EXPECT_EQ(f.run(image, text, FusionMode::ImageAndText).shape(), (Shape{3, 4}));
      EXPECT_EQ(f.run(image, std::nullopt, FusionMode::ImageOnly).shape(), (Shape{3, 4}));
    }
  }
}

TEST(Fusion, QueryOrderEquivariance) {
  FusionFixture f(2, 8, 4, 4);
  std::mt19937_64 rng(8);
  auto image = to_tensor(oracle::random(5, 4, rng));
  const std::vector<int> text{1, 3, 2};
  auto base = f.run(image, text, FusionMode::ImageAndText);
  std::vector<std::size_t> perm{2, 0, 3, 1};
  auto& q = f.store[f.w.queries.queries].tensor;
  Tensor<double> original(q.shape(), q.storage());
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) q(i, j) = original(perm[i], j);
  auto permuted = f.run(image, text, FusionMode::ImageAndText);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(permuted(i, j), base(perm[i], j), 1e-5);
}

TEST(Fusion, ImagePermutationInvariance) {
  FusionFixture f(2, 9);
  std::mt19937_64 rng(9);
  const auto image = oracle::random(7, 4, rng);
  std::vector<std::size_t> perm(7);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  oracle::Mat shuffled(7, 4);
  for (std::size_t i = 0; i < 7; ++i)
    for (std::size_t j = 0; j < 4; ++j) shuffled(i, j) = image(perm[i], j);
  for (auto mode : {FusionMode::ImageOnly, FusionMode::ImageAndText}) {
    std::optional<std::vector<int>> text;
    if (mode == FusionMode::ImageAndText) text = std::vector<int>{5, 5, 2};
    auto a = f.run(to_tensor(image), text, mode), b = f.run(to_tensor(shuffled), text, mode);
    EXPECT_LT(oracle::max_abs_diff(oracle::from_tensor(a), oracle::from_tensor(b)), 1e-5);
  }
}

TEST(Fusion, BlockGradientsPassCheck) {
  FusionFixture f(1, 10);
  std::mt19937_64 rng(10);
  auto image = to_tensor(oracle::random(3, 4, rng));
  auto probe = to_tensor(oracle::random(2, 4, rng));
  const std::vector<int> text{4, 2};
  for (auto mode : {FusionMode::ImageOnly, FusionMode::ImageAndText}) {
    ScalarFn<double> fn = [&](Graph<double>& g) {
      Binder<double> bind(g, f.store);
      std::optional<std::span<const int>> span;
      if (mode == FusionMode::ImageAndText) span = std::span<const int>(text);
      return sum(mul(fusion_forward(bind, g.constant(image), span, mode, f.w, f.cfg), g.constant(probe)));
    };
    auto report = grad_check(fn, f.store, 1e-3, 1e-2);
    for (const auto& e : report.entries) {
      // Image-only never touches the text tables, whose gradients are then 0 on both sides.
      EXPECT_TRUE(e.passed) << fusion_mode_name(mode) << " " << e.name << " " << e.max_rel_error;
    }
  }
}

TEST(ImageProjection, IdentityAndBias) {
  ParameterStore<double> store;
  Rng rng(1);
  auto proj = add_image_projection(store, "proj", 3, 3, 0.1, rng);
  store[proj.w].tensor = Tensor<double>::identity(3);
  std::mt19937_64 gen(2);
  auto e = to_tensor(oracle::random(4, 3, gen));
  {
    Graph<double> g;
    Binder<double> bind(g, store);
    EXPECT_TRUE(bit_equal(project_image_features(bind, g.constant(e), proj).value(), e));
  }
  store[proj.b].tensor = Tensor<double>::vector({1, -2, 3});
  Graph<double> g;
  Binder<double> bind(g, store);
  auto out = project_image_features(bind, g.constant(Tensor<double>({2, 3})), proj).value();
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(out(i, 0), 1.0);
    EXPECT_EQ(out(i, 1), -2.0);
    EXPECT_EQ(out(i, 2), 3.0);
  }
}

TEST(ImageProjection, MatchesAffineOracle) {
  ParameterStore<float> store;
  Rng rng(3);
  auto proj = add_image_projection(store, "proj", 5, 3, 1.0, rng);
  store[proj.b].tensor = normal_tensor<float>({3}, 1.0, rng);
  auto e = normal_tensor<float>({4, 5}, 1.0, rng);
  Graph<float> g;
  Binder<float> bind(g, store);
  auto out = project_image_features(bind, g.constant(e), proj);
  WeightReader<float> r{store};
  auto expected = oracle::affine(oracle::from_tensor(e), r.mat("proj.w"), r.vec("proj.b"));
  EXPECT_LT(oracle::max_abs_diff(oracle::from_tensor(out.value()), expected), 1e-6);
  EXPECT_THROW(project_image_features(bind, g.constant(Tensor<float>({4, 4})), proj), Error);
}
