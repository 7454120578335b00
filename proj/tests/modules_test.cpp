#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "sfcl/checks.hpp"
#include "sfcl/model.hpp"

using namespace sfcl;

namespace {

Tensor<double> random_tensor(Shape dims, std::uint64_t seed, double lo = -1, double hi = 1) {
  Rng rng(seed);
  Tensor<double> t(std::move(dims));
  for (auto& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

Var<double> leaf(Tensor<double> t) { return Var<double>::leaf(std::move(t)); }

/// Moves spatial position (i,j) of every channel to perm(i,j).
Tensor<double> permute_positions(const Tensor<double>& x, std::uint64_t seed) {
  const std::size_t n = x.dim(0), c = x.dim(1), p = x.dim(2) * x.dim(3);
  std::vector<std::size_t> perm(p);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(perm);
  Tensor<double> y(x.dims());
  for (std::size_t a = 0; a < n * c; ++a)
    for (std::size_t k = 0; k < p; ++k) y[a * p + perm[k]] = x[a * p + k];
  return y;
}

}  // namespace

TEST(SbcmTest, DepthChainAndConfig) {
  local::SbcmConfig cfg;
  EXPECT_EQ(cfg.depth_chain(), (std::vector<std::size_t>{64, 20, 8, 3}));
  cfg.strides = {2, 2, 2};
  EXPECT_THROW(cfg.validate(), ConfigError);
  local::SbcmConfig w;
  w.widths = {16, 32, 48};
  EXPECT_THROW(w.validate(), ConfigError);
}

TEST(SbcmTest, OutputDims) {
  nn::ParamStore<double> store;
  Rng rng(1);
  local::Sbcm<double> m(local::SbcmConfig{}, store, rng);
  auto y = m.forward(leaf(random_tensor({3, 64, 8, 8}, 2)), Mode::infer);
  EXPECT_EQ(y.dims(), (Shape{64, 3, 8, 8}));
  auto yb = m.forward(leaf(random_tensor({2, 3, 64, 2, 3}, 2)), Mode::train);
  EXPECT_EQ(yb.dims(), (Shape{2, 64, 3, 2, 3}));
  EXPECT_THROW((void)m.forward(leaf(random_tensor({3, 63, 2, 2}, 2)), Mode::infer), ShapeError);
}

TEST(SbcmTest, ZeroInZeroOut) {
  nn::ParamStore<double> store;
  Rng rng(1);
  local::Sbcm<double> m(local::SbcmConfig{}, store, rng);
  const auto y = m.forward(leaf(Tensor<double>({3, 64, 4, 4})), Mode::infer);
  for (double v : y.value().values()) EXPECT_EQ(v, 0.0);
}

TEST(SbcmTest, NoSpatialMixing) {
  nn::ParamStore<double> store;
  Rng rng(3);
  local::Sbcm<double> m(local::SbcmConfig{}, store, rng);
  auto x = random_tensor({3, 64, 3, 3}, 4);
  auto x2 = x;
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t b = 0; b < 64; ++b) x2.at(c, b, 1, 2) += 5.0;
  auto a = m.forward(leaf(x), Mode::infer).value(), b = m.forward(leaf(x2), Mode::infer).value();
  for (std::size_t c = 0; c < 64; ++c)
    for (std::size_t d = 0; d < 3; ++d)
      for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j)
          if (i != 1 || j != 2) EXPECT_EQ(a.at(c, d, i, j), b.at(c, d, i, j));
}

TEST(FlattenTest, Layout) {
  auto x = random_tensor({64, 3, 8, 8}, 5);
  auto y = local::flatten_bands(leaf(x)).value();
  EXPECT_EQ(y.dims(), (Shape{192, 8, 8}));
  EXPECT_EQ(y.at(17, 4, 6), x.at(5, 2, 4, 6));
  EXPECT_EQ(y.reshaped({64, 3, 8, 8}), x);
  EXPECT_THROW((void)local::flatten_bands(leaf(Tensor<double>({63, 3, 8, 8}))), ShapeError);
}

TEST(CnnfTest, OutputLength) {
  nn::ParamStore<double> store;
  Rng rng(1);
  local::CnnfConfig cfg;
  cfg.blocks = {{32, 2}, {32, 2}, {2048, 1}};
  local::Cnnf<double> m(cfg, store, rng);
  auto y = m.forward(leaf(random_tensor({192, 8, 8}, 2)), Mode::infer);
  EXPECT_EQ(y.dims(), (Shape{2048}));
  auto c = m.forward(leaf(Tensor<double>({2, 192, 4, 4}, 3.0)), Mode::train);
  for (double v : c.value().values()) EXPECT_TRUE(std::isfinite(v));
  EXPECT_EQ(local::CnnfConfig{}.output_dim(), 2048u);
}

TEST(CnnfTest, CollapseRejected) {
  nn::ParamStore<double> store;
  Rng rng(1);
  local::CnnfConfig cfg;
  cfg.blocks = {{8, 2}, {8, 2}, {8, 2}};
  local::Cnnf<double> m(cfg, store, rng);
  EXPECT_THROW((void)m.forward(leaf(random_tensor({192, 2, 2}, 2)), Mode::infer), ConfigError);
}

TEST(CnnfTest, PermutationInvariantPointwise) {
  nn::ParamStore<double> store;
  Rng rng(7);
  local::CnnfConfig cfg;
  cfg.blocks = {{16, 1}, {8, 1}};
  cfg.depthwise_kernel = 1;
  local::Cnnf<double> m(cfg, store, rng);
  auto x = random_tensor({2, 192, 3, 4}, 8);
  auto a = m.forward(leaf(x), Mode::train).value();
  auto b = m.forward(leaf(permute_positions(x, 9)), Mode::train).value();
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
}

TEST(BackboneTest, Shapes) {
  nn::ParamStore<double> store;
  Rng rng(1);
  spatial::Backbone<double> m(spatial::BackboneConfig{}, store, rng);
  auto xs = m.stem_forward(leaf(random_tensor({3, 64, 64}, 2, 0, 1)), Mode::infer);
  EXPECT_EQ(xs.dims(), (Shape{64, 8, 8}));
  EXPECT_EQ(m.deep_forward(xs, Mode::infer).dims(), (Shape{1792}));
  EXPECT_THROW((void)m.stem_forward(leaf(random_tensor({3, 60, 64}, 2)), Mode::infer), InputError);
  spatial::BackboneConfig bad;
  bad.stem = {{8, 2}, {8, 2}};
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(BackboneTest, ZeroImageZeroFeatures) {
  nn::ParamStore<double> store;
  Rng rng(1);
  spatial::Backbone<double> m(ModelConfig::tiny().backbone, store, rng);
  const auto y = m.stem_forward(leaf(Tensor<double>({3, 16, 16})), Mode::infer);
  for (double v : y.value().values()) EXPECT_EQ(v, 0.0);
}

TEST(BackboneTest, DeepPermutationInvariantPointwise) {
  nn::ParamStore<double> store;
  Rng rng(3);
  spatial::BackboneConfig cfg = ModelConfig::tiny().backbone;
  cfg.deep = {{8, 1}, {6, 1}};
  cfg.deep_kernel = 1;
  spatial::Backbone<double> m(cfg, store, rng);
  auto x = random_tensor({2, 64, 3, 3}, 4);
  auto a = m.deep_forward(leaf(x), Mode::train).value();
  auto b = m.deep_forward(leaf(permute_positions(x, 5)), Mode::train).value();
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
}

TEST(BackboneTest, DeepCollapseRejected) {
  nn::ParamStore<double> store;
  Rng rng(3);
  spatial::Backbone<double> m(spatial::BackboneConfig{}, store, rng);
  EXPECT_THROW((void)m.deep_forward(leaf(random_tensor({64, 1, 1}, 1)), Mode::infer), ConfigError);
}

TEST(FaaeTest, ZeroInputsUniformAttention) {
  nn::ParamStore<double> store;
  Rng rng(1);
  fusion::Faae<double> m(fusion::FaaeConfig{}, store, rng);
  auto a = m.attention(leaf(Tensor<double>({192, 2, 3})), leaf(Tensor<double>({64, 2, 3}))).value();
  EXPECT_EQ(a.dims(), (Shape{6, 6}));
  for (double v : a.values()) EXPECT_NEAR(v, 1.0 / 6.0, 1e-15);
}

TEST(FaaeTest, RowsSumToOne) {
  nn::ParamStore<double> store;
  Rng rng(1);
  fusion::Faae<double> m(fusion::FaaeConfig{}, store, rng);
  for (std::uint64_t s = 0; s < 20; ++s) {
    auto a = m.attention(leaf(random_tensor({2, 192, 3, 3}, s, -3, 3)), leaf(random_tensor({2, 64, 3, 3}, s + 50, -3, 3))).value();
    for (std::size_t r = 0; r < 18; ++r) {
      double t = 0;
      for (std::size_t j = 0; j < 9; ++j) {
        EXPECT_GE(a[r * 9 + j], 0.0);
        t += a[r * 9 + j];
      }
      EXPECT_NEAR(t, 1.0, 1e-6);
    }
  }
}

TEST(FaaeTest, AttentionMatchesLoops) {
  nn::ParamStore<double> store;
  Rng rng(2);
  fusion::FaaeConfig cfg;
  cfg.attn_dim = 5;
  fusion::Faae<double> m(cfg, store, rng);
  auto xf = random_tensor({192, 2, 2}, 3), xs = random_tensor({64, 2, 2}, 4);
  auto alpha = m.attention(leaf(xf), leaf(xs)).value();
  auto w = [&](const char* name) { return store.find(std::string("faae.") + name + ".weight")->var.value(); };
  const auto qf = w("q_freq"), qs = w("q_spatial"), kf = w("k_freq"), ks = w("k_spatial");
  auto proj = [](const Tensor<double>& wt, const Tensor<double>& x, std::size_t pos, std::size_t o) {
    double s = 0;
    for (std::size_t c = 0; c < x.dim(0); ++c) s += wt.at(o, c, 0, 0) * x[c * 4 + pos];
    return s;
  };
  for (std::size_t i = 0; i < 4; ++i) {
    std::vector<double> logits(4);
    for (std::size_t j = 0; j < 4; ++j) {
      double s = 0;
      for (std::size_t o = 0; o < 5; ++o) s += proj(qf, xf, i, o) * proj(kf, xf, j, o) + proj(qs, xs, i, o) * proj(ks, xs, j, o);
      logits[j] = s / std::sqrt(10.0);
    }
    double z = 0;
    for (double l : logits) z += std::exp(l);
    for (std::size_t j = 0; j < 4; ++j) EXPECT_LT(std::abs(alpha.at(i, j) - std::exp(logits[j]) / z) / (std::exp(logits[j]) / z), 1e-10);
  }
}

TEST(FaaeTest, ClosedGateIsIdentity) {
  nn::ParamStore<double> store;
  Rng rng(3);
  fusion::Faae<double> m(fusion::FaaeConfig{}, store, rng);
  m.gamma().mutable_value()[0] = -30.0;
  auto xs = random_tensor({2, 64, 3, 3}, 5, -2, 2);
  for (Mode mode : {Mode::infer, Mode::train}) {
    auto y = m.forward(leaf(random_tensor({2, 192, 3, 3}, 6, -2, 2)), leaf(xs), mode).enhanced.value();
    for (std::size_t i = 0; i < y.size(); ++i) EXPECT_LT(std::abs(y[i] - xs[i]), 1e-6);
  }
}

TEST(FaaeTest, HalfGateAtZero) {
  // With identity BN (infer, fresh stats) and γ=0, doubling the context
  // path output relative to γ→∞ shows the exact 0.5 factor.
  nn::ParamStore<double> store;
  Rng rng(4);
  fusion::Faae<double> m(fusion::FaaeConfig{}, store, rng);
  auto xf = leaf(random_tensor({192, 2, 2}, 7)), xs = leaf(random_tensor({64, 2, 2}, 8));
  auto y0 = m.forward(xf, xs, Mode::infer).enhanced.value();
  m.gamma().mutable_value()[0] = 40.0;  // σ = 1 to double precision
  auto y1 = m.forward(xf, xs, Mode::infer).enhanced.value();
  for (std::size_t i = 0; i < y0.size(); ++i) EXPECT_NEAR(y0[i] - xs.value()[i], 0.5 * (y1[i] - xs.value()[i]), 1e-5);
}

TEST(FaaeTest, ZeroInitOutIsExactIdentity) {
  nn::ParamStore<double> store;
  Rng rng(4);
  fusion::FaaeConfig cfg;
  cfg.zero_init_out = true;
  fusion::Faae<double> m(cfg, store, rng);
  auto xs = random_tensor({64, 2, 2}, 8);
  auto y = m.forward(leaf(random_tensor({192, 2, 2}, 7)), leaf(xs), Mode::infer).enhanced.value();
  EXPECT_EQ(y, xs);
}

TEST(FaaeTest, SpatialMismatch) {
  nn::ParamStore<double> store;
  Rng rng(4);
  fusion::Faae<double> m(fusion::FaaeConfig{}, store, rng);
  EXPECT_THROW((void)m.attention(leaf(Tensor<double>({192, 2, 2})), leaf(Tensor<double>({64, 2, 3}))), ShapeError);
}

TEST(HcmaTest, OutputAndGateRange) {
  nn::ParamStore<double> store;
  Rng rng(1);
  fusion::HcmaConfig cfg;
  cfg.spatial_dim = 40;
  cfg.freq_dim = 24;
  cfg.embed_dim = 64;
  cfg.tokens = 4;
  cfg.heads = 4;
  fusion::Hcma<double> m(cfg, store, rng);
  auto out = m.forward(leaf(random_tensor({3, 40}, 2)), leaf(random_tensor({3, 24}, 3)), leaf(random_tensor({3, 2304}, 4, -3, 3)), Mode::train);
  EXPECT_EQ(out.fused.dims(), (Shape{3, 64}));
  for (double g : out.gate.value().values()) {
    EXPECT_GT(g, 0.0);
    EXPECT_LT(g, 1.0);
  }
  EXPECT_THROW((void)m.forward(leaf(random_tensor({3, 40}, 2)), leaf(random_tensor({3, 24}, 3)), leaf(random_tensor({3, 2303}, 4)), Mode::train),
               ShapeError);
}

TEST(HcmaTest, ZeroGateWeightsHalve) {
  nn::ParamStore<double> store;
  Rng rng(1);
  fusion::HcmaConfig cfg;
  cfg.spatial_dim = 8;
  cfg.freq_dim = 8;
  cfg.embed_dim = 16;
  cfg.tokens = 2;
  cfg.heads = 2;
  fusion::Hcma<double> m(cfg, store, rng);
  store.find("hcma.gate.weight")->var.mutable_value().fill(0.0);
  store.find("hcma.gate.bias")->var.mutable_value().fill(0.0);
  auto out = m.forward(leaf(random_tensor({2, 8}, 2)), leaf(random_tensor({2, 8}, 3)), leaf(random_tensor({2, 2304}, 4)), Mode::infer);
  for (double g : out.gate.value().values()) EXPECT_EQ(g, 0.5);
  // D = 0 with a nonzero bias: g = σ(b) regardless of the image.
  store.find("hcma.gate.bias")->var.mutable_value().fill(1.25);
  auto z = m.forward(leaf(random_tensor({2, 8}, 9)), leaf(random_tensor({2, 8}, 10)), leaf(Tensor<double>({2, 2304})), Mode::infer);
  for (double g : z.gate.value().values()) EXPECT_DOUBLE_EQ(g, 1.0 / (1.0 + std::exp(-1.25)));
}

TEST(HcmaTest, FusedIsGatedResidual) {
  nn::ParamStore<double> store;
  Rng rng(2);
  fusion::HcmaConfig cfg;
  cfg.spatial_dim = 8;
  cfg.freq_dim = 8;
  cfg.embed_dim = 16;
  cfg.tokens = 4;
  cfg.heads = 2;
  fusion::Hcma<double> m(cfg, store, rng);
  store.find("hcma.gate.weight")->var.mutable_value().fill(0.0);
  store.find("hcma.gate.bias")->var.mutable_value().fill(0.0);
  cfg.use_gate = false;
  nn::ParamStore<double> store2;
  Rng rng2(2);
  fusion::Hcma<double> ungated(cfg, store2, rng2);
  auto s = leaf(random_tensor({2, 8}, 2)), f = leaf(random_tensor({2, 8}, 3)), d = leaf(random_tensor({2, 2304}, 4));
  auto a = m.forward(s, f, d, Mode::infer).fused.value();
  auto b = ungated.forward(s, f, d, Mode::infer).fused.value();
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_DOUBLE_EQ(a[i], 0.5 * b[i]);
}

TEST(HcmaTest, SingleTokenAttentionIsValues) {
  nn::ParamStore<double> store;
  Rng rng(3);
  fusion::HcmaConfig cfg;
  cfg.spatial_dim = 12;
  cfg.freq_dim = 20;
  cfg.embed_dim = 16;
  cfg.tokens = 1;
  cfg.heads = 1;
  fusion::Hcma<double> m(cfg, store, rng);
  auto out = m.forward(leaf(random_tensor({3, 12}, 4)), leaf(random_tensor({3, 20}, 5)), leaf(random_tensor({3, 2304}, 6)), Mode::train);
  EXPECT_EQ(out.attended.value(), out.values.value());
}

TEST(HcmaTest, ConfigValidation) {
  fusion::HcmaConfig cfg;
  cfg.heads = 7;
  EXPECT_THROW(cfg.validate(), ConfigError);
  fusion::HcmaConfig t;
  t.tokens = 3;
  EXPECT_THROW(t.validate(), ConfigError);
  EXPECT_NO_THROW(fusion::HcmaConfig{}.validate());
  EXPECT_EQ(fusion::HcmaConfig{}.token_dim(), 64u);
}

TEST(ClassifierTest, ZeroWeightsHalfAndMonotone) {
  nn::ParamStore<double> store;
  Rng rng(1);
  fusion::Classifier<double> c(4, store, rng);
  store.find("classifier.weight")->var.mutable_value().fill(0.0);
  auto z = c.logits(leaf(random_tensor({3, 4}, 2)));
  for (double l : z.value().values()) EXPECT_EQ(fusion::probability(l), 0.5);
  double prev = 0;
  for (double l = -10; l <= 10; l += 0.5) {
    const double p = fusion::probability(l);
    EXPECT_GT(p, prev);
    prev = p;
  }
}

TEST(ModelTest, ForwardShapesAndAblations) {
  auto input = [](std::uint64_t s) {
    return ModelInput<double>{random_tensor({2, 3, 16, 16}, s, 0, 1), random_tensor({2, 3, 64, 2, 2}, s + 1, -100, 100),
                              random_tensor({2, 2304}, s + 2, 0, 4)};
  };
  for (int variant = 0; variant < 4; ++variant) {
    ModelConfig cfg = ModelConfig::tiny();
    if (variant == 1) cfg.ablation.use_sbcm = false;
    if (variant == 2) cfg.ablation.use_hcmf = false;
    if (variant == 3) cfg.ablation.use_sida_gate = false;
    SfclModel<double> m(cfg, 5);
    auto out = m.forward(input(variant), Mode::train);
    EXPECT_EQ(out.logits.dims(), (Shape{2})) << "variant " << variant;
    for (double v : out.logits.value().values()) EXPECT_TRUE(std::isfinite(v));
  }
}

TEST(ModelTest, DeterministicAndFiniteAcrossSeeds) {
  for (std::uint64_t s = 0; s < 100; ++s) {
    SfclModel<double> m(ModelConfig::tiny(), s);
    ModelInput<double> in{random_tensor({2, 3, 16, 16}, s, 0, 1), random_tensor({2, 3, 64, 2, 2}, s + 1, -300, 300),
                          random_tensor({2, 2304}, s + 2, 0, 4)};
    auto a = m.forward(in, Mode::infer).logits.value();
    auto b = m.forward(in, Mode::infer).logits.value();
    EXPECT_EQ(a, b);
    for (double v : a.values()) ASSERT_TRUE(std::isfinite(v)) << "seed " << s;
  }
}

class ModuleGradTest : public ::testing::TestWithParam<std::tuple<std::string, std::uint64_t>> {};

TEST_P(ModuleGradTest, FiniteDifferences) {
  const auto& [module, seed] = GetParam();
  const auto r = checks::module_gradcheck(module, seed);
  EXPECT_LT(r.max_rel_err, checks::kGradTolerance) << module << " seed " << seed;
}

INSTANTIATE_TEST_SUITE_P(
    Modules, ModuleGradTest,
    ::testing::Combine(::testing::Values("sbcm", "cnnf", "backbone", "faae", "hcma", "gate", "classifier", "model"),
                       ::testing::Values(1, 2, 3, 4, 5)),
    [](const auto& info) { return std::get<0>(info.param) + "_" + std::to_string(std::get<1>(info.param)); });

TEST(ModuleGradTest, UnknownModule) { EXPECT_THROW((void)checks::module_gradcheck("xception", 1), UsageError); }
