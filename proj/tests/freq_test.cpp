#include <gtest/gtest.h>

#include <algorithm>
#include <set>

#include "oracles.hpp"
#include "sfcl/freq.hpp"
#include "sfcl/rng.hpp"

using namespace sfcl;
using namespace sfcl::freq;

namespace {

PlanarImage<double> random_rgb(std::size_t h, std::size_t w, std::uint64_t seed) {
  Rng rng(seed);
  PlanarImage<double> img(ColorSpace::rgb, h, w);
  for (auto& p : img.planes)
    for (auto& v : p) v = std::floor(rng.uniform(0, 256));
  return img;
}

PlanarImage<double> constant_rgb(std::size_t h, std::size_t w, double v) {
  PlanarImage<double> img(ColorSpace::rgb, h, w);
  for (auto& p : img.planes) std::fill(p.begin(), p.end(), v);
  return img;
}

}  // namespace

TEST(ColorTest, KnownColors) {
  auto px = [](double r, double g, double b) {
    PlanarImage<double> img(ColorSpace::rgb, 1, 1);
    img.planes = {{{r}, {g}, {b}}};
    return rgb_to_ycbcr(img);
  };
  auto black = px(0, 0, 0);
  EXPECT_NEAR(black.planes[0][0], 0, 1e-9);
  EXPECT_NEAR(black.planes[1][0], 128, 1e-9);
  EXPECT_NEAR(black.planes[2][0], 128, 1e-9);
  auto white = px(255, 255, 255);
  EXPECT_NEAR(white.planes[0][0], 255, 1e-9);
  EXPECT_NEAR(white.planes[1][0], 128, 1e-9);
  EXPECT_NEAR(white.planes[2][0], 128, 1e-9);
  auto red = px(255, 0, 0);
  EXPECT_NEAR(red.planes[0][0], 76.245, 1e-9);
  EXPECT_NEAR(red.planes[1][0], 84.97232, 1e-9);
  EXPECT_NEAR(red.planes[2][0], 255, 1e-9);
  EXPECT_THROW((void)rgb_to_ycbcr(black), UsageError);
}

TEST(ColorTest, RoundTripInsideGamut) {
  auto img = random_rgb(8, 8, 3);
  for (auto& p : img.planes)
    for (auto& v : p) v = 64 + v / 2;  // stays clear of clamping
  auto back = ycbcr_to_rgb(rgb_to_ycbcr(img));
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < 64; ++i) EXPECT_NEAR(back.planes[c][i], img.planes[c][i], 1e-3);
}

TEST(CropTest, GridTrim) {
  auto r = grid_region(17, 25, std::nullopt);
  EXPECT_EQ(r.h, 16u);
  EXPECT_EQ(r.w, 24u);
  auto b = grid_region(32, 32, BBox{3, 3, 10, 10});
  EXPECT_EQ(b.x, 3u);
  EXPECT_EQ(b.y, 3u);
  EXPECT_EQ(b.w, 8u);
  EXPECT_EQ(b.h, 8u);
  EXPECT_THROW((void)grid_region(32, 32, BBox{40, 40, 10, 10}), InputError);
  EXPECT_THROW((void)grid_region(32, 32, BBox{28, 0, 10, 10}), InputError);  // clamps to 4 wide
  auto clamp = grid_region(32, 32, BBox{-5, 20, 30, 30});
  EXPECT_EQ(clamp.x, 0u);
  EXPECT_EQ(clamp.w, 24u);
  EXPECT_EQ(clamp.h, 8u);
}

TEST(CropTest, CopiesRegion) {
  auto img = random_rgb(32, 32, 1);
  auto crop = crop_to_grid(img, BBox{3, 5, 10, 10});
  EXPECT_EQ(crop.height, 8u);
  for (std::size_t y = 0; y < 8; ++y)
    for (std::size_t x = 0; x < 8; ++x) EXPECT_EQ(crop.at(1, y, x), img.at(1, y + 5, x + 3));
}

TEST(DctTest, ConstantBlocks) {
  Tensor<double> p({8, 8}, 100.0);
  auto c = block_dct8(p);
  EXPECT_NEAR(c[0], 8 * (100.0 - 128), 1e-12);
  for (std::size_t i = 1; i < 64; ++i) EXPECT_NEAR(c[i], 0.0, 1e-12);
  auto z = block_dct8(Tensor<double>({8, 8}, 128.0));
  for (double v : z.values()) EXPECT_NEAR(v, 0.0, 1e-12);
  EXPECT_THROW((void)block_dct8(Tensor<double>({8, 12})), UsageError);
}

TEST(DctTest, InverseKnownCases) {
  const auto flat = idct8(Tensor<double>({8, 8}));
  for (double v : flat.values()) EXPECT_NEAR(v, 128.0, 1e-12);
  Tensor<double> c({8, 8});
  c[0] = 8;
  const auto raised = idct8(c);
  for (double v : raised.values()) EXPECT_NEAR(v, 129.0, 1e-12);
}

TEST(DctTest, MatchesDoubleSum) {
  Rng rng(7);
  for (int t = 0; t < 50; ++t) {
    Tensor<double> p({8, 8});
    std::array<double, 64> blk{};
    for (std::size_t i = 0; i < 64; ++i) blk[i] = p[i] = rng.uniform(0, 255);
    auto c = block_dct8(p);
    auto ref = oracle::dct8(blk);
    for (std::size_t i = 0; i < 64; ++i) EXPECT_LT(std::abs(c[i] - ref[i]), 1e-10);
  }
}

TEST(DctTest, MultiBlockPlaneRoundTrip) {
  Rng rng(9);
  Tensor<double> p({24, 16});
  for (auto& v : p.values()) v = rng.uniform(0, 255);
  auto back = idct8(block_dct8(p));
  for (std::size_t i = 0; i < p.size(); ++i) EXPECT_LT(std::abs(back[i] - p[i]), 1e-8);
  Tensor<float> pf({8, 8});
  for (std::size_t i = 0; i < 64; ++i) pf[i] = static_cast<float>(p[i]);
  auto bf = idct8(block_dct8(pf));
  for (std::size_t i = 0; i < 64; ++i) EXPECT_LT(std::abs(bf[i] - pf[i]), 1e-3f);
}

TEST(ZigzagTest, StartsLikeJpeg) {
  std::array<int, 64> b{};
  for (int i = 0; i < 64; ++i) b[i] = i;  // block[r][c] = 8r + c
  auto z = zigzag_flatten(b);
  const std::vector<int> head{0, 1, 8, 16, 9, 2, 3, 10};
  EXPECT_TRUE(std::equal(head.begin(), head.end(), z.begin()));
  EXPECT_EQ(zigzag_unflatten(z), b);
  std::set<int> seen(z.begin(), z.end());
  EXPECT_EQ(seen.size(), 64u);
}

TEST(ZigzagTest, MatchesDiagonalWalk) {
  const auto pos = oracle::zigzag_positions();
  for (std::size_t i = 0; i < 64; ++i)
    EXPECT_EQ(kZigzag[i], static_cast<std::size_t>(pos[i].first * 8 + pos[i].second)) << "scan index " << i;
}

TEST(RestructureTest, GrayIsZero) {
  auto s = restructure(constant_rgb(64, 64, 128));
  EXPECT_EQ(s.coeffs.dims(), (Shape{3, 64, 8, 8}));
  for (double v : s.coeffs.values()) EXPECT_NEAR(v, 0.0, 1e-10);
}

TEST(RestructureTest, GridDims) {
  EXPECT_EQ(restructure(random_rgb(16, 8, 1)).coeffs.dims(), (Shape{3, 64, 2, 1}));
  EXPECT_EQ(restructure(random_rgb(17, 25, 1)).coeffs.dims(), (Shape{3, 64, 2, 3}));
  EXPECT_EQ(restructure(random_rgb(40, 40, 1), BBox{4, 4, 20, 30}).coeffs.dims(), (Shape{3, 64, 3, 2}));
}

TEST(RestructureTest, DcBandMatchesBlockMeans) {
  auto img = random_rgb(32, 24, 4);
  auto ycc = rgb_to_ycbcr(img);
  auto s = restructure(img);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t r = 0; r < 4; ++r)
      for (std::size_t k = 0; k < 3; ++k) {
        double sum = 0;
        for (std::size_t y = 0; y < 8; ++y)
          for (std::size_t x = 0; x < 8; ++x) sum += ycc.at(c, r * 8 + y, k * 8 + x) - 128.0;
        EXPECT_NEAR(s.at(c, 0, r, k), sum / 8.0, 1e-9);  // DC = 8 · mean
      }
}

TEST(RestructureTest, ImageRoundTrip) {
  auto img = random_rgb(24, 16, 5);
  auto ycc = rgb_to_ycbcr(img);
  auto back = inverse_restructure(restructure(img));
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < ycc.planes[c].size(); ++i) EXPECT_LT(std::abs(back.planes[c][i] - ycc.planes[c][i]), 1e-8);

  PlanarImage<float> f(ColorSpace::rgb, 16, 16);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < 256; ++i) f.planes[c][i] = static_cast<float>(img.planes[c][i]);
  auto fy = rgb_to_ycbcr(f);
  auto fb = inverse_restructure(restructure(f));
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < 256; ++i) EXPECT_LT(std::abs(fb.planes[c][i] - fy.planes[c][i]), 1e-3f);
}
