#include <gtest/gtest.h>

#include "codesfm/error.hpp"
#include "codesfm/image.hpp"

namespace codesfm {
namespace {

Image ramp(int w, int h, double ax, double ay, double c) {
  Image img(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) img(x, y) = static_cast<float>(c + ax * x + ay * y);
  return img;
}

Image wavy(int w, int h) {
  Image img(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      img(x, y) = static_cast<float>(0.5 + 0.3 * std::sin(0.4 * x) * std::cos(0.3 * y));
  return img;
}

TEST(Sampling, BilinearIsExactAtPixelsAndOnRamps) {
  const Image img = ramp(10, 8, 0.03, -0.02, 0.4);
  EXPECT_NEAR(sample_bilinear(img, Vec2(3, 4)).value, img(3, 4), 1e-7);
  const Sample s = sample_bilinear(img, Vec2(3.3, 4.7));
  EXPECT_NEAR(s.value, 0.4 + 0.03 * 3.3 - 0.02 * 4.7, 1e-6);
  EXPECT_NEAR(s.gradient.x(), 0.03, 1e-6);
  EXPECT_NEAR(s.gradient.y(), -0.02, 1e-6);
}

TEST(Sampling, BSplineReproducesRampsInTheInterior) {
  const Image img = ramp(12, 12, 0.02, 0.05, 0.1);
  const Sample s = sample_bspline(img, Vec2(5.25, 6.6));
  EXPECT_NEAR(s.value, 0.1 + 0.02 * 5.25 + 0.05 * 6.6, 1e-6);
  EXPECT_NEAR(s.gradient.x(), 0.02, 1e-6);
  EXPECT_NEAR(s.gradient.y(), 0.05, 1e-6);
}

TEST(Sampling, BSplineGradientMatchesFiniteDifferences) {
  const Image img = wavy(20, 16);
  const double h = 1e-5;
  for (const Vec2 u : {Vec2(4.3, 5.1), Vec2(10.9, 2.2), Vec2(0.4, 14.7), Vec2(18.5, 0.3)}) {
    const Sample s = sample_bspline(img, u);
    const double gx = (sample_bspline(img, u + Vec2(h, 0)).value -
                       sample_bspline(img, u - Vec2(h, 0)).value) / (2 * h);
    const double gy = (sample_bspline(img, u + Vec2(0, h)).value -
                       sample_bspline(img, u - Vec2(0, h)).value) / (2 * h);
    EXPECT_NEAR(s.gradient.x(), gx, 1e-6) << u.transpose();
    EXPECT_NEAR(s.gradient.y(), gy, 1e-6) << u.transpose();
  }
}

TEST(Sampling, TapsAgreeWithDirectSampling) {
  const Image img = wavy(20, 16);
  std::vector<double> grid(img.pixels().begin(), img.pixels().end());
  for (const Vec2 u : {Vec2(4.3, 5.1), Vec2(0.0, 0.0), Vec2(19.0, 15.0), Vec2(7.5, 14.2)}) {
    const BSplineTaps t = bspline_taps(20, 16, u);
    double v = 0.0, gx = 0.0, gy = 0.0;
    for (int k = 0; k < 16; ++k) {
      v += t.weight[k] * grid[t.index[k]];
      gx += t.dx[k] * grid[t.index[k]];
      gy += t.dy[k] * grid[t.index[k]];
    }
    const Sample s = sample_grid(grid, 20, 16, u, Interpolation::CubicBSpline);
    EXPECT_NEAR(v, s.value, 1e-12);
    EXPECT_NEAR(gx, s.gradient.x(), 1e-12);
    EXPECT_NEAR(gy, s.gradient.y(), 1e-12);

    const BilinearTaps b = bilinear_taps(20, 16, u);
    double bv = 0.0;
    for (int k = 0; k < 4; ++k) bv += b.weight[k] * grid[b.index[k]];
    EXPECT_NEAR(bv, sample_grid(grid, 20, 16, u, Interpolation::Bilinear).value, 1e-12);
  }
}

TEST(Pyramid, LevelSizesHalve) {
  const ImagePyramid p = ImagePyramid::build(wavy(67, 50));
  ASSERT_EQ(p.num_levels(), 4);
  EXPECT_EQ(p.width(1), 33);
  EXPECT_EQ(p.height(1), 25);
  EXPECT_EQ(p.width(3), 8);
  EXPECT_EQ(p.height(3), 6);
  EXPECT_EQ(p.level(2).smoothed_spline.size(), p.level(2).smoothed.size());
  EXPECT_THROW(ImagePyramid::build(wavy(10, 10), 5), Error);
}

TEST(Pyramid, BoxDownsampleAverages) {
  Image img(4, 2);
  for (int i = 0; i < 8; ++i) img[i] = static_cast<float>(i);
  const Image d = downsample_box(img);
  ASSERT_EQ(d.width(), 2);
  ASSERT_EQ(d.height(), 1);
  EXPECT_FLOAT_EQ(d(0, 0), (0 + 1 + 4 + 5) / 4.0f);
  EXPECT_FLOAT_EQ(d(1, 0), (2 + 3 + 6 + 7) / 4.0f);
}

TEST(Pyramid, AffineAppliesToEveryLevel) {
  const ImagePyramid p = ImagePyramid::build(wavy(64, 48));
  const ImagePyramid q = p.with_affine(1.5, -0.1);
  for (int l = 0; l < 4; ++l) {
    EXPECT_NEAR(q.level(l).intensity(3, 2), 1.5 * p.level(l).intensity(3, 2) - 0.1, 1e-6);
    EXPECT_NEAR(q.level(l).smoothed(1, 1), 1.5 * p.level(l).smoothed(1, 1) - 0.1, 1e-6);
  }
}

}  // namespace
}  // namespace codesfm
