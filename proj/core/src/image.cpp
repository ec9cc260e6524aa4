#include "codesfm/image.hpp"

#include <algorithm>
#include <cmath>

#include "codesfm/error.hpp"

namespace codesfm {

Image::Image(int width, int height, std::vector<float> data)
    : width_(width), height_(height), data_(std::move(data)) {
  if (data_.size() != static_cast<std::size_t>(width) * height) {
    throw Error(ErrorCode::DimensionMismatch, "image buffer size does not match dimensions");
  }
}

float Image::at_clamped(int x, int y) const {
  x = std::clamp(x, 0, width_ - 1);
  y = std::clamp(y, 0, height_ - 1);
  return data_[index(x, y)];
}

Image downsample_box(const Image& image) {
  const int w = image.width() / 2;
  const int h = image.height() / 2;
  Image out(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      out(x, y) = 0.25f * (image(2 * x, 2 * y) + image(2 * x + 1, 2 * y) +
                           image(2 * x, 2 * y + 1) + image(2 * x + 1, 2 * y + 1));
    }
  }
  return out;
}

Image gaussian_blur(const Image& image, double sigma) {
  if (sigma <= 0.0) return image;
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> kernel(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    kernel[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    sum += kernel[i + radius];
  }
  for (double& k : kernel) k /= sum;

  const int w = image.width();
  const int h = image.height();
  Image tmp(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) acc += kernel[i + radius] * image.at_clamped(x + i, y);
      tmp(x, y) = static_cast<float>(acc);
    }
  }
  Image out(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) acc += kernel[i + radius] * tmp.at_clamped(x, y + i);
      out(x, y) = static_cast<float>(acc);
    }
  }
  return out;
}

BilinearTaps bilinear_taps(int width, int height, const Vec2& u) {
  const double x = std::clamp(u.x(), 0.0, width - 1.0);
  const double y = std::clamp(u.y(), 0.0, height - 1.0);
  const int x0 = std::min(static_cast<int>(x), std::max(width - 2, 0));
  const int y0 = std::min(static_cast<int>(y), std::max(height - 2, 0));
  const int x1 = std::min(x0 + 1, width - 1);
  const int y1 = std::min(y0 + 1, height - 1);
  const double tx = x - x0;
  const double ty = y - y0;
  BilinearTaps taps;
  taps.index = {static_cast<std::size_t>(y0) * width + x0, static_cast<std::size_t>(y0) * width + x1,
                static_cast<std::size_t>(y1) * width + x0, static_cast<std::size_t>(y1) * width + x1};
  taps.weight = {(1 - tx) * (1 - ty), tx * (1 - ty), (1 - tx) * ty, tx * ty};
  return taps;
}

Sample sample_bilinear(const Image& image, const Vec2& u) {
  const int w = image.width();
  const int h = image.height();
  const double x = std::clamp(u.x(), 0.0, w - 1.0);
  const double y = std::clamp(u.y(), 0.0, h - 1.0);
  const int x0 = std::min(static_cast<int>(x), std::max(w - 2, 0));
  const int y0 = std::min(static_cast<int>(y), std::max(h - 2, 0));
  const double tx = x - x0;
  const double ty = y - y0;
  const double i00 = image.at_clamped(x0, y0);
  const double i10 = image.at_clamped(x0 + 1, y0);
  const double i01 = image.at_clamped(x0, y0 + 1);
  const double i11 = image.at_clamped(x0 + 1, y0 + 1);
  Sample s;
  s.value = (1 - tx) * (1 - ty) * i00 + tx * (1 - ty) * i10 + (1 - tx) * ty * i01 + tx * ty * i11;
  s.gradient.x() = (1 - ty) * (i10 - i00) + ty * (i11 - i01);
  s.gradient.y() = (1 - tx) * (i01 - i00) + tx * (i11 - i10);
  return s;
}

namespace {

struct Cubic {
  std::array<double, 4> w;
  std::array<double, 4> d;
};

Cubic bspline_weights(double t) {
  const double t2 = t * t;
  const double t3 = t2 * t;
  const double s = 1.0 - t;
  Cubic c;
  c.w = {s * s * s / 6.0, (3.0 * t3 - 6.0 * t2 + 4.0) / 6.0,
         (-3.0 * t3 + 3.0 * t2 + 3.0 * t + 1.0) / 6.0, t3 / 6.0};
  c.d = {-0.5 * s * s, 1.5 * t2 - 2.0 * t, -1.5 * t2 + t + 0.5, 0.5 * t2};
  return c;
}

}  // namespace

BSplineTaps bspline_taps(int width, int height, const Vec2& u) {
  const double x = std::clamp(u.x(), 0.0, width - 1.0);
  const double y = std::clamp(u.y(), 0.0, height - 1.0);
  const int xi = static_cast<int>(std::floor(x));
  const int yi = static_cast<int>(std::floor(y));
  const Cubic cx = bspline_weights(x - xi);
  const Cubic cy = bspline_weights(y - yi);
  std::array<std::size_t, 4> col{};
  std::array<std::size_t, 4> row{};
  for (int i = 0; i < 4; ++i) {
    col[i] = static_cast<std::size_t>(std::clamp(xi - 1 + i, 0, width - 1));
    row[i] = static_cast<std::size_t>(std::clamp(yi - 1 + i, 0, height - 1)) * width;
  }
  BSplineTaps taps;
  for (int j = 0; j < 4; ++j) {
    for (int i = 0; i < 4; ++i) {
      const int k = 4 * j + i;
      taps.index[k] = row[j] + col[i];
      taps.weight[k] = cx.w[i] * cy.w[j];
      taps.dx[k] = cx.d[i] * cy.w[j];
      taps.dy[k] = cx.w[i] * cy.d[j];
    }
  }
  return taps;
}

Sample sample_bspline(const Image& image, const Vec2& u) {
  const BSplineTaps taps = bspline_taps(image.width(), image.height(), u);
  Sample s;
  for (int k = 0; k < 16; ++k) {
    const double v = image[taps.index[k]];
    s.value += taps.weight[k] * v;
    s.gradient.x() += taps.dx[k] * v;
    s.gradient.y() += taps.dy[k] * v;
  }
  return s;
}

Sample sample(const Image& image, const Vec2& u, Interpolation mode, const Image* grad_x,
              const Image* grad_y) {
  if (mode == Interpolation::CubicBSpline) return sample_bspline(image, u);
  Sample s = sample_bilinear(image, u);
  if (grad_x != nullptr && grad_y != nullptr) {
    s.gradient.x() = sample_bilinear(*grad_x, u).value;
    s.gradient.y() = sample_bilinear(*grad_y, u).value;
  }
  return s;
}

Sample sample_grid(std::span<const double> grid, int width, int height, const Vec2& u,
                   Interpolation mode) {
  Sample s;
  if (mode == Interpolation::CubicBSpline) {
    const BSplineTaps taps = bspline_taps(width, height, u);
    for (int k = 0; k < 16; ++k) {
      const double v = grid[taps.index[k]];
      s.value += taps.weight[k] * v;
      s.gradient.x() += taps.dx[k] * v;
      s.gradient.y() += taps.dy[k] * v;
    }
    return s;
  }
  const BilinearTaps taps = bilinear_taps(width, height, u);
  const double i00 = grid[taps.index[0]];
  const double i10 = grid[taps.index[1]];
  const double i01 = grid[taps.index[2]];
  const double i11 = grid[taps.index[3]];
  for (int k = 0; k < 4; ++k) s.value += taps.weight[k] * grid[taps.index[k]];
  const double tx = taps.weight[1] + taps.weight[3];
  const double ty = taps.weight[2] + taps.weight[3];
  s.gradient.x() = (1 - ty) * (i10 - i00) + ty * (i11 - i01);
  s.gradient.y() = (1 - tx) * (i01 - i00) + tx * (i11 - i10);
  return s;
}

namespace {

PyramidLevel make_level(Image intensity, double sigma) {
  PyramidLevel level;
  level.smoothed = gaussian_blur(intensity, sigma);
  const int w = intensity.width();
  const int h = intensity.height();
  level.grad_x = Image(w, h);
  level.grad_y = Image(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      level.grad_x(x, y) =
          0.5f * (level.smoothed.at_clamped(x + 1, y) - level.smoothed.at_clamped(x - 1, y));
      level.grad_y(x, y) =
          0.5f * (level.smoothed.at_clamped(x, y + 1) - level.smoothed.at_clamped(x, y - 1));
    }
  }
  level.smoothed_spline.resize(static_cast<std::size_t>(w) * h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      level.smoothed_spline[static_cast<std::size_t>(y) * w + x] =
          sample_bspline(level.smoothed, Vec2(x, y)).value;
    }
  }
  level.intensity = std::move(intensity);
  return level;
}

}  // namespace

ImagePyramid ImagePyramid::build(const Image& image, int levels, double smoothing_sigma) {
  if (levels < 1) throw Error(ErrorCode::InvalidArgument, "pyramid needs at least one level");
  ImagePyramid pyr;
  pyr.sigma_ = smoothing_sigma;
  Image current = image;
  for (int l = 0; l < levels; ++l) {
    if (current.width() < 1 || current.height() < 1) {
      throw Error(ErrorCode::UnsupportedFormat, "image too small for the requested pyramid depth");
    }
    Image next = l + 1 < levels ? downsample_box(current) : Image{};
    pyr.levels_.push_back(make_level(std::move(current), smoothing_sigma));
    current = std::move(next);
  }
  return pyr;
}

const PyramidLevel& ImagePyramid::level(int l) const {
  if (l < 0 || l >= num_levels()) throw Error(ErrorCode::LevelOutOfRange, "pyramid level");
  return levels_[l];
}

ImagePyramid ImagePyramid::with_affine(double gain, double bias) const {
  Image base = levels_.at(0).intensity;
  for (float& v : base.pixels()) v = static_cast<float>(gain * v + bias);
  return build(base, num_levels(), sigma_);
}

}  // namespace codesfm
