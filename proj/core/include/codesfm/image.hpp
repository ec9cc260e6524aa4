#pragma once

#include <array>
#include <span>
#include <vector>

#include "codesfm/geometry.hpp"

namespace codesfm {

inline constexpr int kPyramidLevels = 4;

/// Row-major single-channel float image.
class Image {
 public:
  Image() = default;
  Image(int width, int height, float fill = 0.0f)
      : width_(width), height_(height), data_(static_cast<std::size_t>(width) * height, fill) {}
  Image(int width, int height, std::vector<float> data);

  int width() const { return width_; }
  int height() const { return height_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  float operator()(int x, int y) const { return data_[index(x, y)]; }
  float& operator()(int x, int y) { return data_[index(x, y)]; }
  float operator[](std::size_t i) const { return data_[i]; }
  float& operator[](std::size_t i) { return data_[i]; }

  /// Border-clamped pixel access.
  float at_clamped(int x, int y) const;

  std::span<const float> pixels() const { return data_; }
  std::span<float> pixels() { return data_; }

 private:
  std::size_t index(int x, int y) const { return static_cast<std::size_t>(y) * width_ + x; }

  int width_ = 0;
  int height_ = 0;
  std::vector<float> data_;
};

/// 2x2 box-filter downsampling; output size is floor(size / 2).
Image downsample_box(const Image& image);

/// Separable Gaussian blur with border clamping.
Image gaussian_blur(const Image& image, double sigma);

enum class Interpolation {
  /// Bilinear intensities; gradients from bilinearly interpolated central-difference images.
  Bilinear,
  /// Cubic B-spline; value and gradient are the exact spline and its derivative (C2).
  CubicBSpline,
};

struct Sample {
  double value = 0.0;
  Vec2 gradient = Vec2::Zero();
};

/// Samples `image` at continuous coordinates. `grad_x`/`grad_y` are only read in bilinear mode.
Sample sample(const Image& image, const Vec2& u, Interpolation mode,
              const Image* grad_x = nullptr, const Image* grad_y = nullptr);

/// Exact bilinear value and the derivative of the bilinear interpolant.
Sample sample_bilinear(const Image& image, const Vec2& u);

/// Cubic B-spline value and gradient.
Sample sample_bspline(const Image& image, const Vec2& u);

/// Bilinear interpolation weights of the four neighbours of `u` (clamped to the image).
struct BilinearTaps {
  std::array<std::size_t, 4> index{};
  std::array<double, 4> weight{};
};
BilinearTaps bilinear_taps(int width, int height, const Vec2& u);

/// B-spline taps (4x4) of `u`; `dx`/`dy` hold the derivative weights.
struct BSplineTaps {
  std::array<std::size_t, 16> index{};
  std::array<double, 16> weight{};
  std::array<double, 16> dx{};
  std::array<double, 16> dy{};
};
BSplineTaps bspline_taps(int width, int height, const Vec2& u);

/// Samples a row-major double grid (e.g. a decoded proximity map). Bilinear mode returns the
/// derivative of the bilinear interpolant.
Sample sample_grid(std::span<const double> grid, int width, int height, const Vec2& u,
                   Interpolation mode);
inline Sample sample_grid(const Eigen::VectorXd& grid, int width, int height, const Vec2& u,
                          Interpolation mode) {
  return sample_grid(std::span<const double>(grid.data(), static_cast<std::size_t>(grid.size())),
                     width, height, u, mode);
}

/// One pyramid level: raw box-filtered intensity, its smoothed version used for alignment and
/// central-difference gradients of the smoothed image.
struct PyramidLevel {
  Image intensity;
  Image smoothed;
  Image grad_x;
  Image grad_y;
  /// Cubic B-spline of `smoothed` evaluated at every integer pixel.
  std::vector<double> smoothed_spline;
};

/// Greyscale image pyramid, finest level first. Level L+1 has floor(size_L / 2).
class ImagePyramid {
 public:
  ImagePyramid() = default;

  /// Builds `levels` levels from a full-resolution image in [0, 1]. Throws UnsupportedFormat
  /// if a level would drop below one pixel.
  static ImagePyramid build(const Image& image, int levels = kPyramidLevels,
                            double smoothing_sigma = 1.0);

  int num_levels() const { return static_cast<int>(levels_.size()); }
  const PyramidLevel& level(int l) const;
  int width(int l = 0) const { return level(l).intensity.width(); }
  int height(int l = 0) const { return level(l).intensity.height(); }

  /// Applies I' = gain * I + bias to every level (used for illumination experiments).
  ImagePyramid with_affine(double gain, double bias) const;

 private:
  std::vector<PyramidLevel> levels_;
  double sigma_ = 1.0;
};

}  // namespace codesfm
