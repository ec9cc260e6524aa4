#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "codesfm/error.hpp"
#include "codesfm/geometry.hpp"

namespace codesfm {

/// Latent code of one keyframe. Codes start at zero.
using Code = Eigen::VectorXd;

inline constexpr int kDefaultCodeSize = 128;
inline constexpr double kMinProximity = 1e-4;

using RowMatrixXf = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using JacobianView = Eigen::Map<const RowMatrixXf>;

/// One resolution of a linear decoder: proximity = mean_zero + jacobian * code.
struct DecoderLevel {
  int width = 0;
  int height = 0;
  std::vector<float> mean_zero;    // H*W, proximity at the zero code
  std::vector<float> uncertainty;  // H*W, Laplace scale b in proximity units
  std::vector<float> jacobian;     // (H*W) x code_size, pixel-major

  std::size_t num_pixels() const { return static_cast<std::size_t>(width) * height; }
  bool operator==(const DecoderLevel& other) const = default;
};

/// Linear intensity-conditioned depth decoder baked for one image.
class DecoderModel {
 public:
  DecoderModel() = default;
  DecoderModel(int code_size, std::vector<DecoderLevel> levels, std::string source_id = {});

  int code_size() const { return code_size_; }
  int num_levels() const { return static_cast<int>(levels_.size()); }
  const DecoderLevel& level(int l) const;
  const std::string& source_id() const { return source_id_; }

  /// Full invariant check (four halving levels, value ranges, finite Jacobians).
  /// Throws Error with `code` on failure.
  void validate(ErrorCode code) const;

  bool operator==(const DecoderModel& other) const = default;

 private:
  int code_size_ = 0;
  std::vector<DecoderLevel> levels_;
  std::string source_id_;
};

/// Decoded proximity at one level plus the per-pixel clamp flag.
struct ProximityMap {
  int width = 0;
  int height = 0;
  Eigen::VectorXd values;
  std::vector<std::uint8_t> clamped;
};

/// clamp(mean_zero + J c, 1e-4, 1). Throws CodeSizeMismatch or LevelOutOfRange.
ProximityMap decode_proximity(const DecoderModel& model, const Code& code, int level);

/// Depth map (metres) decoded through the proximity parametrization.
Eigen::VectorXd decode_depth(const DecoderModel& model, const Code& code, int level,
                             const ProximityParams& params);

/// Proximity-space Jacobian dD/dc of `level`; constant in the code.
JacobianView code_jacobian(const DecoderModel& model, int level);

DecoderModel load_decoder(const std::filesystem::path& path);
void save_decoder(const DecoderModel& model, const std::filesystem::path& path);

}  // namespace codesfm
