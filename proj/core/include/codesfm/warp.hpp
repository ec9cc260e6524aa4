#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include <Eigen/Core>

#include "codesfm/decoder.hpp"
#include "codesfm/geometry.hpp"
#include "codesfm/image.hpp"

namespace codesfm {

using VarId = int;

/// How the geometric residual compares the two decoded maps.
enum class GeometricMode {
  /// prox_A[u] - prox_B[v]: the decoded values compared directly.
  Direct,
  /// a / (z_B(u) + a) - prox_B[v]: A's point is moved into B's frame before comparing.
  Transformed,
};

struct ResidualOptions {
  double huber_delta_photo = 0.1;
  double huber_delta_geo = 0.05;
  double geo_weight = 1.0;
  double slant_threshold = 0.17364817766693033;  // cos(80 deg)
  double occlusion_z_tol = 0.05;
  double affine_gain = 1.0;
  double affine_bias = 0.0;
  bool use_uncertainty = true;
  bool use_slant = true;
  bool use_occlusion = true;
  Interpolation interpolation = Interpolation::CubicBSpline;
  GeometricMode geometric_mode = GeometricMode::Transformed;
  /// Skip Jacobians (cost-only evaluation).
  bool compute_jacobians = true;

  void validate() const;
};

/// Read-only view of a frame taking part in a residual.
struct FrameView {
  const ImagePyramid* image = nullptr;
  const DecoderModel* decoder = nullptr;  // null for live frames without depth
  const Code* code = nullptr;
  Se3Pose world_from_frame;
};

/// Which solver variables the Jacobian slots of a block belong to; unset slots are constant.
struct BlockVariables {
  std::optional<VarId> pose_a;
  std::optional<VarId> pose_b;
  std::optional<VarId> code_a;
  std::optional<VarId> code_b;
  std::optional<VarId> affine;
};

using RowMatrixXd = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMatrixX6d = Eigen::Matrix<double, Eigen::Dynamic, 6, Eigen::RowMajor>;
using RowMatrixX2d = Eigen::Matrix<double, Eigen::Dynamic, 2, Eigen::RowMajor>;

/// Per-pixel residuals of one directed frame pair at one pyramid level.
///
/// Pose Jacobians are taken w.r.t. left-multiplicative updates of the world-from-frame poses
/// of A (reference) and B (target). Rows of invalid pixels are zero and carry weight 0.
struct ResidualBlock {
  int level = 0;
  int width = 0;
  int height = 0;
  Eigen::VectorXd residuals;
  Eigen::VectorXd weights;
  std::vector<std::uint8_t> valid;
  RowMatrixX6d j_pose_a;
  RowMatrixX6d j_pose_b;
  RowMatrixXd j_code_a;
  RowMatrixXd j_code_b;  // empty for photometric blocks
  RowMatrixX2d j_affine;  // (dr/dgain, dr/dbias); empty for geometric blocks
  BlockVariables vars;
  /// Set when j_pose_b == -j_pose_a row by row, which lets assembly skip the B columns.
  bool pose_b_negates_a = false;

  Eigen::Index size() const { return residuals.size(); }
  bool has_jacobians() const { return j_pose_a.rows() == residuals.size(); }
  std::size_t num_valid() const;
  /// 0.5 * sum w r^2
  double cost() const;
  void scale_weights(double s) { weights *= s; }
};

/// Decoded geometry of one frame at one level, shared by all blocks that use the frame.
struct DecodedLevel {
  int level = 0;
  CameraIntrinsics camera;  // intrinsics at this level
  ProximityMap proximity;
  /// Cubic B-spline of the proximity at every integer pixel, so both sides of a geometric
  /// residual go through the same smoothing.
  Eigen::VectorXd proximity_spline;
  Eigen::VectorXd depth;
  Eigen::VectorXd slant;  // cosine between surface normal and viewing ray
};

DecodedLevel decode_level(const DecoderModel& decoder, const Code& code, int level,
                          const CameraIntrinsics& camera, const ProximityParams& params);

/// Correspondence of pixel `u` of A in B, or nullopt when out of view.
std::optional<Vec2> warp_pixel(const Vec2& u, double proximity_a, const Se3Pose& b_from_a,
                               const CameraIntrinsics& camera, const ProximityParams& params);

/// IRLS weight of the Huber loss.
double huber_weight(double r, double delta);

/// clamp(cos_theta / threshold, 0, 1)
double slant_weight(double cos_theta, double threshold);

/// 1 if B's surface lies at or behind the predicted one (within `tol`), else a Gaussian falloff
/// in the violation.
double occlusion_weight(double prox_expected, double prox_b_at_v, double tol);

/// Photometric residual I_A[u] - (gain I_B[v] + bias) of the reference frame warped into the
/// target. Throws DimensionMismatch on incompatible frames.
ResidualBlock photometric_residual(const FrameView& ref, const FrameView& target, int level,
                                   const CameraIntrinsics& camera, const ProximityParams& params,
                                   const ResidualOptions& opts,
                                   const DecodedLevel* ref_decoded = nullptr,
                                   const DecodedLevel* target_decoded = nullptr);

/// As photometric_residual, reusing the storage of `out`.
void photometric_residual_into(ResidualBlock& out, const FrameView& ref, const FrameView& target,
                               int level, const CameraIntrinsics& camera,
                               const ProximityParams& params, const ResidualOptions& opts,
                               const DecodedLevel* ref_decoded = nullptr,
                               const DecodedLevel* target_decoded = nullptr);

/// Geometric residual between the decoded proximity of A and of B at the warped location.
ResidualBlock geometric_residual(const FrameView& a, const FrameView& b, int level,
                                 const CameraIntrinsics& camera, const ProximityParams& params,
                                 const ResidualOptions& opts,
                                 const DecodedLevel* a_decoded = nullptr,
                                 const DecodedLevel* b_decoded = nullptr);

void geometric_residual_into(ResidualBlock& out, const FrameView& a, const FrameView& b, int level,
                             const CameraIntrinsics& camera, const ProximityParams& params,
                             const ResidualOptions& opts, const DecodedLevel* a_decoded = nullptr,
                             const DecodedLevel* b_decoded = nullptr);

}  // namespace codesfm
