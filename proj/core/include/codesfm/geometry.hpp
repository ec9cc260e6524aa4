#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace codesfm {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat3 = Eigen::Matrix3d;
using Mat6 = Eigen::Matrix<double, 6, 6>;

inline constexpr double kMinProjectionDepth = 1e-6;

/// Pinhole camera without distortion. Images must be rectified upstream.
struct CameraIntrinsics {
  double fx = 0.0;
  double fy = 0.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 0;
  int height = 0;

  /// Throws InvalidArgument unless fx, fy > 0 and the principal point lies inside the image.
  void validate() const;

  /// Intrinsics of pyramid level `level`: focal lengths and principal point halve per level,
  /// image sizes floor-divide.
  CameraIntrinsics at_level(int level) const;

  bool contains(const Vec2& u) const {
    return u.x() >= 0.0 && u.y() >= 0.0 && u.x() <= width - 1.0 && u.y() <= height - 1.0;
  }
};

/// Average-depth constant of the proximity parametrization p = a / (d + a).
struct ProximityParams {
  double a = 2.0;

  void validate() const;
};

/// Throws NonPositiveDepth if x.z <= 1e-6.
Vec2 project(const Vec3& x, const CameraIntrinsics& camera);

/// Jacobian of `project` w.r.t. the camera-frame point.
Eigen::Matrix<double, 2, 3> project_jacobian(const Vec3& x, const CameraIntrinsics& camera);

/// d * ((u - cx) / fx, (v - cy) / fy, 1). Throws NonPositiveDepth for d <= 0.
Vec3 unproject(const Vec2& u, double depth, const CameraIntrinsics& camera);

/// Derivative of `unproject` w.r.t. depth: the un-normalized viewing ray.
Vec3 unproject_depth_jacobian(const Vec2& u, const CameraIntrinsics& camera);

/// a / (d + a); throws NegativeDepth for d < 0.
double depth_to_proximity(double depth, const ProximityParams& params);

/// -a / (d + a)^2
double depth_to_proximity_derivative(double depth, const ProximityParams& params);

/// a (1 - p) / p; throws ProximityOutOfRange unless 0 < p <= 1.
double proximity_to_depth(double proximity, const ProximityParams& params);

/// -a / p^2
double proximity_to_depth_derivative(double proximity, const ProximityParams& params);

Mat3 skew(const Vec3& v);

/// SO(3) exponential (Rodrigues). `omega` is an axis-angle vector.
Mat3 so3_exp(const Vec3& omega);
Vec3 so3_log(const Mat3& rotation);

/// Rigid transform x -> R x + t. Tangent vectors are ordered (translation, rotation).
class Se3Pose {
 public:
  Se3Pose() : rotation_(Mat3::Identity()), translation_(Vec3::Zero()) {}
  Se3Pose(const Mat3& rotation, const Vec3& translation)
      : rotation_(rotation), translation_(translation) {}
  Se3Pose(const Eigen::Quaterniond& q, const Vec3& translation)
      : rotation_(q.normalized().toRotationMatrix()), translation_(translation) {}

  static Se3Pose identity() { return {}; }

  /// Group exponential of xi = (rho, phi).
  static Se3Pose exp(const Vec6& xi);
  Vec6 log() const;

  const Mat3& rotation() const { return rotation_; }
  const Vec3& translation() const { return translation_; }
  Eigen::Quaterniond quaternion() const { return Eigen::Quaterniond(rotation_).normalized(); }

  Se3Pose inverse() const {
    const Mat3 rt = rotation_.transpose();
    return {rt, -rt * translation_};
  }

  Se3Pose operator*(const Se3Pose& other) const {
    return {rotation_ * other.rotation_, rotation_ * other.translation_ + translation_};
  }

  Vec3 operator*(const Vec3& x) const { return rotation_ * x + translation_; }

  /// Adjoint matrix: exp(Ad * xi) = T exp(xi) T^-1.
  Mat6 adjoint() const;

  /// Left-multiplicative update exp(delta) * T. `retract(0)` returns T exactly.
  Se3Pose retract(const Vec6& delta) const;

  /// Local coordinates of this pose around `base`: log(T * base^-1), the inverse of retract.
  Vec6 local(const Se3Pose& base) const;

  /// Re-orthonormalizes the rotation via its quaternion.
  void normalize();

 private:
  Mat3 rotation_;
  Vec3 translation_;
};

/// Rotation angle (radians) of R_a^T R_b.
double rotation_distance(const Se3Pose& a, const Se3Pose& b);

}  // namespace codesfm
