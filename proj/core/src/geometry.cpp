#include "codesfm/geometry.hpp"

#include <cmath>
#include <sstream>

#include "codesfm/error.hpp"

namespace codesfm {

void CameraIntrinsics::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0)) {
    throw Error(ErrorCode::InvalidArgument, "focal lengths must be positive");
  }
  if (width <= 0 || height <= 0) {
    throw Error(ErrorCode::InvalidArgument, "image size must be positive");
  }
  if (!(cx > 0.0 && cx < width && cy > 0.0 && cy < height)) {
    std::ostringstream os;
    os << "principal point (" << cx << ", " << cy << ") outside " << width << "x" << height;
    throw Error(ErrorCode::InvalidArgument, os.str());
  }
}

CameraIntrinsics CameraIntrinsics::at_level(int level) const {
  if (level < 0) throw Error(ErrorCode::LevelOutOfRange, "negative pyramid level");
  const double scale = std::ldexp(1.0, -level);
  CameraIntrinsics out = *this;
  out.fx *= scale;
  out.fy *= scale;
  out.cx *= scale;
  out.cy *= scale;
  out.width = width >> level;
  out.height = height >> level;
  return out;
}

void ProximityParams::validate() const {
  if (!(a > 0.0) || !std::isfinite(a)) {
    throw Error(ErrorCode::InvalidArgument, "average depth must be positive");
  }
}

Vec2 project(const Vec3& x, const CameraIntrinsics& camera) {
  if (!(x.z() > kMinProjectionDepth)) {
    throw Error(ErrorCode::NonPositiveDepth, "point behind or on the camera plane");
  }
  const double inv_z = 1.0 / x.z();
  return {camera.fx * x.x() * inv_z + camera.cx, camera.fy * x.y() * inv_z + camera.cy};
}

Eigen::Matrix<double, 2, 3> project_jacobian(const Vec3& x, const CameraIntrinsics& camera) {
  const double inv_z = 1.0 / x.z();
  const double inv_z2 = inv_z * inv_z;
  Eigen::Matrix<double, 2, 3> j;
  j << camera.fx * inv_z, 0.0, -camera.fx * x.x() * inv_z2,
       0.0, camera.fy * inv_z, -camera.fy * x.y() * inv_z2;
  return j;
}

Vec3 unproject(const Vec2& u, double depth, const CameraIntrinsics& camera) {
  if (!(depth > 0.0)) throw Error(ErrorCode::NonPositiveDepth, "unproject needs depth > 0");
  return depth * unproject_depth_jacobian(u, camera);
}

Vec3 unproject_depth_jacobian(const Vec2& u, const CameraIntrinsics& camera) {
  return {(u.x() - camera.cx) / camera.fx, (u.y() - camera.cy) / camera.fy, 1.0};
}

double depth_to_proximity(double depth, const ProximityParams& params) {
  if (depth < 0.0 || std::isnan(depth)) {
    throw Error(ErrorCode::NegativeDepth, "depth must be non-negative");
  }
  return params.a / (depth + params.a);
}

double depth_to_proximity_derivative(double depth, const ProximityParams& params) {
  const double s = depth + params.a;
  return -params.a / (s * s);
}

double proximity_to_depth(double proximity, const ProximityParams& params) {
  if (!(proximity > 0.0 && proximity <= 1.0)) {
    throw Error(ErrorCode::ProximityOutOfRange, "proximity must lie in (0, 1]");
  }
  return params.a * (1.0 - proximity) / proximity;
}

double proximity_to_depth_derivative(double proximity, const ProximityParams& params) {
  return -params.a / (proximity * proximity);
}

Mat3 skew(const Vec3& v) {
  Mat3 m;
  m << 0.0, -v.z(), v.y(),
       v.z(), 0.0, -v.x(),
       -v.y(), v.x(), 0.0;
  return m;
}

namespace {

// (1 - cos t) / t^2 through the half angle, which avoids the cancellation in 1 - cos t.
double one_minus_cos_over_theta2(double theta) {
  const double s = std::sin(0.5 * theta) / (0.5 * theta);
  return 0.5 * s * s;
}

// Below this angle the closed forms of the Jacobian coefficients lose digits to cancellation.
constexpr double kSeriesAngle = 1e-2;

}  // namespace

Mat3 so3_exp(const Vec3& omega) {
  const double theta2 = omega.squaredNorm();
  const Mat3 w = skew(omega);
  if (theta2 < 1e-16) {
    return Mat3::Identity() + w + 0.5 * w * w;
  }
  const double theta = std::sqrt(theta2);
  return Mat3::Identity() + (std::sin(theta) / theta) * w + one_minus_cos_over_theta2(theta) * w * w;
}

Vec3 so3_log(const Mat3& rotation) {
  const Eigen::AngleAxisd aa(Eigen::Quaterniond(rotation).normalized());
  Vec3 v = aa.angle() * aa.axis();
  // AngleAxis reports angles in [0, 2pi); fold to [0, pi].
  if (aa.angle() > M_PI) v = (aa.angle() - 2.0 * M_PI) * aa.axis();
  return v;
}

namespace {

// Left Jacobian of SO(3), V in t = V rho.
Mat3 so3_left_jacobian(const Vec3& omega) {
  const double theta2 = omega.squaredNorm();
  const Mat3 w = skew(omega);
  const double theta = std::sqrt(theta2);
  const double b = theta2 < 1e-16 ? 0.5 : one_minus_cos_over_theta2(theta);
  const double c = theta < kSeriesAngle
                       ? 1.0 / 6.0 - theta2 / 120.0 + theta2 * theta2 / 5040.0
                       : (theta - std::sin(theta)) / (theta2 * theta);
  return Mat3::Identity() + b * w + c * w * w;
}

Mat3 so3_left_jacobian_inverse(const Vec3& omega) {
  const double theta2 = omega.squaredNorm();
  const Mat3 w = skew(omega);
  const double theta = std::sqrt(theta2);
  double coeff;
  if (theta < kSeriesAngle) {
    coeff = 1.0 / 12.0 + theta2 / 720.0 + theta2 * theta2 / 30240.0;
  } else {
    const double half = 0.5 * theta;
    coeff = (1.0 - half * std::cos(half) / std::sin(half)) / theta2;
  }
  return Mat3::Identity() - 0.5 * w + coeff * w * w;
}

}  // namespace

Se3Pose Se3Pose::exp(const Vec6& xi) {
  const Vec3 rho = xi.head<3>();
  const Vec3 phi = xi.tail<3>();
  return {so3_exp(phi), so3_left_jacobian(phi) * rho};
}

Vec6 Se3Pose::log() const {
  Vec6 xi;
  const Vec3 phi = so3_log(rotation_);
  xi.head<3>() = so3_left_jacobian_inverse(phi) * translation_;
  xi.tail<3>() = phi;
  return xi;
}

Mat6 Se3Pose::adjoint() const {
  Mat6 ad = Mat6::Zero();
  ad.topLeftCorner<3, 3>() = rotation_;
  ad.topRightCorner<3, 3>() = skew(translation_) * rotation_;
  ad.bottomRightCorner<3, 3>() = rotation_;
  return ad;
}

Se3Pose Se3Pose::retract(const Vec6& delta) const {
  if (delta.isZero(0.0)) return *this;
  // Renormalized so rounding cannot accumulate over long chains of updates.
  Se3Pose out = exp(delta) * *this;
  out.normalize();
  return out;
}

Vec6 Se3Pose::local(const Se3Pose& base) const { return (*this * base.inverse()).log(); }

void Se3Pose::normalize() { rotation_ = quaternion().toRotationMatrix(); }

double rotation_distance(const Se3Pose& a, const Se3Pose& b) {
  return so3_log(a.rotation().transpose() * b.rotation()).norm();
}

}  // namespace codesfm
