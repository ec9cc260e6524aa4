#include "codesfm/warp.hpp"

#include <algorithm>
#include <cmath>
#include <span>

#include "codesfm/error.hpp"

namespace codesfm {

void ResidualOptions::validate() const {
  if (!(huber_delta_photo > 0.0) || !(huber_delta_geo > 0.0) || !(slant_threshold > 0.0) ||
      !(occlusion_z_tol > 0.0)) {
    throw Error(ErrorCode::InvalidArgument, "residual thresholds must be positive");
  }
  if (!(geo_weight >= 0.0)) throw Error(ErrorCode::InvalidArgument, "geo_weight must be >= 0");
}

std::size_t ResidualBlock::num_valid() const {
  return static_cast<std::size_t>(std::count(valid.begin(), valid.end(), std::uint8_t{1}));
}

double ResidualBlock::cost() const {
  double c = 0.0;
  for (Eigen::Index i = 0; i < residuals.size(); ++i) c += weights[i] * residuals[i] * residuals[i];
  return 0.5 * c;
}

double huber_weight(double r, double delta) {
  const double a = std::abs(r);
  return a <= delta ? 1.0 : delta / a;
}

double slant_weight(double cos_theta, double threshold) {
  return std::clamp(cos_theta / threshold, 0.0, 1.0);
}

double occlusion_weight(double prox_expected, double prox_b_at_v, double tol) {
  const double violation = prox_b_at_v - prox_expected - tol;
  if (violation <= 0.0) return 1.0;
  const double s = violation / tol;
  return std::exp(-s * s);
}

std::optional<Vec2> warp_pixel(const Vec2& u, double proximity_a, const Se3Pose& b_from_a,
                               const CameraIntrinsics& camera, const ProximityParams& params) {
  const double d = proximity_to_depth(proximity_a, params);
  if (!(d > 0.0)) return std::nullopt;
  const Vec3 x = b_from_a * unproject(u, d, camera);
  if (!(x.z() > kMinProjectionDepth)) return std::nullopt;
  const Vec2 v = project(x, camera);
  if (!camera.contains(v)) return std::nullopt;
  return v;
}

DecodedLevel decode_level(const DecoderModel& decoder, const Code& code, int level,
                          const CameraIntrinsics& camera, const ProximityParams& params) {
  DecodedLevel out;
  out.level = level;
  out.camera = camera.at_level(level);
  out.proximity = decode_proximity(decoder, code, level);
  const int w = out.proximity.width;
  const int h = out.proximity.height;
  if (w != out.camera.width || h != out.camera.height) {
    throw Error(ErrorCode::DimensionMismatch, "decoder level does not match camera resolution");
  }
  const Eigen::Index n = out.proximity.values.size();
  out.depth.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    out.depth[i] = proximity_to_depth(out.proximity.values[i], params);
  }

  out.proximity_spline.resize(n);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      out.proximity_spline[static_cast<Eigen::Index>(y) * w + x] =
          sample_grid(out.proximity.values, w, h, Vec2(x, y), Interpolation::CubicBSpline).value;
    }
  }

  // Normals from neighbouring back-projected points (one-sided at the border).
  auto point = [&](int x, int y) {
    x = std::clamp(x, 0, w - 1);
    y = std::clamp(y, 0, h - 1);
    const double d = std::max(out.depth[static_cast<Eigen::Index>(y) * w + x], 1e-9);
    return unproject(Vec2(x, y), d, out.camera);
  };
  out.slant.resize(n);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const Vec3 dx = point(x + 1, y) - point(x - 1, y);
      const Vec3 dy = point(x, y + 1) - point(x, y - 1);
      const Vec3 normal = dx.cross(dy);
      const Vec3 ray = unproject_depth_jacobian(Vec2(x, y), out.camera);
      const double nn = normal.norm();
      out.slant[static_cast<Eigen::Index>(y) * w + x] =
          nn > 0.0 ? std::abs(normal.dot(ray)) / (nn * ray.norm()) : 1.0;
    }
  }
  return out;
}

namespace {

void check_frames(const FrameView& a, const FrameView& b, int level) {
  if (a.image == nullptr || b.image == nullptr) {
    throw Error(ErrorCode::InvalidArgument, "residual needs both images");
  }
  if (a.decoder == nullptr || a.code == nullptr) {
    throw Error(ErrorCode::InvalidArgument, "reference frame needs a decoder and a code");
  }
  if (level >= a.image->num_levels() || level >= b.image->num_levels() ||
      level >= a.decoder->num_levels()) {
    throw Error(ErrorCode::LevelOutOfRange, "residual level " + std::to_string(level));
  }
  const DecoderLevel& dl = a.decoder->level(level);
  if (dl.width != a.image->width(level) || dl.height != a.image->height(level) ||
      a.image->width(level) != b.image->width(level) ||
      a.image->height(level) != b.image->height(level)) {
    throw Error(ErrorCode::DimensionMismatch, "frame and decoder resolutions differ");
  }
}

// Resizes `blk` in place so repeated evaluations reuse its storage.
void reset_block(ResidualBlock& blk, int level, int w, int h, int code_a, int code_b, bool affine,
                 bool jacobians) {
  blk.level = level;
  blk.width = w;
  blk.height = h;
  blk.vars = {};
  blk.pose_b_negates_a = false;
  const Eigen::Index n = static_cast<Eigen::Index>(w) * h;
  blk.residuals.setZero(n);
  blk.weights.setZero(n);
  blk.valid.assign(static_cast<std::size_t>(n), 0);
  if (jacobians) {
    blk.j_pose_a.setZero(n, 6);
    blk.j_pose_b.setZero(n, 6);
    blk.j_code_a.setZero(n, code_a);
    if (code_b > 0) {
      blk.j_code_b.setZero(n, code_b);
    } else {
      blk.j_code_b.resize(0, 0);
    }
    if (affine) {
      blk.j_affine.setZero(n, 2);
    } else {
      blk.j_affine.resize(0, 2);
    }
  } else {
    blk.j_pose_a.resize(0, 6);
    blk.j_pose_b.resize(0, 6);
    blk.j_code_a.resize(0, 0);
    blk.j_code_b.resize(0, 0);
    blk.j_affine.resize(0, 2);
  }
}

// Geometry shared by both residual types for one pixel.
struct PixelWarp {
  Vec3 ray;   // K^-1 [u, 1]
  Vec3 x;     // point in B
  Vec2 v;     // pixel in B
  Eigen::Matrix<double, 2, 3> dv_dx;
};

bool warp(const Vec2& u, double depth, const Se3Pose& b_from_a, const CameraIntrinsics& cam,
          PixelWarp& out) {
  out.ray = unproject_depth_jacobian(u, cam);
  out.x = b_from_a.rotation() * (depth * out.ray) + b_from_a.translation();
  if (!(out.x.z() > kMinProjectionDepth)) return false;
  const double inv_z = 1.0 / out.x.z();
  out.v = Vec2(cam.fx * out.x.x() * inv_z + cam.cx, cam.fy * out.x.y() * inv_z + cam.cy);
  if (!cam.contains(out.v)) return false;
  out.dv_dx = project_jacobian(out.x, cam);
  return true;
}

// dr/dxi for a left perturbation of b_from_a given dr/dx.
Eigen::Matrix<double, 1, 6> pose_row(const Eigen::Matrix<double, 1, 3>& dr_dx, const Vec3& x) {
  Eigen::Matrix<double, 1, 6> j;
  j.head<3>() = dr_dx;
  j.tail<3>() = -dr_dx * skew(x);
  return j;
}

const Image& alignment_image(const ImagePyramid& pyr, int level) { return pyr.level(level).smoothed; }

template <typename T>
Sample apply_taps(const BSplineTaps& taps, std::span<const T> values) {
  Sample s;
  for (int k = 0; k < 16; ++k) {
    const double v = values[taps.index[k]];
    s.value += taps.weight[k] * v;
    s.gradient.x() += taps.dx[k] * v;
    s.gradient.y() += taps.dy[k] * v;
  }
  return s;
}

}  // namespace

ResidualBlock photometric_residual(const FrameView& ref, const FrameView& target, int level,
                                   const CameraIntrinsics& camera, const ProximityParams& params,
                                   const ResidualOptions& opts, const DecodedLevel* ref_decoded,
                                   const DecodedLevel* target_decoded) {
  ResidualBlock blk;
  photometric_residual_into(blk, ref, target, level, camera, params, opts, ref_decoded,
                            target_decoded);
  return blk;
}

void photometric_residual_into(ResidualBlock& blk, const FrameView& ref, const FrameView& target,
                               int level, const CameraIntrinsics& camera,
                               const ProximityParams& params, const ResidualOptions& opts,
                               const DecodedLevel* ref_decoded,
                               const DecodedLevel* target_decoded) {
  check_frames(ref, target, level);
  std::optional<DecodedLevel> ref_local;
  if (ref_decoded == nullptr) {
    ref_local = decode_level(*ref.decoder, *ref.code, level, camera, params);
    ref_decoded = &*ref_local;
  }
  std::optional<DecodedLevel> target_local;
  if (target_decoded == nullptr && opts.use_occlusion && target.decoder != nullptr &&
      target.code != nullptr) {
    target_local = decode_level(*target.decoder, *target.code, level, camera, params);
    target_decoded = &*target_local;
  }
  const bool occlusion = opts.use_occlusion && target_decoded != nullptr;

  const CameraIntrinsics cam = camera.at_level(level);
  const int w = cam.width;
  const int h = cam.height;
  const int cs = ref.decoder->code_size();
  const bool jac = opts.compute_jacobians;
  reset_block(blk, level, w, h, cs, 0, true, jac);
  blk.pose_b_negates_a = true;

  const Se3Pose target_from_world = target.world_from_frame.inverse();
  const Se3Pose b_from_a = target_from_world * ref.world_from_frame;
  const Mat6 ad = target_from_world.adjoint();
  const JacobianView dec_jac = code_jacobian(*ref.decoder, level);
  const DecoderLevel& dec_level = ref.decoder->level(level);

  const PyramidLevel& tgt_lv = target.image->level(level);
  const Image& ref_img = alignment_image(*ref.image, level);
  const std::vector<double>& ref_spline = ref.image->level(level).smoothed_spline;
  const Image& tgt_img = alignment_image(*target.image, level);
  const Image* gx = opts.interpolation == Interpolation::Bilinear ? &tgt_lv.grad_x : nullptr;
  const Image* gy = opts.interpolation == Interpolation::Bilinear ? &tgt_lv.grad_y : nullptr;

  const double gain = opts.affine_gain;
  const double bias = opts.affine_bias;

  PixelWarp pw;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const Eigen::Index i = static_cast<Eigen::Index>(y) * w + x;
      const Vec2 u(x, y);
      const double depth = ref_decoded->depth[i];
      if (!warp(u, depth, b_from_a, cam, pw)) continue;

      const double i_ref = opts.interpolation == Interpolation::CubicBSpline
                               ? ref_spline[static_cast<std::size_t>(i)]
                               : ref_img(x, y);
      const bool spline = opts.interpolation == Interpolation::CubicBSpline;
      BSplineTaps taps;
      if (spline) taps = bspline_taps(w, h, pw.v);
      const Sample s = spline ? apply_taps(taps, tgt_img.pixels())
                              : sample(tgt_img, pw.v, opts.interpolation, gx, gy);
      const double r = i_ref - (gain * s.value + bias);

      double weight = huber_weight(r, opts.huber_delta_photo);
      if (opts.use_slant) weight *= slant_weight(ref_decoded->slant[i], opts.slant_threshold);
      if (occlusion) {
        const double expected = depth_to_proximity(pw.x.z(), params);
        const Eigen::VectorXd& prox = target_decoded->proximity.values;
        const double seen =
            spline ? apply_taps(taps, std::span<const double>(prox.data(), prox.size())).value
                   : sample_grid(prox, w, h, pw.v, opts.interpolation).value;
        weight *= occlusion_weight(expected, seen, opts.occlusion_z_tol);
      }
      if (opts.use_uncertainty) weight /= dec_level.uncertainty[static_cast<std::size_t>(i)];

      blk.residuals[i] = r;
      blk.weights[i] = weight;
      blk.valid[static_cast<std::size_t>(i)] = 1;
      if (!jac) continue;

      const Eigen::Matrix<double, 1, 2> dr_dv = -gain * s.gradient.transpose();
      const Eigen::Matrix<double, 1, 3> dr_dx = dr_dv * pw.dv_dx;
      const Eigen::Matrix<double, 1, 6> j_rel = pose_row(dr_dx, pw.x);
      blk.j_pose_a.row(i) = j_rel * ad;
      blk.j_pose_b.row(i) = -blk.j_pose_a.row(i);
      if (!ref_decoded->proximity.clamped[static_cast<std::size_t>(i)]) {
        const double p = ref_decoded->proximity.values[i];
        const double dr_dd = dr_dx * (b_from_a.rotation() * pw.ray);
        const double dr_dp = dr_dd * proximity_to_depth_derivative(p, params);
        blk.j_code_a.row(i) = dr_dp * dec_jac.row(i).cast<double>();
      }
      blk.j_affine(i, 0) = -s.value;
      blk.j_affine(i, 1) = -1.0;
    }
  }
}

ResidualBlock geometric_residual(const FrameView& a, const FrameView& b, int level,
                                 const CameraIntrinsics& camera, const ProximityParams& params,
                                 const ResidualOptions& opts, const DecodedLevel* a_decoded,
                                 const DecodedLevel* b_decoded) {
  ResidualBlock blk;
  geometric_residual_into(blk, a, b, level, camera, params, opts, a_decoded, b_decoded);
  return blk;
}

void geometric_residual_into(ResidualBlock& blk, const FrameView& a, const FrameView& b, int level,
                             const CameraIntrinsics& camera, const ProximityParams& params,
                             const ResidualOptions& opts, const DecodedLevel* a_decoded,
                             const DecodedLevel* b_decoded) {
  check_frames(a, b, level);
  check_frames(b, a, level);
  if (a.decoder->code_size() != b.decoder->code_size()) {
    throw Error(ErrorCode::DimensionMismatch, "decoders use different code sizes");
  }
  std::optional<DecodedLevel> a_local;
  std::optional<DecodedLevel> b_local;
  if (a_decoded == nullptr) {
    a_local = decode_level(*a.decoder, *a.code, level, camera, params);
    a_decoded = &*a_local;
  }
  if (b_decoded == nullptr) {
    b_local = decode_level(*b.decoder, *b.code, level, camera, params);
    b_decoded = &*b_local;
  }

  const CameraIntrinsics cam = camera.at_level(level);
  const int w = cam.width;
  const int h = cam.height;
  const int cs = a.decoder->code_size();
  const bool jac = opts.compute_jacobians;
  reset_block(blk, level, w, h, cs, cs, false, jac);
  blk.pose_b_negates_a = true;

  const Se3Pose b_from_world = b.world_from_frame.inverse();
  const Se3Pose b_from_a = b_from_world * a.world_from_frame;
  const Mat6 ad = b_from_world.adjoint();
  const JacobianView jac_a = code_jacobian(*a.decoder, level);
  const JacobianView jac_b = code_jacobian(*b.decoder, level);
  const DecoderLevel& dec_level = a.decoder->level(level);
  const bool transformed = opts.geometric_mode == GeometricMode::Transformed;
  const Eigen::VectorXd& prox_b = b_decoded->proximity.values;
  const auto& clamped_a = a_decoded->proximity.clamped;
  const auto& clamped_b = b_decoded->proximity.clamped;
  const bool spline = opts.interpolation == Interpolation::CubicBSpline;

  PixelWarp pw;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const Eigen::Index i = static_cast<Eigen::Index>(y) * w + x;
      const Vec2 u(x, y);
      // B is read through the spline, so A is too; otherwise the spline's smoothing alone
      // would leave a residual at depth edges for identical frames.
      const double p_a = spline ? a_decoded->proximity_spline[i] : a_decoded->proximity.values[i];
      const double d_a = spline ? proximity_to_depth(p_a, params) : a_decoded->depth[i];
      if (!warp(u, d_a, b_from_a, cam, pw)) continue;

      BSplineTaps taps;
      if (spline) taps = bspline_taps(w, h, pw.v);
      const Sample s = spline ? apply_taps(taps, std::span<const double>(prox_b.data(), prox_b.size()))
                              : sample_grid(prox_b, w, h, pw.v, opts.interpolation);
      const double predicted = transformed ? depth_to_proximity(pw.x.z(), params) : p_a;
      const double r = predicted - s.value;

      double weight = opts.geo_weight * huber_weight(r, opts.huber_delta_geo);
      if (opts.use_slant) weight *= slant_weight(a_decoded->slant[i], opts.slant_threshold);
      if (opts.use_uncertainty) weight /= dec_level.uncertainty[static_cast<std::size_t>(i)];

      blk.residuals[i] = r;
      blk.weights[i] = weight;
      blk.valid[static_cast<std::size_t>(i)] = 1;
      if (!jac) continue;

      Eigen::Matrix<double, 1, 3> dr_dx = -s.gradient.transpose() * pw.dv_dx;
      if (transformed) dr_dx.z() += depth_to_proximity_derivative(pw.x.z(), params);
      const Eigen::Matrix<double, 1, 6> j_rel = pose_row(dr_dx, pw.x);
      blk.j_pose_a.row(i) = j_rel * ad;
      blk.j_pose_b.row(i) = -blk.j_pose_a.row(i);

      const double dr_dd = dr_dx * (b_from_a.rotation() * pw.ray);
      double dr_dp = dr_dd * proximity_to_depth_derivative(p_a, params);
      if (!transformed) dr_dp += 1.0;

      // Rows i of j_code_a and j_code_b are still zero here.
      auto add_tap = [cs](double* out, const JacobianView& jv, const std::vector<std::uint8_t>& clamped,
                          std::size_t index, double weight) {
        if (weight == 0.0 || clamped[index]) return;
        const float* src = jv.data() + index * static_cast<std::size_t>(cs);
        for (int c = 0; c < cs; ++c) out[c] += weight * src[c];
      };
      double* out_a = blk.j_code_a.row(i).data();
      double* out_b = blk.j_code_b.row(i).data();
      if (spline) {
        const BSplineTaps ta = bspline_taps(w, h, u);
        for (int k = 0; k < 16; ++k) add_tap(out_a, jac_a, clamped_a, ta.index[k], dr_dp * ta.weight[k]);
        for (int k = 0; k < 16; ++k) add_tap(out_b, jac_b, clamped_b, taps.index[k], -taps.weight[k]);
      } else {
        add_tap(out_a, jac_a, clamped_a, static_cast<std::size_t>(i), dr_dp);
        const BilinearTaps bt = bilinear_taps(w, h, pw.v);
        for (int k = 0; k < 4; ++k) add_tap(out_b, jac_b, clamped_b, bt.index[k], -bt.weight[k]);
      }
    }
  }
}

}  // namespace codesfm
