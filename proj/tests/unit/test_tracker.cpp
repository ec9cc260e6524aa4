#include <gtest/gtest.h>

#include "codesfm/tracker.hpp"
#include "test_util.hpp"

namespace codesfm {
namespace {

Keyframe reference() {
  const auto& fx = test::small_fixture();
  Keyframe kf = fx.keyframe(0);
  kf.code = fx.frames[0].decoder->true_code;
  return kf;
}

double translation_error(const Se3Pose& a, const Se3Pose& b) {
  return (a.translation() - b.translation()).norm();
}

TEST(Tracker, SameImageStaysAtIdentity) {
  const auto& fx = test::small_fixture();
  const Keyframe kf = reference();
  const TrackingState s = track(*kf.image, kf, Se3Pose(), fx.camera, fx.proximity);
  EXPECT_NE(s.convergence, TrackingStatus::Lost);
  EXPECT_LT(s.current_pose_estimate.translation().norm(), 1e-6);
  EXPECT_LT(rotation_distance(s.current_pose_estimate, Se3Pose()), 1e-6);
  EXPECT_GT(s.inlier_fraction, 0.9);
  EXPECT_EQ(s.reference_keyframe_id, kf.id);
}

TEST(Tracker, RecoversSmallPerturbation) {
  const auto& fx = test::small_fixture();
  const Keyframe kf = reference();
  const Se3Pose init = Se3Pose::exp((Vec6() << 0.02, -0.01, 0.015, 0.005, -0.008, 0.004).finished());
  const TrackingState s = track(*kf.image, kf, init, fx.camera, fx.proximity);
  EXPECT_LT(s.current_pose_estimate.translation().norm(), 2e-3);
  EXPECT_LT(rotation_distance(s.current_pose_estimate, Se3Pose()), 1e-3);
  EXPECT_LE(s.final_cost, s.initial_cost);
}

TEST(Tracker, TracksSecondFrame) {
  const auto& fx = test::small_fixture();
  const Keyframe kf = reference();
  const Se3Pose truth = fx.frames[1].pose;
  const TrackingState s = track(*fx.pyramid(1), kf, Se3Pose(), fx.camera, fx.proximity);
  EXPECT_NE(s.convergence, TrackingStatus::Lost);
  EXPECT_LT(translation_error(s.current_pose_estimate, truth), 0.2 * truth.translation().norm());
}

TEST(Tracker, AffineTermsAbsorbIllumination) {
  const auto& fx = test::small_fixture();
  const Keyframe kf = reference();
  const ImagePyramid bright = kf.image->with_affine(1.25, 0.05);
  TrackerOptions o;
  o.estimate_affine = true;
  const TrackingState s = track(bright, kf, Se3Pose(), fx.camera, fx.proximity, o);
  EXPECT_LT(s.current_pose_estimate.translation().norm(), 1e-3);
  EXPECT_LT(rotation_distance(s.current_pose_estimate, Se3Pose()), 1e-3);
  // Residual is I_ref - (gain I + bias), so the recovered terms invert the change.
  EXPECT_NEAR(s.gain, 1.0 / 1.25, 0.02);
  EXPECT_NEAR(s.bias, -0.05 / 1.25, 0.02);
}

TEST(Tracker, LeavesKeyframeUntouched) {
  const auto& fx = test::small_fixture();
  const Keyframe kf = reference();
  const Keyframe copy = kf;
  track(*fx.pyramid(1), kf, Se3Pose(), fx.camera, fx.proximity);
  EXPECT_EQ(kf.code, copy.code);
  EXPECT_EQ(kf.pose.translation(), copy.pose.translation());
  EXPECT_EQ(kf.pose.rotation(), copy.pose.rotation());
  EXPECT_EQ(kf.image.get(), copy.image.get());
}

TEST(Tracker, NeverWorseThanInitialization) {
  const auto& fx = test::small_fixture();
  const Keyframe kf = reference();
  // Far outside the basin: whatever the outcome, the cost must not grow.
  const Se3Pose init = Se3Pose::exp((Vec6() << 0.6, 0.3, -0.4, 0.4, -0.3, 0.5).finished());
  const TrackingState s = track(*fx.pyramid(1), kf, init, fx.camera, fx.proximity);
  EXPECT_LE(s.final_cost, s.initial_cost + 1e-12);
}

TEST(Tracker, ScheduleAppendsFullResolution) {
  TrackerOptions o;
  EXPECT_EQ(o.schedule(), (std::vector<int>{3, 2, 1}));
  o.full_resolution = true;
  EXPECT_EQ(o.schedule(), (std::vector<int>{3, 2, 1, 0}));
}

}  // namespace
}  // namespace codesfm
