#include <random>

#include <gtest/gtest.h>

#include "codesfm/jacobian_check.hpp"
#include "codesfm/solver.hpp"
#include "codesfm/warp.hpp"
#include "test_util.hpp"

namespace codesfm {
namespace {

struct Pair {
  FrameView a;
  FrameView b;
  Code code_a;
  Code code_b;
};

// Frames 0 and 1 of the small fixture at ground-truth poses and slightly perturbed true codes.
Pair make_pair_views() {
  const auto& fx = test::small_fixture();
  Pair p;
  p.code_a = fx.frames[0].decoder->true_code;
  p.code_b = fx.frames[1].decoder->true_code;
  p.a = {fx.pyramid(0).get(), fx.decoder(0).get(), &p.code_a, fx.frames[0].pose};
  p.b = {fx.pyramid(1).get(), fx.decoder(1).get(), &p.code_b, fx.frames[1].pose};
  return p;
}

void set_vars(ResidualBlock& blk, bool photometric) {
  blk.vars.pose_a = 0;
  blk.vars.pose_b = 2;
  blk.vars.code_a = 1;
  if (!photometric) blk.vars.code_b = 3;
}

VariableLayout pair_layout(int code_size) {
  VariableLayout layout;
  layout.add(0, VariableKind::Pose);
  layout.add(1, VariableKind::Code, code_size);
  layout.add(2, VariableKind::Pose);
  layout.add(3, VariableKind::Code, code_size);
  return layout;
}

TEST(Weights, Huber) {
  EXPECT_EQ(huber_weight(0.05, 0.1), 1.0);
  EXPECT_EQ(huber_weight(-0.1, 0.1), 1.0);
  EXPECT_DOUBLE_EQ(huber_weight(0.4, 0.1), 0.25);
  EXPECT_DOUBLE_EQ(huber_weight(-0.2, 0.1), 0.5);
}

TEST(Weights, SlantAndOcclusion) {
  EXPECT_EQ(slant_weight(1.0, 0.17), 1.0);
  EXPECT_EQ(slant_weight(-0.2, 0.17), 0.0);
  EXPECT_NEAR(slant_weight(0.085, 0.17), 0.5, 1e-15);
  EXPECT_EQ(occlusion_weight(0.5, 0.4, 0.05), 1.0);
  EXPECT_EQ(occlusion_weight(0.5, 0.55, 0.05), 1.0);
  EXPECT_NEAR(occlusion_weight(0.5, 0.6, 0.05), std::exp(-1.0), 1e-12);
  EXPECT_LT(occlusion_weight(0.3, 0.9, 0.05), 1e-10);
}

TEST(Warp, IdentityMapsPixelToItself) {
  const CameraIntrinsics cam{60, 60, 31.5, 23.5, 64, 48};
  const auto v = warp_pixel(Vec2(10.3, 20.7), 0.4, Se3Pose(), cam, ProximityParams{2.0});
  ASSERT_TRUE(v);
  EXPECT_LT((*v - Vec2(10.3, 20.7)).norm(), 1e-12);
}

TEST(Warp, DepthScalesParallax) {
  const CameraIntrinsics cam{60, 60, 31.5, 23.5, 64, 48};
  const ProximityParams pp{2.0};
  const Se3Pose b_from_a(Mat3::Identity(), Vec3(-0.1, 0, 0));
  const Vec2 u(32, 24);
  const double near = depth_to_proximity(1.0, pp);
  const double far = depth_to_proximity(4.0, pp);
  const double shift_near = (*warp_pixel(u, near, b_from_a, cam, pp) - u).x();
  const double shift_far = (*warp_pixel(u, far, b_from_a, cam, pp) - u).x();
  EXPECT_NEAR(shift_near, -6.0, 1e-12);
  EXPECT_NEAR(shift_far, -1.5, 1e-12);
  EXPECT_FALSE(warp_pixel(Vec2(1, 24), near, Se3Pose(Mat3::Identity(), Vec3(0.2, 0, 0)).inverse(),
                          cam, pp));
}

TEST(Residuals, SelfPairIsZero) {
  const Pair p = make_pair_views();
  const auto& fx = test::small_fixture();
  ResidualOptions opts;
  const ResidualBlock photo = photometric_residual(p.a, p.a, 1, fx.camera, fx.proximity, opts);
  EXPECT_GT(photo.num_valid(), photo.size() / 2);
  EXPECT_LT(photo.residuals.cwiseAbs().maxCoeff(), 1e-6);
  const ResidualBlock geo = geometric_residual(p.a, p.a, 1, fx.camera, fx.proximity, opts);
  EXPECT_LT(geo.residuals.cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_TRUE(photo.pose_b_negates_a);
  EXPECT_EQ(photo.j_code_b.size(), 0);
  EXPECT_EQ(geo.j_affine.size(), 0);
}

TEST(Residuals, InvalidRowsCarryZeroWeight) {
  const Pair p = make_pair_views();
  const auto& fx = test::small_fixture();
  const ResidualBlock blk = photometric_residual(p.a, p.b, 0, fx.camera, fx.proximity, {});
  for (Eigen::Index i = 0; i < blk.size(); ++i) {
    if (!blk.valid[i]) {
      EXPECT_EQ(blk.weights[i], 0.0);
      EXPECT_EQ(blk.j_pose_a.row(i).squaredNorm(), 0.0);
    }
  }
}

TEST(Residuals, IntoMatchesValueReturning) {
  const Pair p = make_pair_views();
  const auto& fx = test::small_fixture();
  ResidualBlock reused = geometric_residual(p.a, p.b, 0, fx.camera, fx.proximity, {});
  photometric_residual_into(reused, p.b, p.a, 2, fx.camera, fx.proximity, {});
  const ResidualBlock fresh = photometric_residual(p.b, p.a, 2, fx.camera, fx.proximity, {});
  EXPECT_EQ(reused.residuals, fresh.residuals);
  EXPECT_EQ(reused.weights, fresh.weights);
  EXPECT_EQ(reused.j_pose_a, fresh.j_pose_a);
  EXPECT_EQ(reused.j_code_a, fresh.j_code_a);
  EXPECT_EQ(reused.j_code_b.size(), 0);
}

TEST(Residuals, CostOnlyMatchesFullEvaluation) {
  const Pair p = make_pair_views();
  const auto& fx = test::small_fixture();
  ResidualOptions cost_only;
  cost_only.compute_jacobians = false;
  const ResidualBlock full = geometric_residual(p.a, p.b, 1, fx.camera, fx.proximity, {});
  const ResidualBlock cheap = geometric_residual(p.a, p.b, 1, fx.camera, fx.proximity, cost_only);
  EXPECT_FALSE(cheap.has_jacobians());
  EXPECT_NEAR(cheap.cost(), full.cost(), 1e-14);
}

// Analytic Jacobians against central differences, for every residual configuration.
struct JacCase {
  Interpolation interp;
  GeometricMode mode;
  int level;
  // Bilinear photometric gradients come from central-difference images rather than the
  // interpolant, so only the geometric groups are exact there.
  bool photometric_exact = true;
};

class JacobianOracle : public ::testing::TestWithParam<JacCase> {};

TEST_P(JacobianOracle, AgreesWithFiniteDifferences) {
  const auto& fx = test::small_fixture();
  Keyframe a = fx.keyframe(0);
  Keyframe b = fx.keyframe(1);
  a.pose = fx.frames[0].pose;
  // The fixture moves purely sideways, which puts every warped row exactly on a spline knot;
  // a small tilt keeps the central differences from straddling knots systematically.
  b.pose = Se3Pose::exp((Vec6() << 0.003, -0.002, 0.004, 0.004, -0.003, 0.002).finished()) *
           fx.frames[1].pose;
  a.code = fx.frames[0].decoder->true_code;
  b.code = fx.frames[1].decoder->true_code;
  JacobianCheckOptions o;
  o.level = GetParam().level;
  o.residual.interpolation = GetParam().interp;
  o.residual.geometric_mode = GetParam().mode;
  const JacobianCheckReport r = check_jacobians(a, b, fx.camera, fx.proximity, o);
  ASSERT_FALSE(r.groups.empty());
  for (const JacobianGroupStats& g : r.groups) {
    if (!GetParam().photometric_exact && g.residual == "photometric") continue;
    EXPECT_GT(g.checked, 50u) << g.residual << " " << g.variable;
    EXPECT_GE(g.pass_fraction(), 0.95) << g.residual << " " << g.variable << " max_rel " << g.max_rel;
  }
}

INSTANTIATE_TEST_SUITE_P(
    Configurations, JacobianOracle,
    ::testing::Values(JacCase{Interpolation::CubicBSpline, GeometricMode::Transformed, 0},
                      JacCase{Interpolation::CubicBSpline, GeometricMode::Direct, 0},
                      JacCase{Interpolation::CubicBSpline, GeometricMode::Transformed, 1},
                      JacCase{Interpolation::Bilinear, GeometricMode::Transformed, 0, false}),
    [](const ::testing::TestParamInfo<JacCase>& info) {
      return std::string(info.param.interp == Interpolation::Bilinear ? "Bilinear" : "BSpline") +
             (info.param.mode == GeometricMode::Direct ? "Direct" : "Transformed") + "L" +
             std::to_string(info.param.level);
    });

// H and g from the builder against a dense stacked Jacobian.
TEST(Assembly, MatchesDenseOracle) {
  const Pair p = make_pair_views();
  const auto& fx = test::small_fixture();
  const int cs = static_cast<int>(p.code_a.size());
  std::vector<ResidualBlock> blocks;
  blocks.push_back(photometric_residual(p.a, p.b, 1, fx.camera, fx.proximity, {}));
  set_vars(blocks.back(), true);
  blocks.push_back(geometric_residual(p.a, p.b, 1, fx.camera, fx.proximity, {}));
  set_vars(blocks.back(), false);

  const VariableLayout layout = pair_layout(cs);
  VariableState state;
  state.poses[0] = p.a.world_from_frame;
  state.poses[2] = p.b.world_from_frame;
  state.vectors[1] = p.code_a;
  state.vectors[3] = p.code_b;
  const double prior = 0.01;
  const NormalEquations ne = assemble(blocks, layout, state, {}, prior);

  const int n = layout.dimension();
  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(n, n);
  Eigen::VectorXd g = Eigen::VectorXd::Zero(n);
  double cost = 0.0;
  for (const ResidualBlock& blk : blocks) {
    Eigen::MatrixXd j = Eigen::MatrixXd::Zero(blk.size(), n);
    j.middleCols(layout.at(0).offset, 6) = blk.j_pose_a;
    j.middleCols(layout.at(2).offset, 6) = blk.j_pose_b;
    j.middleCols(layout.at(1).offset, cs) = blk.j_code_a;
    if (blk.j_code_b.size() > 0) j.middleCols(layout.at(3).offset, cs) = blk.j_code_b;
    const Eigen::MatrixXd wj = blk.weights.asDiagonal() * j;
    h += j.transpose() * wj;
    g += wj.transpose() * blk.residuals;
    cost += blk.cost();
  }
  for (VarId id : {1, 3}) {
    const VariableEntry& e = layout.at(id);
    h.block(e.offset, e.offset, cs, cs).diagonal().array() += prior;
    g.segment(e.offset, cs) += prior * state.vectors[id];
    cost += 0.5 * prior * state.vectors[id].squaredNorm();
  }
  const double scale = h.cwiseAbs().maxCoeff();
  EXPECT_LT((ne.H - h).cwiseAbs().maxCoeff(), 1e-10 * scale);
  EXPECT_LT((ne.g - g).cwiseAbs().maxCoeff(), 1e-10 * std::max(1.0, g.cwiseAbs().maxCoeff()));
  EXPECT_NEAR(ne.cost, cost, 1e-10 * cost);
}

TEST(Assembly, MirroredPoseColumnsMatchExplicitOnes) {
  const Pair p = make_pair_views();
  const auto& fx = test::small_fixture();
  const int cs = static_cast<int>(p.code_a.size());
  ResidualBlock mirrored = geometric_residual(p.a, p.b, 0, fx.camera, fx.proximity, {});
  set_vars(mirrored, false);
  ASSERT_TRUE(mirrored.pose_b_negates_a);
  ResidualBlock explicit_b = mirrored;
  explicit_b.pose_b_negates_a = false;

  const VariableLayout layout = pair_layout(cs);
  VariableState state;
  state.vectors[1] = p.code_a;
  state.vectors[3] = p.code_b;
  const NormalEquations m = assemble(std::span(&mirrored, 1), layout, state, {}, 0.0);
  const NormalEquations e = assemble(std::span(&explicit_b, 1), layout, state, {}, 0.0);
  EXPECT_LT((m.H - e.H).cwiseAbs().maxCoeff(), 1e-12 * e.H.cwiseAbs().maxCoeff());
  EXPECT_LT((m.g - e.g).cwiseAbs().maxCoeff(), 1e-12 * std::max(1.0, e.g.cwiseAbs().maxCoeff()));
}

}  // namespace
}  // namespace codesfm
