#include <fstream>
#include <set>

#include <gtest/gtest.h>

#include "codesfm/io.hpp"
#include "codesfm/slam.hpp"
#include "test_util.hpp"

namespace codesfm {
namespace {

synth::Fixture sequence(synth::Motion motion, int frames) {
  synth::FixtureOptions o;
  o.width = 64;
  o.height = 48;
  o.num_frames = frames;
  o.motion = motion;
  o.step = 0.04;
  o.decoder.code_size = 8;
  o.render.supersample = 2;
  return synth::make_fixture(o);
}

SlamFrame slam_frame(const synth::Fixture& fx, int i) {
  return {i, fx.frames[i].timestamp, fx.pyramid(i)};
}

DecoderProvider provider(const synth::Fixture& fx) {
  return [&fx](const SlamFrame& f) { return fx.decoder(f.index); };
}

SlamConfig small_config() {
  SlamConfig c;
  c.init_iters = 15;
  c.map_opt_iters = 4;
  c.max_keyframes = 3;
  return c;
}

TEST(Slam, StaticCameraAddsNoKeyframes) {
  const synth::Fixture fx = sequence(synth::Motion::Static, 6);
  SlamSystem slam(small_config(), fx.camera, fx.proximity, provider(fx));
  slam.initialize(slam_frame(fx, 0), slam_frame(fx, 1));
  const std::size_t after_init = slam.map().keyframes.size();
  for (int i = 2; i < 6; ++i) EXPECT_EQ(slam.process_frame(slam_frame(fx, i)), FrameOutcome::TrackedOnly);
  EXPECT_EQ(slam.map().keyframes.size(), after_init);
  EXPECT_EQ(slam.map().frames.size(), 6u);
  for (const TrajectoryEntry& e : slam.map().trajectory()) {
    EXPECT_LT(e.pose.translation().norm(), 1e-3);
  }
}

TEST(Slam, MarginalizationKeepsWindowAndPriorConsistent) {
  const synth::Fixture fx = sequence(synth::Motion::Lateral, 9);
  SlamConfig cfg = small_config();
  SlamSystem slam(cfg, fx.camera, fx.proximity, provider(fx));
  slam.initialize(slam_frame(fx, 0), slam_frame(fx, 1));
  for (int i = 2; i < 9; ++i) slam.process_frame(slam_frame(fx, i));

  const SlamMap& map = slam.map();
  ASSERT_FALSE(map.marginalizations.empty());
  ASSERT_TRUE(map.prior.has_value());
  EXPECT_LE(map.max_window, static_cast<std::size_t>(cfg.max_keyframes));
  EXPECT_LE(map.keyframes.size(), static_cast<std::size_t>(cfg.max_keyframes));

  std::set<VarId> window;
  for (const Keyframe& k : map.keyframes) {
    window.insert(JointProblem::pose_var(k.id));
    window.insert(JointProblem::code_var(k.id));
  }
  for (const VariableEntry& e : map.prior->layout.entries()) EXPECT_TRUE(window.count(e.id)) << e.id;
  const int per_keyframe = 6 + 8;
  EXPECT_GT(map.prior->layout.dimension(), 0);
  EXPECT_LE(map.prior->layout.dimension(), (cfg.max_keyframes - 1) * per_keyframe);
  EXPECT_EQ(map.marginalizations.back().prior_dimension, map.prior->layout.dimension());
  EXPECT_EQ(map.prior->H.rows(), map.prior->layout.dimension());
  EXPECT_EQ(map.keyframe_poses.size(), map.keyframes.size() + map.marginalizations.size());
}

TEST(Slam, TrajectoryIsChronologicalAndExports) {
  test::TempDir dir;
  const synth::Fixture fx = sequence(synth::Motion::Lateral, 4);
  SlamSystem slam(small_config(), fx.camera, fx.proximity, provider(fx));
  slam.initialize(slam_frame(fx, 0), slam_frame(fx, 1));
  for (int i = 2; i < 4; ++i) slam.process_frame(slam_frame(fx, i));
  export_trajectory(slam.map(), dir / "traj.txt");
  const auto traj = load_tum_trajectory(dir / "traj.txt");
  ASSERT_EQ(traj.size(), 4u);
  for (std::size_t i = 1; i < traj.size(); ++i) EXPECT_GT(traj[i].timestamp, traj[i - 1].timestamp);
  EXPECT_LT(traj[0].pose.translation().norm(), 1e-12);
}

TEST(Slam, EmptyMapExportsEmptyFile) {
  test::TempDir dir;
  export_trajectory(SlamMap{}, dir / "empty.txt");
  ASSERT_TRUE(std::filesystem::exists(dir / "empty.txt"));
  EXPECT_EQ(std::filesystem::file_size(dir / "empty.txt"), 0u);
}

TEST(Slam, RejectsInvalidConfig) {
  SlamConfig c;
  c.max_keyframes = 1;
  EXPECT_THROW(c.validate(), Error);
  c = SlamConfig{};
  c.baseline_threshold = -0.1;
  EXPECT_THROW(c.validate(), Error);
}

TEST(Slam, LoadsConfigKeys) {
  test::TempDir dir;
  std::ofstream(dir / "slam.json") << R"({"max_keyframes": 6, "map_cost_tol": 1e-3, "init_iters": 7})";
  const SlamConfig c = load_slam_config(dir / "slam.json");
  EXPECT_EQ(c.max_keyframes, 6);
  EXPECT_EQ(c.init_iters, 7);
  EXPECT_EQ(c.optimizer.cost_tol, 1e-3);
  EXPECT_EQ(c.baseline_threshold, SlamConfig{}.baseline_threshold);
}

}  // namespace
}  // namespace codesfm
