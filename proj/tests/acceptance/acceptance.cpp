// One PASS/FAIL line per acceptance criterion. Tolerances are fixed here; an optional argument
// restricts the run to criteria whose name contains it.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Eigenvalues>

#include "cli.hpp"
#include "codesfm/error.hpp"
#include "codesfm/geometry.hpp"
#include "codesfm/jacobian_check.hpp"
#include "codesfm/io.hpp"
#include "codesfm/sfm.hpp"
#include "codesfm/slam.hpp"
#include "codesfm/solver.hpp"
#include "codesfm/synth/synth.hpp"
#include "codesfm/tracker.hpp"

using namespace codesfm;
namespace fs = std::filesystem;

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[1024];
  std::snprintf(buf, sizeof(buf), f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

double angle_deg(const Vec3& a, const Vec3& b) {
  const double c = a.normalized().dot(b.normalized());
  return std::acos(std::clamp(c, -1.0, 1.0)) / kDeg;
}

// ---------------------------------------------------------------------------------------------

// Same linearization point as `code-sfm check-jacobians`: ground-truth poses, small codes.
Outcome jacobian_suite() {
  const fs::path dir = fs::path(CODESFM_FIXTURE_DIR) / "two_frame";
  const auto t0 = std::chrono::steady_clock::now();
  const SequenceManifest m = load_manifest(dir / "manifest.json");
  const Calibration calib = load_calibration(m.calibration);
  auto kf = [&](int i) {
    const ManifestFrame& f = m.frames[static_cast<std::size_t>(i)];
    Keyframe k;
    k.id = i;
    k.image = std::make_shared<const ImagePyramid>(load_image_pyramid(f.image));
    k.decoder = std::make_shared<const DecoderModel>(load_decoder(*f.decoder));
    k.pose = f.ground_truth_pose.value_or(Se3Pose());
    k.code = Code::Zero(k.decoder->code_size());
    return k;
  };
  Keyframe a = kf(0);
  Keyframe b = kf(1);
  for (Eigen::Index k = 0; k < a.code.size(); ++k) a.code[k] = 0.1 * std::sin(1.0 + k);
  for (Eigen::Index k = 0; k < b.code.size(); ++k) b.code[k] = 0.1 * std::cos(2.0 + k);
  JacobianCheckOptions o;  // step 1e-4, tolerance 1e-4
  const JacobianCheckReport r = check_jacobians(a, b, calib.camera, calib.proximity, o);
  double worst = 1.0;
  std::string worst_name;
  for (const JacobianGroupStats& g : r.groups) {
    if (g.pass_fraction() < worst) {
      worst = g.pass_fraction();
      worst_name = g.residual + "/" + g.variable;
    }
  }
  const std::string dir_s = (dir / "manifest.json").string();
  const char* argv[] = {"code-sfm", "check-jacobians", "--frames", dir_s.c_str()};
  const int exit_code = cli_main(4, argv);
  const double secs = seconds_since(t0);
  return {r.ok(0.95) && exit_code == 0 && secs < 30.0,
          fmt("min pass fraction %.2f%% (%s, need >= 95%%), check-jacobians exit %d, %.1f s (< 30 s)",
              100.0 * worst, worst_name.c_str(), exit_code, secs)};
}

Outcome proximity_roundtrip() {
  const ProximityParams p{2.0};
  bool exact = depth_to_proximity(2.0, p) == 0.5 && depth_to_proximity(0.0, p) == 1.0;
  std::mt19937_64 rng(42);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double worst_rel = 0.0;
  bool range_ok = true;
  for (int i = 0; i < 1'000'000; ++i) {
    // Log-uniform depths over [1e-3, 1e3] m.
    const double d = std::pow(10.0, -3.0 + 6.0 * u(rng));
    const double prox = depth_to_proximity(d, p);
    if (d <= p.a && !(prox >= 0.5 && prox <= 1.0)) range_ok = false;
    const double back = proximity_to_depth(prox, p);
    worst_rel = std::max(worst_rel, std::abs(back - d) / d);
  }
  return {exact && range_ok && worst_rel < 1e-12,
          fmt("p(a) = 0.5 exact: %s, [0,a] -> [0.5,1]: %s, max relative round-trip error %.2e (< 1e-12)",
              exact ? "yes" : "no", range_ok ? "yes" : "no", worst_rel)};
}

synth::FixtureOptions two_frame_options() {
  synth::FixtureOptions o;
  o.width = 256;
  o.height = 192;
  o.num_frames = 2;
  o.motion = synth::Motion::Lateral;
  o.step = 0.05;
  o.decoder.code_size = 128;
  return o;
}

Outcome two_frame_sfm() {
  const synth::Fixture fx = synth::make_fixture(two_frame_options());
  const auto t0 = std::chrono::steady_clock::now();
  SfmOptions so;
  so.problem.camera = fx.camera;
  so.problem.proximity = fx.proximity;
  const std::vector<Keyframe> kfs{fx.keyframe(0), fx.keyframe(1)};
  const std::vector<int> ids{0, 1};
  const SfmResult r = run_sfm(kfs, build_master_pairs(0, ids), so, {{0, fx.frames[0].ground_truth}});
  const double secs = seconds_since(t0);
  const Se3Pose rel_est = r.frame(1).pose;  // frame 0 is the gauge at identity
  const Se3Pose rel_gt = fx.frames[0].pose.inverse() * fx.frames[1].pose;
  const double dir_err = angle_deg(rel_est.translation(), rel_gt.translation());
  const double rot_err = rotation_distance(rel_est, rel_gt) / kDeg;
  const double improvement = 1.0 - *r.master_rmse / *r.master_zero_code_rmse;
  const bool pass = dir_err < 2.0 && rot_err < 0.2 && improvement >= 0.3 && r.report.accepted <= 50 &&
                    secs < 60.0;
  return {pass, fmt("direction %.3f deg (< 2), rotation %.4f deg (< 0.2), rmse %.4f -> %.4f "
                    "(%.1f%% better, >= 30%%), %d accepted iterations (<= 50), %.1f s (< 60 s)",
                    dir_err, rot_err, *r.master_zero_code_rmse, *r.master_rmse, 100.0 * improvement,
                    r.report.accepted, secs)};
}

// Master frame 0 and six partners: 1-3 move down and back, 4-6 move left and forward.
std::vector<Se3Pose> table1_poses(double depth) {
  std::vector<Se3Pose> p{Se3Pose()};
  const double s = 0.03 * depth;
  for (int i = 1; i <= 3; ++i) p.emplace_back(so3_exp(Vec3(0.01 * i, 0, 0)), Vec3(0.0, 0.6 * s * i, -0.5 * s * i));
  for (int i = 1; i <= 3; ++i) p.emplace_back(so3_exp(Vec3(0, -0.01 * i, 0)), Vec3(-0.8 * s * i, 0.0, 0.4 * s * i));
  return p;
}

constexpr double kTable1CodePrior = 0.3;

synth::FixtureOptions table1_options() {
  synth::FixtureOptions o;
  o.width = 128;
  o.height = 96;
  o.decoder.code_size = 64;
  o.poses = table1_poses(o.scene_depth);
  o.render.noise_sigma = 0.02;
  return o;
}

Outcome table1_trend() {
  const synth::Fixture fx = synth::make_fixture(table1_options());
  std::vector<double> rmse;
  for (int k = 1; k <= 6; ++k) {
    SfmOptions so;
    so.problem.camera = fx.camera;
    so.problem.proximity = fx.proximity;
    // The data term is scaled by 1/b with b near 0.02, so the latent prior needs to match.
    so.problem.code_prior_weight = kTable1CodePrior;
    std::vector<Keyframe> kfs;
    std::vector<int> ids;
    for (int i = 0; i <= k; ++i) {
      kfs.push_back(fx.keyframe(i));
      ids.push_back(i);
    }
    const SfmResult r = run_sfm(kfs, build_master_pairs(0, ids), so, {{0, fx.frames[0].ground_truth}});
    rmse.push_back(*r.master_rmse);
  }
  bool monotone = true;
  std::string trace;
  for (std::size_t i = 0; i < rmse.size(); ++i) {
    if (i > 0 && rmse[i] > rmse[i - 1]) monotone = false;
    trace += fmt("%s%.5f", i ? " " : "", rmse[i]);
  }
  const bool strict = rmse.back() < rmse.front();
  return {monotone && strict, fmt("rmse(1..6) = [%s]; non-increasing: %s, rmse(6) < rmse(1): %s",
                                  trace.c_str(), monotone ? "yes" : "no", strict ? "yes" : "no")};
}

Outcome marginalization_oracle() {
  std::mt19937 rng(2024);
  std::normal_distribution<double> nd(0.0, 1.0);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const int nvars = 2 + static_cast<int>(rng() % 19);  // 2..20 scalar variables
    VariableLayout layout;
    for (int v = 0; v < nvars; ++v) layout.add(v, VariableKind::Code, 1);
    const int m = nvars + 5 + static_cast<int>(rng() % 10);
    Eigen::MatrixXd J(m, nvars);
    Eigen::VectorXd r(m);
    for (int i = 0; i < m; ++i) {
      r[i] = nd(rng);
      for (int j = 0; j < nvars; ++j) J(i, j) = nd(rng);
    }
    VariableState x0;
    for (int v = 0; v < nvars; ++v) x0.vectors[v] = Eigen::VectorXd::Constant(1, nd(rng));
    NormalEquations ne{layout, J.transpose() * J, J.transpose() * r, 0.5 * r.squaredNorm()};
    const Eigen::VectorXd joint = ne.H.ldlt().solve(-ne.g);

    std::vector<VarId> drop;
    for (int v = 0; v < nvars; ++v) {
      if (rng() % 2 == 0) drop.push_back(v);
    }
    if (static_cast<int>(drop.size()) == nvars) drop.pop_back();
    const LinearPrior prior = marginalize(ne, drop, x0);
    const Eigen::VectorXd kept = prior.H.ldlt().solve(-prior.g);
    for (const VariableEntry& e : prior.layout.entries()) {
      const double diff = std::abs(kept[e.offset] - joint[layout.at(e.id).offset]);
      worst = std::max(worst, diff / std::max(1.0, std::abs(joint[layout.at(e.id).offset])));
    }
  }
  return {worst < 1e-8, fmt("100 trials, max deviation from the joint solution %.2e (< 1e-8)", worst)};
}

Outcome gauge_null_space() {
  synth::FixtureOptions o;
  o.width = 128;
  o.height = 96;
  o.num_frames = 2;
  o.decoder.code_size = 32;
  const synth::Fixture fx = synth::make_fixture(o);
  const Keyframe a = fx.keyframe(0);
  const Keyframe b = fx.keyframe(1);
  JointProblemOptions po;
  po.camera = fx.camera;
  po.proximity = fx.proximity;
  po.levels = {0};
  JointProblem problem({{0, a.image.get(), a.decoder.get(), false, false},
                        {1, b.image.get(), b.decoder.get(), false, false}},
                       build_master_pairs(0, std::vector<int>{0, 1}), po);
  VariableState s = problem.make_state({{0, fx.frames[0].pose}, {1, fx.frames[1].pose}},
                                       {{0, fx.frames[0].decoder->true_code}, {1, fx.frames[1].decoder->true_code}});
  const NormalEquations ne = problem.linearize(s);
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(ne.H);
  const Eigen::VectorXd ev = es.eigenvalues();
  const double largest = ev.maxCoeff();
  const double sixth = ev[5];
  const double seventh = ev[6];
  return {sixth < 1e-8 * largest,
          fmt("6th smallest eigenvalue / largest = %.2e (< 1e-8), 7th = %.2e", sixth / largest, seventh / largest)};
}

synth::FixtureOptions tracking_options(const std::vector<Se3Pose>& poses) {
  synth::FixtureOptions o;
  o.width = 256;
  o.height = 192;
  o.decoder.code_size = 32;
  o.poses = poses;
  o.all_decoders = false;
  o.decoder_frames = {0};
  return o;
}

Keyframe reference_keyframe(const synth::Fixture& fx) {
  Keyframe ref = fx.keyframe(0);
  ref.code = fx.frames[0].decoder->true_code;
  ref.pose = fx.frames[0].pose;
  return ref;
}

Outcome tracking() {
  // 2 degrees about a tilted axis and 4 cm along a diagonal.
  const Se3Pose small(so3_exp(2.0 * kDeg * Vec3(1.0, 2.0, 0.5).normalized()), 0.04 * Vec3(1.0, -0.5, 0.3).normalized());
  // 20 degrees about the optical axis.
  const Se3Pose large(so3_exp(Vec3(0.0, 0.0, 20.0 * kDeg)), Vec3(0.02, 0.0, 0.0));
  const synth::Fixture fx = synth::make_fixture(tracking_options({Se3Pose(), small, large}));
  const Keyframe ref = reference_keyframe(fx);

  TrackerOptions c2f;
  const TrackingState s1 = track(*fx.pyramid(1), ref, Se3Pose(), fx.camera, fx.proximity, c2f);
  const double rot1 = rotation_distance(s1.current_pose_estimate, small) / kDeg;
  const double tr1 = (s1.current_pose_estimate.translation() - small.translation()).norm();

  TrackerOptions finest = c2f;
  finest.levels = {c2f.levels.back()};
  finest.iterations_per_level = static_cast<int>(c2f.levels.size()) * c2f.iterations_per_level;
  const TrackingState f20 = track(*fx.pyramid(2), ref, Se3Pose(), fx.camera, fx.proximity, finest);
  const TrackingState c20 = track(*fx.pyramid(2), ref, Se3Pose(), fx.camera, fx.proximity, c2f);
  const double frot = rotation_distance(f20.current_pose_estimate, large) / kDeg;
  const double crot = rotation_distance(c20.current_pose_estimate, large) / kDeg;
  const double ctr = (c20.current_pose_estimate.translation() - large.translation()).norm();

  const bool small_ok = rot1 < 0.1 && tr1 < 0.002 && s1.convergence != TrackingStatus::Lost;
  const bool finest_fails = frot > 1.0 || f20.convergence == TrackingStatus::Lost;
  const bool c2f_ok = crot < 0.1 && ctr < 0.002 && c20.convergence != TrackingStatus::Lost;
  return {small_ok && finest_fails && c2f_ok,
          fmt("2deg/4cm: %.4f deg, %.2f mm (< 0.1 deg, < 2 mm); 20deg: finest-only error %.2f deg (%s, "
              "must fail), coarse-to-fine %.4f deg / %.2f mm (%s)",
              rot1, 1e3 * tr1, frot, to_string(f20.convergence), crot, 1e3 * ctr, to_string(c20.convergence))};
}

synth::FixtureOptions slam_options() {
  synth::FixtureOptions o;
  o.width = 128;
  o.height = 96;
  o.num_frames = 60;
  o.motion = synth::Motion::Loop;
  o.step = 0.15;
  o.decoder.code_size = 32;
  return o;
}

Outcome slam_regression() {
  const synth::Fixture fx = synth::make_fixture(slam_options());
  SlamConfig cfg;
  DecoderProvider provider = [&fx](const SlamFrame& f) { return fx.decoder(f.index); };
  SlamSystem slam(cfg, fx.camera, fx.proximity, provider);
  auto frame = [&](int i) { return SlamFrame{i, fx.frames[static_cast<std::size_t>(i)].timestamp, fx.pyramid(i)}; };
  slam.initialize(frame(0), frame(1));
  for (int i = 2; i < static_cast<int>(fx.frames.size()); ++i) slam.process_frame(frame(i));

  const std::vector<TrajectoryEntry> traj = slam.map().trajectory();
  double path = 0.0;
  for (std::size_t i = 1; i < fx.frames.size(); ++i) {
    path += (fx.frames[i].pose.translation() - fx.frames[i - 1].pose.translation()).norm();
  }
  const Se3Pose first_gt = fx.frames.front().pose;
  const Se3Pose end_est = traj.back().pose;
  const Se3Pose end_gt = first_gt.inverse() * fx.frames.back().pose;
  const double drift = (end_est.translation() - end_gt.translation()).norm();

  double worst_marg = 0.0;
  for (const MarginalizationEvent& e : slam.map().marginalizations) worst_marg = std::max(worst_marg, e.relative_change);
  double total_time = 0.0;
  std::size_t n_updates = 0;
  for (const MapUpdateStats& u : slam.map_updates()) {
    total_time += u.seconds;
    ++n_updates;
  }
  const double rate = n_updates > 0 ? static_cast<double>(n_updates) / total_time : 0.0;
  const bool pass = drift < 0.05 * path && slam.map().max_window <= 4 &&
                    !slam.map().marginalizations.empty() && worst_marg < 0.01 && rate >= 1.0;
  return {pass, fmt("drift %.4f m over %.3f m path (%.2f%%, < 5%%), max window %zu (<= 4), %zu marginalizations, "
                    "worst marginalization perturbation %.3f%% (< 1%%), map updates %.2f Hz (>= 1 Hz)",
                    drift, path, 100.0 * drift / path, slam.map().max_window,
                    slam.map().marginalizations.size(), 100.0 * worst_marg, rate)};
}

Outcome rotation_only() {
  synth::FixtureOptions o;
  o.width = 128;
  o.height = 96;
  o.num_frames = 2;
  o.motion = synth::Motion::RotationOnly;
  o.step = 5.0;  // degrees
  o.decoder.code_size = 32;
  const synth::Fixture fx = synth::make_fixture(o);
  SfmOptions so;
  so.problem.camera = fx.camera;
  so.problem.proximity = fx.proximity;
  const SfmResult r = run_sfm({fx.keyframe(0), fx.keyframe(1)}, build_master_pairs(0, std::vector<int>{0, 1}), so);
  const Se3Pose gt = fx.frames[1].pose;
  const double rot_err = rotation_distance(r.frame(1).pose, gt) / kDeg;
  bool finite = true;
  for (double c : r.report.cost_trace) finite = finite && std::isfinite(c);
  return {finite && rot_err < 0.5,
          fmt("rotation error %.4f deg (< 0.5), translation %.2f mm, %d iterations, %s",
              rot_err, 1e3 * r.frame(1).pose.translation().norm(), r.report.iterations,
              to_string(r.report.termination).c_str())};
}

}  // namespace

int main(int argc, char** argv) {
  const std::string filter = argc > 1 ? argv[1] : "";
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"jacobian-suite", jacobian_suite},
      {"proximity-parametrization", proximity_roundtrip},
      {"two-frame-sfm", two_frame_sfm},
      {"table1-trend", table1_trend},
      {"marginalization-oracle", marginalization_oracle},
      {"gauge-null-space", gauge_null_space},
      {"tracking", tracking},
      {"slam-regression", slam_regression},
      {"rotation-only", rotation_only},
  };
  int failed = 0;
  for (const auto& [name, fn] : criteria) {
    if (!filter.empty() && name.find(filter) == std::string::npos) continue;
    Outcome o;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::printf("%s %s: %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str(), seconds_since(t0));
    std::fflush(stdout);
    if (!o.pass) ++failed;
  }
  return failed == 0 ? 0 : 1;
}
