#include "codesfm/slam.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>

#include <nlohmann/json.hpp>

#include "codesfm/error.hpp"

namespace codesfm {
namespace fs = std::filesystem;

void SlamConfig::validate() const {
  if (max_keyframes < 2) throw Error(ErrorCode::InvalidArgument, "max_keyframes must be at least 2");
  if (!(baseline_threshold > 0.0)) throw Error(ErrorCode::InvalidArgument, "baseline_threshold must be positive");
  if (map_opt_iters < 1 || init_iters < 1) throw Error(ErrorCode::InvalidArgument, "iteration budgets must be positive");
  if (mapping_levels.empty()) throw Error(ErrorCode::InvalidArgument, "no mapping levels");
  if (code_prior_weight < 0.0) throw Error(ErrorCode::InvalidArgument, "negative code prior");
  residual.validate();
}

SlamConfig load_slam_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  SlamConfig c;
  try {
    const nlohmann::json j = nlohmann::json::parse(in);
    c.max_keyframes = j.value("max_keyframes", c.max_keyframes);
    c.baseline_threshold = j.value("baseline_threshold", c.baseline_threshold);
    c.map_opt_iters = j.value("map_opt_iters", c.map_opt_iters);
    c.init_iters = j.value("init_iters", c.init_iters);
    c.mapping_levels = j.value("mapping_levels", c.mapping_levels);
    c.code_prior_weight = j.value("code_prior_weight", c.code_prior_weight);
    c.tracking.levels = j.value("tracking_levels", c.tracking.levels);
    c.tracking.full_resolution = j.value("tracking_full_resolution", c.tracking.full_resolution);
    c.tracking.estimate_affine = j.value("tracking_affine", c.tracking.estimate_affine);
    c.tracking.lost_inlier_fraction = j.value("lost_inlier_fraction", c.tracking.lost_inlier_fraction);
    c.residual.geo_weight = j.value("geo_weight", c.residual.geo_weight);
    c.reoptimize_after_marginalization =
        j.value("reoptimize_after_marginalization", c.reoptimize_after_marginalization);
    c.num_threads = j.value("num_threads", c.num_threads);
    c.optimizer.cost_tol = j.value("map_cost_tol", c.optimizer.cost_tol);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::FormatError, path.string() + ": " + e.what());
  }
  c.validate();
  return c;
}

DecoderProvider directory_decoder_provider(fs::path directory, std::vector<fs::path> image_paths) {
  return [directory = std::move(directory), paths = std::move(image_paths)](const SlamFrame& f) {
    if (f.index < 0 || static_cast<std::size_t>(f.index) >= paths.size()) {
      throw Error(ErrorCode::UnknownFrame, "no image path for frame " + std::to_string(f.index));
    }
    const fs::path p = directory / (paths[static_cast<std::size_t>(f.index)].stem().string() + ".csdm");
    return std::make_shared<const DecoderModel>(load_decoder(p));
  };
}

std::vector<TrajectoryEntry> SlamMap::trajectory() const {
  std::vector<TrajectoryEntry> out;
  out.reserve(frames.size());
  for (const FrameRecord& r : frames) {
    out.push_back({r.timestamp, keyframe_poses.at(r.keyframe_id) * r.keyframe_from_frame});
  }
  return out;
}

void export_trajectory(const SlamMap& map, const fs::path& path) {
  const std::vector<TrajectoryEntry> t = map.trajectory();
  save_tum_trajectory(t, path);
}

SlamSystem::SlamSystem(SlamConfig config, CameraIntrinsics camera, ProximityParams params,
                       DecoderProvider decoders)
    : config_(std::move(config)), camera_(camera), params_(params), decoders_(std::move(decoders)) {
  config_.validate();
  camera_.validate();
  params_.validate();
  if (!decoders_) throw Error(ErrorCode::InvalidArgument, "SLAM needs a decoder provider");
}

Keyframe SlamSystem::make_keyframe(const SlamFrame& frame, const Se3Pose& pose) const {
  Keyframe k;
  k.id = frame.index;
  k.image = frame.image;
  k.decoder = decoders_(frame);
  if (!k.decoder) throw Error(ErrorCode::IoError, "no decoder for frame " + std::to_string(frame.index));
  k.pose = pose;
  k.code = Code::Zero(k.decoder->code_size());
  k.validate();
  return k;
}

JointProblemOptions SlamSystem::problem_options() const {
  JointProblemOptions o;
  o.camera = camera_;
  o.proximity = params_;
  o.residual = config_.residual;
  o.code_prior_weight = config_.code_prior_weight;
  o.levels = config_.mapping_levels;
  o.num_threads = config_.num_threads;
  return o;
}

const SlamMap& SlamSystem::initialize(const SlamFrame& frame0, const SlamFrame& frame1) {
  if (initialized_) throw Error(ErrorCode::InvalidArgument, "SLAM already initialized");
  std::vector<Keyframe> kfs{make_keyframe(frame0, Se3Pose()), make_keyframe(frame1, Se3Pose())};
  if (kfs[0].id == kfs[1].id) throw Error(ErrorCode::InvalidArgument, "initialization needs two frames");

  SfmOptions so;
  so.problem = problem_options();
  so.optimizer = config_.init_optimizer;
  so.optimizer.max_iters = config_.init_iters;
  so.schedule = config_.init_schedule;
  so.master_id = kfs[0].id;
  so.gauge_frame = kfs[0].id;
  so.min_overlap = config_.min_init_overlap;
  const std::vector<int> ids{kfs[0].id, kfs[1].id};

  SfmResult r;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    r = run_sfm(kfs, build_master_pairs(kfs[0].id, ids), so);
  } catch (const Error& e) {
    switch (e.code()) {
      case ErrorCode::DivergenceDetected:
      case ErrorCode::IndefiniteSystem:
      case ErrorCode::InsufficientOverlap:
        throw Error(ErrorCode::InitializationFailed, std::string("initialization failed: ") + e.what());
      default:
        throw;
    }
  }
  updates_.push_back({std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(),
                      r.report.iterations, 2});

  for (Keyframe& k : kfs) {
    k.pose = r.frame(k.id).pose;
    k.code = r.frame(k.id).code;
    map_.keyframe_poses[k.id] = k.pose;
    map_.frames.push_back({k.id == frame0.index ? frame0.timestamp : frame1.timestamp, k.id, k.id, Se3Pose()});
  }
  map_.keyframes = std::move(kfs);
  map_.max_window = map_.keyframes.size();
  gauge_keyframe_ = frame0.index;
  initialized_ = true;
  return map_;
}

double SlamSystem::median_depth(const Keyframe& kf) const {
  const int level = std::min(1, kf.decoder->num_levels() - 1);
  Eigen::VectorXd d = decode_depth(*kf.decoder, kf.code, level, params_);
  std::vector<double> v(d.data(), d.data() + d.size());
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2), v.end());
  return v[v.size() / 2];
}

Se3Pose SlamSystem::world_pose(const FrameRecord& r) const {
  return map_.keyframe_poses.at(r.keyframe_id) * r.keyframe_from_frame;
}

PairGraph SlamSystem::window_graph() const {
  PairGraph g;
  const auto& k = map_.keyframes;
  for (std::size_t i = 0; i + 1 < k.size(); ++i) g.pairs.push_back({k[i].id, k[i + 1].id});
  // The newest keyframe also sees every older keyframe in the window.
  for (std::size_t i = 0; i + 2 < k.size(); ++i) g.pairs.push_back({k.back().id, k[i].id});
  return g;
}

void SlamSystem::optimize_window(int iterations) {
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<ProblemFrame> pf;
  std::map<int, Se3Pose> poses;
  std::map<int, Code> codes;
  for (const Keyframe& k : map_.keyframes) {
    pf.push_back({k.id, k.image.get(), k.decoder.get(), k.id == gauge_keyframe_, false});
    poses[k.id] = k.pose;
    codes[k.id] = k.code;
  }
  std::vector<LinearPrior> priors;
  if (map_.prior) priors.push_back(*map_.prior);
  JointProblem problem(pf, window_graph(), problem_options(), priors);
  VariableState state = problem.make_state(poses, codes);
  OptimizerOptions oo = config_.optimizer;
  oo.max_iters = iterations;
  const OptimizationReport rep = optimize(problem, state, oo);
  for (Keyframe& k : map_.keyframes) {
    k.pose = state.poses.at(JointProblem::pose_var(k.id));
    k.code = state.vectors.at(JointProblem::code_var(k.id));
    map_.keyframe_poses[k.id] = k.pose;
  }
  updates_.push_back({std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(),
                      rep.iterations, map_.keyframes.size()});
}

void SlamSystem::marginalize_oldest() {
  const Keyframe& old = map_.keyframes.front();
  const int old_id = old.id;

  std::vector<ProblemFrame> pf;
  std::map<int, Se3Pose> poses;
  std::map<int, Code> codes;
  for (const Keyframe& k : map_.keyframes) {
    pf.push_back({k.id, k.image.get(), k.decoder.get(), k.id == gauge_keyframe_, false});
    poses[k.id] = k.pose;
    codes[k.id] = k.code;
  }
  PairGraph touching;
  for (const FramePair& p : window_graph().pairs) {
    if (p.a == old_id || p.b == old_id) touching.pairs.push_back(p);
  }
  std::vector<LinearPrior> priors;
  if (map_.prior) priors.push_back(*map_.prior);
  JointProblemOptions po = problem_options();
  po.code_prior_weight = 0.0;  // added below for the departing code only
  JointProblem problem(pf, touching, po, priors);
  const VariableState state = problem.make_state(poses, codes);
  NormalEquations ne = problem.linearize(state);

  const VariableEntry& ce = ne.layout.at(JointProblem::code_var(old_id));
  const double w = config_.code_prior_weight;
  ne.H.block(ce.offset, ce.offset, ce.size, ce.size).diagonal().array() += w;
  ne.g.segment(ce.offset, ce.size) += w * old.code;
  ne.cost += 0.5 * w * old.code.squaredNorm();

  std::vector<VarId> drop{JointProblem::code_var(old_id)};
  if (ne.layout.contains(JointProblem::pose_var(old_id))) drop.push_back(JointProblem::pose_var(old_id));
  LinearPrior prior = marginalize(ne, drop, state);

  MarginalizationEvent ev;
  ev.keyframe_id = old_id;
  ev.prior_dimension = prior.layout.dimension();
  map_.prior = std::move(prior);
  map_.keyframes.erase(map_.keyframes.begin());

  const Keyframe& newest = map_.keyframes.back();
  ev.newest_keyframe_id = newest.id;
  if (config_.reoptimize_after_marginalization) {
    const Se3Pose before = newest.pose;
    optimize_window(config_.map_opt_iters);
    const Se3Pose& after = map_.keyframes.back().pose;
    ev.pose_change = (after.translation() - before.translation()).norm();
    const double tn = before.translation().norm();
    ev.relative_change = tn > 0.0 ? ev.pose_change / tn : 0.0;
    ev.rotation_change = rotation_distance(after, before);
  }
  map_.marginalizations.push_back(ev);
}

FrameOutcome SlamSystem::process_frame(const SlamFrame& frame) {
  if (!initialized_) throw Error(ErrorCode::InvalidArgument, "SLAM not initialized");
  if (!frame.image) throw Error(ErrorCode::InvalidArgument, "frame without image");
  if (!map_.frames.empty() && !(frame.timestamp > map_.frames.back().timestamp)) {
    throw Error(ErrorCode::InvalidArgument, "frame timestamps must increase");
  }

  // Constant-velocity prediction from the last two frame poses.
  const std::size_t nf = map_.frames.size();
  const Se3Pose last = world_pose(map_.frames[nf - 1]);
  const Se3Pose prev = nf >= 2 ? world_pose(map_.frames[nf - 2]) : last;
  Se3Pose predicted = last * (prev.inverse() * last);
  predicted.normalize();

  const Keyframe& ref = map_.keyframes.back();
  TrackingState ts = track(*frame.image, ref, predicted, camera_, params_, config_.tracking);
  if (ts.convergence == TrackingStatus::Lost) {
    ts = track(*frame.image, ref, last, camera_, params_, config_.tracking);
  }
  last_tracking_ = ts;
  if (ts.convergence == TrackingStatus::Lost) {
    throw Error(ErrorCode::TrackingLost, "tracking lost at frame " + std::to_string(frame.index));
  }

  const Se3Pose kf_from_frame = ref.pose.inverse() * ts.current_pose_estimate;
  const double baseline = kf_from_frame.translation().norm();
  if (baseline <= config_.baseline_threshold * median_depth(ref)) {
    map_.frames.push_back({frame.timestamp, frame.index, ref.id, kf_from_frame});
    return FrameOutcome::TrackedOnly;
  }

  Keyframe kf = make_keyframe(frame, ts.current_pose_estimate);
  if (static_cast<int>(map_.keyframes.size()) >= config_.max_keyframes) marginalize_oldest();
  map_.keyframe_poses[kf.id] = kf.pose;
  map_.keyframes.push_back(std::move(kf));
  map_.frames.push_back({frame.timestamp, frame.index, frame.index, Se3Pose()});
  map_.max_window = std::max(map_.max_window, map_.keyframes.size());
  optimize_window(config_.map_opt_iters);
  return FrameOutcome::KeyframeAdded;
}

}  // namespace codesfm
