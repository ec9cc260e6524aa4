#include "codesfm/tracker.hpp"

#include <map>

#include "codesfm/error.hpp"

namespace codesfm {

const char* to_string(TrackingStatus s) {
  switch (s) {
    case TrackingStatus::Converged: return "Converged";
    case TrackingStatus::MaxIters: return "MaxIters";
    case TrackingStatus::Lost: return "Lost";
  }
  return "?";
}

std::vector<int> TrackerOptions::schedule() const {
  std::vector<int> s = levels;
  if (full_resolution && (s.empty() || s.back() != 0)) s.push_back(0);
  return s;
}

namespace {

constexpr VarId kPose = 0;
constexpr VarId kAffine = 1;

class TrackingProblem : public LeastSquaresProblem {
 public:
  TrackingProblem(const ImagePyramid& frame, const Keyframe& ref, const CameraIntrinsics& camera,
                  const ProximityParams& params, const TrackerOptions& opts)
      : frame_(frame), ref_(ref), camera_(camera), params_(params), opts_(opts) {
    layout_.add(kPose, VariableKind::Pose);
    if (opts_.estimate_affine) layout_.add(kAffine, VariableKind::Affine);
  }

  void set_level(int level) {
    level_ = level;
    if (!decoded_.count(level)) {
      decoded_.emplace(level, decode_level(*ref_.decoder, ref_.code, level, camera_, params_));
    }
  }

  const VariableLayout& layout() const override { return layout_; }

  ResidualBlock evaluate(const VariableState& state, bool jacobians) const {
    ResidualOptions ro = opts_.residual;
    ro.use_occlusion = false;
    ro.compute_jacobians = jacobians;
    if (opts_.estimate_affine) {
      const Eigen::VectorXd& ab = state.vectors.at(kAffine);
      ro.affine_gain = ab[0];
      ro.affine_bias = ab[1];
    }
    const FrameView ref{ref_.image.get(), ref_.decoder.get(), &ref_.code, ref_.pose};
    const FrameView live{&frame_, nullptr, nullptr, state.poses.at(kPose)};
    ResidualBlock blk =
        photometric_residual(ref, live, level_, camera_, params_, ro, &decoded_.at(level_));
    if (jacobians) {
      blk.vars.pose_b = kPose;
      if (opts_.estimate_affine) blk.vars.affine = kAffine;
    }
    return blk;
  }

  NormalEquations linearize(const VariableState& state) override {
    NormalEquationsBuilder b(layout_, state);
    b.add(evaluate(state, true));
    return b.finish();
  }

  double cost(const VariableState& state) override { return evaluate(state, false).cost(); }

 private:
  const ImagePyramid& frame_;
  const Keyframe& ref_;
  CameraIntrinsics camera_;
  ProximityParams params_;
  TrackerOptions opts_;
  VariableLayout layout_;
  int level_ = 0;
  std::map<int, DecodedLevel> decoded_;
};

}  // namespace

TrackingState track(const ImagePyramid& frame, const Keyframe& ref, const Se3Pose& init,
                    const CameraIntrinsics& camera, const ProximityParams& params,
                    const TrackerOptions& opts) {
  ref.validate();
  const std::vector<int> schedule = opts.schedule();
  if (schedule.empty()) throw Error(ErrorCode::InvalidArgument, "empty tracking schedule");
  for (int l : schedule) {
    if (l < 0 || l >= kPyramidLevels) throw Error(ErrorCode::LevelOutOfRange, "tracking level");
    if (frame.width(l) != ref.image->width(l) || frame.height(l) != ref.image->height(l)) {
      throw Error(ErrorCode::DimensionMismatch, "live frame and keyframe resolutions differ");
    }
  }

  TrackingProblem problem(frame, ref, camera, params, opts);
  VariableState init_state;
  init_state.poses[kPose] = init;
  if (opts.estimate_affine) init_state.vectors[kAffine] = Eigen::Vector2d(1.0, 0.0);
  VariableState state = init_state;

  TrackingState out;
  out.reference_keyframe_id = ref.id;
  Termination last = Termination::MaxIterations;
  for (int l : schedule) {
    problem.set_level(l);
    OptimizerOptions oo = opts.optimizer;
    oo.max_iters = opts.iterations_per_level;
    try {
      const OptimizationReport r = optimize(problem, state, oo);
      out.iterations += r.iterations;
      last = r.termination;
    } catch (const Error& e) {
      if (e.code() != ErrorCode::DivergenceDetected && e.code() != ErrorCode::IndefiniteSystem) throw;
      out.current_pose_estimate = init;
      out.convergence = TrackingStatus::Lost;
      return out;
    }
  }

  // Coarser stages optimize different objectives; never hand back a pose that is worse than
  // the initial guess on the finest tracked level.
  out.initial_cost = problem.cost(init_state);
  out.final_cost = problem.cost(state);
  if (out.final_cost > out.initial_cost) {
    state = init_state;
    out.final_cost = out.initial_cost;
  }

  const ResidualBlock blk = problem.evaluate(state, false);
  const std::size_t nv = blk.num_valid();
  out.inlier_fraction = blk.size() > 0 ? static_cast<double>(nv) / static_cast<double>(blk.size()) : 0.0;
  out.current_pose_estimate = state.poses.at(kPose);
  if (opts.estimate_affine) {
    out.gain = state.vectors.at(kAffine)[0];
    out.bias = state.vectors.at(kAffine)[1];
  }
  const double mean_cost = nv > 0 ? out.final_cost / static_cast<double>(nv) : 0.0;
  if (out.inlier_fraction < opts.lost_inlier_fraction || mean_cost > opts.max_mean_cost) {
    out.convergence = TrackingStatus::Lost;
  } else {
    out.convergence = last == Termination::MaxIterations ? TrackingStatus::MaxIters
                                                         : TrackingStatus::Converged;
  }
  return out;
}

}  // namespace codesfm
