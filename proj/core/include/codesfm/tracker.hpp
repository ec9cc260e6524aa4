#pragma once

#include <vector>

#include "codesfm/geometry.hpp"
#include "codesfm/image.hpp"
#include "codesfm/sfm.hpp"
#include "codesfm/solver.hpp"
#include "codesfm/warp.hpp"

namespace codesfm {

enum class TrackingStatus { Converged, MaxIters, Lost };
const char* to_string(TrackingStatus s);

struct TrackerOptions {
  /// Processed in order; coarsest first.
  std::vector<int> levels = {3, 2, 1};
  /// Appends level 0 to the schedule.
  bool full_resolution = false;
  int iterations_per_level = 20;
  bool estimate_affine = false;
  double lost_inlier_fraction = 0.3;
  /// Lost when the mean per-pixel cost at the finest level exceeds this.
  double max_mean_cost = 0.05;
  ResidualOptions residual = [] {
    ResidualOptions r;
    r.use_occlusion = false;
    return r;
  }();
  OptimizerOptions optimizer;

  std::vector<int> schedule() const;
};

struct TrackingState {
  int reference_keyframe_id = 0;
  Se3Pose current_pose_estimate;  // world-from-frame
  TrackingStatus convergence = TrackingStatus::MaxIters;
  double inlier_fraction = 0.0;
  double initial_cost = 0.0;  // at the finest tracked level
  double final_cost = 0.0;
  double gain = 1.0;
  double bias = 0.0;
  int iterations = 0;
};

/// Photometric alignment of `frame` against `ref` over the live pose (and optional affine
/// terms). The keyframe is left untouched.
TrackingState track(const ImagePyramid& frame, const Keyframe& ref, const Se3Pose& init,
                    const CameraIntrinsics& camera, const ProximityParams& params,
                    const TrackerOptions& opts = {});

}  // namespace codesfm
