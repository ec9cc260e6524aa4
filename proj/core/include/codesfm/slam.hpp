#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <vector>

#include "codesfm/io.hpp"
#include "codesfm/sfm.hpp"
#include "codesfm/solver.hpp"
#include "codesfm/tracker.hpp"

namespace codesfm {

struct SlamFrame {
  int index = 0;
  double timestamp = 0.0;
  std::shared_ptr<const ImagePyramid> image;
};

/// Supplies the decoder artifact of a frame when it is promoted to a keyframe.
using DecoderProvider = std::function<std::shared_ptr<const DecoderModel>(const SlamFrame&)>;

/// Decoders looked up as `<directory>/<stem>.csdm`, the stem taken from `image_paths[index]`.
DecoderProvider directory_decoder_provider(std::filesystem::path directory,
                                           std::vector<std::filesystem::path> image_paths);

struct SlamConfig {
  int max_keyframes = 4;
  /// New keyframe once the tracked translation exceeds this fraction of the median depth.
  double baseline_threshold = 0.05;
  int map_opt_iters = 10;
  int init_iters = 50;
  std::vector<int> mapping_levels = {3, 2, 1, 0};
  std::vector<SfmStage> init_schedule = {{{3, 2}, 1.0 / 3.0}, {{3, 2, 1, 0}, 2.0 / 3.0}};
  double code_prior_weight = 1e-2;
  ResidualOptions residual;
  TrackerOptions tracking;
  /// Window updates stop once an accepted step gains less than 1e-4 of the cost.
  OptimizerOptions optimizer = [] {
    OptimizerOptions o;
    o.cost_tol = 1e-4;
    return o;
  }();
  /// Two-frame initialization; max_iters comes from init_iters.
  OptimizerOptions init_optimizer;
  /// Re-solves the window right after a marginalization to record its effect on the newest pose.
  bool reoptimize_after_marginalization = true;
  double min_init_overlap = 0.3;
  int num_threads = 0;

  /// Throws InvalidArgument.
  void validate() const;
};

/// Reads the keys of SlamConfig that are present in a JSON file.
SlamConfig load_slam_config(const std::filesystem::path& path);

struct MarginalizationEvent {
  int keyframe_id = 0;     // keyframe that left the window
  int newest_keyframe_id = 0;
  double pose_change = 0.0;        // translation change of the newest keyframe, metres
  double relative_change = 0.0;    // pose_change / |t| of the newest keyframe
  double rotation_change = 0.0;    // radians
  int prior_dimension = 0;
};

struct FrameRecord {
  double timestamp = 0.0;
  int frame_index = 0;
  int keyframe_id = 0;       // reference keyframe
  Se3Pose keyframe_from_frame;
};

struct SlamMap {
  std::vector<Keyframe> keyframes;  // active window, oldest first
  std::optional<LinearPrior> prior;
  std::vector<FrameRecord> frames;  // every processed frame
  std::map<int, Se3Pose> keyframe_poses;  // latest estimate of every keyframe ever created
  std::vector<MarginalizationEvent> marginalizations;
  std::size_t max_window = 0;  // largest window size observed

  /// World-from-frame pose of every processed frame, chronological.
  std::vector<TrajectoryEntry> trajectory() const;
};

enum class FrameOutcome { TrackedOnly, KeyframeAdded };

struct MapUpdateStats {
  double seconds = 0.0;
  int iterations = 0;
  std::size_t window = 0;
};

class SlamSystem {
 public:
  SlamSystem(SlamConfig config, CameraIntrinsics camera, ProximityParams params,
             DecoderProvider decoders);

  /// Two-frame joint optimization with frame0 fixed at identity. Throws InitializationFailed.
  const SlamMap& initialize(const SlamFrame& frame0, const SlamFrame& frame1);

  /// Tracks against the newest keyframe and promotes the frame when the baseline is reached.
  /// Throws TrackingLost.
  FrameOutcome process_frame(const SlamFrame& frame);

  const SlamMap& map() const { return map_; }
  const TrackingState& last_tracking() const { return last_tracking_; }
  const std::vector<MapUpdateStats>& map_updates() const { return updates_; }
  bool initialized() const { return initialized_; }

 private:
  Keyframe make_keyframe(const SlamFrame& frame, const Se3Pose& pose) const;
  JointProblemOptions problem_options() const;
  PairGraph window_graph() const;
  void optimize_window(int iterations);
  void marginalize_oldest();
  double median_depth(const Keyframe& kf) const;
  Se3Pose world_pose(const FrameRecord& r) const;

  SlamConfig config_;
  CameraIntrinsics camera_;
  ProximityParams params_;
  DecoderProvider decoders_;
  SlamMap map_;
  TrackingState last_tracking_;
  std::vector<MapUpdateStats> updates_;
  int gauge_keyframe_ = 0;
  bool initialized_ = false;
};

/// TUM text file of the map's trajectory.
void export_trajectory(const SlamMap& map, const std::filesystem::path& path);

}  // namespace codesfm
