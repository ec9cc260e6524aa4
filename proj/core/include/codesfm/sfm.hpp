#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "codesfm/decoder.hpp"
#include "codesfm/geometry.hpp"
#include "codesfm/image.hpp"
#include "codesfm/solver.hpp"
#include "codesfm/warp.hpp"

namespace codesfm {

/// A frame of the map: image, decoder artifact and the estimated pose (world-from-frame) and code.
struct Keyframe {
  int id = 0;
  std::shared_ptr<const ImagePyramid> image;
  std::shared_ptr<const DecoderModel> decoder;
  Se3Pose pose;
  Code code;

  /// Checks that decoder and pyramid resolutions agree and the code size matches.
  void validate() const;
};

struct FramePair {
  int a = 0;
  int b = 0;
  bool use_photo = true;
  bool use_geo = true;
};

struct PairGraph {
  std::vector<FramePair> pairs;

  /// Throws InvalidArgument on self-pairs, UnknownFrame on ids not in `frame_ids`.
  void validate(std::span<const int> frame_ids) const;
};

/// One pair (master, other) per non-master frame. Throws UnknownFrame.
PairGraph build_master_pairs(int master_id, std::span<const int> frame_ids);

/// Every unordered pair of frames.
PairGraph build_full_pairs(std::span<const int> frame_ids);

/// Per-level weights 4^L normalized over the active levels.
std::vector<double> level_weights(std::span<const int> levels);

struct JointProblemOptions {
  CameraIntrinsics camera;
  ProximityParams proximity;
  ResidualOptions residual;
  double code_prior_weight = 1e-2;
  bool estimate_affine = false;
  std::vector<int> levels = {0, 1, 2, 3};
  /// 0 picks the hardware concurrency.
  int num_threads = 0;
};

/// Frame taking part in a joint problem. Fixed poses/codes are held constant.
struct ProblemFrame {
  int id = 0;
  const ImagePyramid* image = nullptr;
  const DecoderModel* decoder = nullptr;
  bool fix_pose = false;
  bool fix_code = false;
};

/// Photometric and geometric residuals of a pair graph over poses, codes and (optionally)
/// per-direction affine illumination terms, plus linear priors.
class JointProblem : public LeastSquaresProblem {
 public:
  JointProblem(std::vector<ProblemFrame> frames, PairGraph graph, JointProblemOptions opts,
               std::vector<LinearPrior> priors = {});

  static VarId pose_var(int frame_id) { return 2 * frame_id; }
  static VarId code_var(int frame_id) { return 2 * frame_id + 1; }
  /// Affine term of the photometric block `direction` (0: a->b, 1: b->a) of pair `pair_index`.
  static VarId affine_var(std::size_t pair_index, int direction) {
    return -1 - static_cast<VarId>(2 * pair_index) - direction;
  }

  const VariableLayout& layout() const override { return layout_; }
  NormalEquations linearize(const VariableState& state) override;
  double cost(const VariableState& state) override;

  void set_levels(std::vector<int> levels);
  const std::vector<int>& levels() const { return opts_.levels; }

  /// State holding the given poses and codes plus unit-gain affine terms.
  VariableState make_state(const std::map<int, Se3Pose>& poses,
                           const std::map<int, Code>& codes) const;

  /// Fraction of frame `frame_id`'s level-`level` pixels that warp validly into at least one
  /// partner through the photometric residual.
  double valid_fraction(const VariableState& state, int frame_id, int level) const;

  /// All residual blocks at `level` (mainly for diagnostics and tests).
  std::vector<ResidualBlock> evaluate_blocks(const VariableState& state, int level,
                                             bool jacobians) const;

 private:
  struct Task {
    std::size_t pair;
    int level;
    int kind;  // 0, 1: photometric a->b / b->a; 2, 3: geometric a->b / b->a
  };

  ResidualBlock evaluate_task(const Task& task, const VariableState& state,
                              const std::map<std::pair<int, int>, DecodedLevel>& decoded,
                              bool jacobians) const;
  void evaluate_task(const Task& task, const VariableState& state,
                     const std::map<std::pair<int, int>, DecodedLevel>& decoded, bool jacobians,
                     ResidualBlock& out) const;
  std::map<std::pair<int, int>, DecodedLevel> decode_all(const VariableState& state,
                                                         std::span<const int> levels) const;
  std::vector<Task> tasks(std::span<const int> levels) const;
  NormalEquations accumulate(const VariableState& state, bool jacobians);
  const ProblemFrame& frame(int id) const;

  std::vector<ProblemFrame> frames_;
  PairGraph graph_;
  JointProblemOptions opts_;
  std::vector<LinearPrior> priors_;
  VariableLayout layout_;
};

/// Ground truth of a frame for evaluation: proximity map with validity mask.
struct ProximityGroundTruth {
  int width = 0;
  int height = 0;
  Eigen::VectorXd proximity;
  std::vector<std::uint8_t> valid;
};

/// RMS proximity error over pixels valid in the ground truth.
double proximity_rmse(const Eigen::VectorXd& estimate, const ProximityGroundTruth& gt);

struct SfmStage {
  std::vector<int> levels;
  double iteration_fraction = 1.0;
};

struct SfmOptions {
  JointProblemOptions problem;
  OptimizerOptions optimizer;
  /// Coarse-to-fine schedule; iteration budgets are fractions of optimizer.max_iters.
  std::vector<SfmStage> schedule = {{{3, 2}, 1.0 / 3.0}, {{3, 2, 1, 0}, 2.0 / 3.0}};
  /// Frame whose pose is held at its initial value (gauge). Defaults to the master frame.
  std::optional<int> gauge_frame;
  int master_id = 0;
  double min_overlap = 0.2;
};

struct SfmFrameResult {
  int id = 0;
  Se3Pose pose;
  Code code;
  ProximityMap proximity;  // level 0
  Image intensity;         // level 0, for coloured exports
};

struct SfmResult {
  CameraIntrinsics camera;
  ProximityParams proximity_params;
  std::vector<SfmFrameResult> frames;
  OptimizationReport report;
  std::vector<OptimizationReport> stage_reports;
  std::map<std::size_t, Eigen::Vector2d> affine;  // key: 2 * pair_index + direction
  double master_overlap = 0.0;
  std::optional<double> master_rmse;
  std::optional<double> master_zero_code_rmse;

  const SfmFrameResult& frame(int id) const;
};

/// Joint optimization of poses and codes over `graph`. Frames keep their given initial pose and
/// code (identity / zero for a cold start). Throws InsufficientOverlap if fewer than
/// `min_overlap` of the master pixels warp validly into any partner at convergence.
SfmResult run_sfm(const std::vector<Keyframe>& frames, const PairGraph& graph,
                  const SfmOptions& opts,
                  const std::map<int, ProximityGroundTruth>& ground_truth = {});

enum class ExportFormat { PlyPointCloud, DepthPng16 };

/// PLY: one point per unclamped pixel of every frame, in world coordinates.
/// DepthPng16: `path` is a directory receiving depth_<id>.png in millimetres.
void export_reconstruction(const SfmResult& result, const std::filesystem::path& path,
                           ExportFormat format);

}  // namespace codesfm
