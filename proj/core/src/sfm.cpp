#include "codesfm/sfm.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <thread>

#include "codesfm/error.hpp"
#include "codesfm/io.hpp"

namespace codesfm {

void Keyframe::validate() const {
  if (!image || !decoder) throw Error(ErrorCode::InvalidArgument, "keyframe without image or decoder");
  if (code.size() != decoder->code_size()) {
    throw Error(ErrorCode::CodeSizeMismatch, "keyframe code size does not match its decoder");
  }
  for (int l = 0; l < kPyramidLevels; ++l) {
    const DecoderLevel& d = decoder->level(l);
    if (d.width != image->width(l) || d.height != image->height(l)) {
      throw Error(ErrorCode::DimensionMismatch, "keyframe image and decoder resolutions differ");
    }
  }
}

void PairGraph::validate(std::span<const int> frame_ids) const {
  const std::set<int> ids(frame_ids.begin(), frame_ids.end());
  for (const FramePair& p : pairs) {
    if (p.a == p.b) throw Error(ErrorCode::InvalidArgument, "pair of a frame with itself");
    if (!ids.count(p.a) || !ids.count(p.b)) {
      throw Error(ErrorCode::UnknownFrame, "pair references an unknown frame");
    }
    if (!p.use_photo && !p.use_geo) throw Error(ErrorCode::InvalidArgument, "pair without residuals");
  }
}

PairGraph build_master_pairs(int master_id, std::span<const int> frame_ids) {
  if (std::find(frame_ids.begin(), frame_ids.end(), master_id) == frame_ids.end()) {
    throw Error(ErrorCode::UnknownFrame, "master frame not among the frames");
  }
  PairGraph g;
  for (int id : frame_ids) {
    if (id != master_id) g.pairs.push_back({master_id, id});
  }
  return g;
}

PairGraph build_full_pairs(std::span<const int> frame_ids) {
  PairGraph g;
  for (std::size_t i = 0; i < frame_ids.size(); ++i) {
    for (std::size_t j = i + 1; j < frame_ids.size(); ++j) g.pairs.push_back({frame_ids[i], frame_ids[j]});
  }
  return g;
}

std::vector<double> level_weights(std::span<const int> levels) {
  std::vector<double> w;
  double total = 0.0;
  for (int l : levels) {
    w.push_back(std::pow(4.0, l));
    total += w.back();
  }
  for (double& x : w) x *= static_cast<double>(levels.size()) / total;
  return w;
}

JointProblem::JointProblem(std::vector<ProblemFrame> frames, PairGraph graph,
                           JointProblemOptions opts, std::vector<LinearPrior> priors)
    : frames_(std::move(frames)), graph_(std::move(graph)), opts_(std::move(opts)),
      priors_(std::move(priors)) {
  opts_.camera.validate();
  opts_.proximity.validate();
  opts_.residual.validate();
  std::vector<int> ids;
  for (const ProblemFrame& f : frames_) {
    if (f.image == nullptr || f.decoder == nullptr) {
      throw Error(ErrorCode::InvalidArgument, "problem frame without image or decoder");
    }
    ids.push_back(f.id);
  }
  graph_.validate(ids);
  set_levels(opts_.levels);

  for (const ProblemFrame& f : frames_) {
    if (!f.fix_pose) layout_.add(pose_var(f.id), VariableKind::Pose);
    if (!f.fix_code) layout_.add(code_var(f.id), VariableKind::Code, f.decoder->code_size());
  }
  if (opts_.estimate_affine) {
    for (std::size_t p = 0; p < graph_.pairs.size(); ++p) {
      if (!graph_.pairs[p].use_photo) continue;
      layout_.add(affine_var(p, 0), VariableKind::Affine);
      layout_.add(affine_var(p, 1), VariableKind::Affine);
    }
  }
  for (const LinearPrior& prior : priors_) {
    for (const VariableEntry& e : prior.layout.entries()) layout_.at(e.id);
  }
}

void JointProblem::set_levels(std::vector<int> levels) {
  if (levels.empty()) throw Error(ErrorCode::InvalidArgument, "no pyramid levels selected");
  for (int l : levels) {
    if (l < 0 || l >= kPyramidLevels) throw Error(ErrorCode::LevelOutOfRange, "pyramid level");
  }
  opts_.levels = std::move(levels);
}

const ProblemFrame& JointProblem::frame(int id) const {
  for (const ProblemFrame& f : frames_) {
    if (f.id == id) return f;
  }
  throw Error(ErrorCode::UnknownFrame, "frame " + std::to_string(id));
}

VariableState JointProblem::make_state(const std::map<int, Se3Pose>& poses,
                                       const std::map<int, Code>& codes) const {
  VariableState s;
  for (const ProblemFrame& f : frames_) {
    const auto p = poses.find(f.id);
    s.poses[pose_var(f.id)] = p == poses.end() ? Se3Pose() : p->second;
    const auto c = codes.find(f.id);
    s.vectors[code_var(f.id)] =
        c == codes.end() ? Code(Code::Zero(f.decoder->code_size())) : c->second;
    if (s.vectors[code_var(f.id)].size() != f.decoder->code_size()) {
      throw Error(ErrorCode::CodeSizeMismatch, "initial code size");
    }
  }
  if (opts_.estimate_affine) {
    for (std::size_t p = 0; p < graph_.pairs.size(); ++p) {
      for (int d = 0; d < 2; ++d) s.vectors[affine_var(p, d)] = Eigen::Vector2d(1.0, 0.0);
    }
  }
  return s;
}

std::map<std::pair<int, int>, DecodedLevel> JointProblem::decode_all(
    const VariableState& state, std::span<const int> levels) const {
  std::map<std::pair<int, int>, DecodedLevel> out;
  for (const ProblemFrame& f : frames_) {
    const Code& c = state.vectors.at(code_var(f.id));
    for (int l : levels) {
      out.emplace(std::make_pair(f.id, l), decode_level(*f.decoder, c, l, opts_.camera, opts_.proximity));
    }
  }
  return out;
}

std::vector<JointProblem::Task> JointProblem::tasks(std::span<const int> levels) const {
  std::vector<Task> t;
  for (std::size_t p = 0; p < graph_.pairs.size(); ++p) {
    for (int l : levels) {
      for (int k = 0; k < 4; ++k) {
        if (k < 2 && !graph_.pairs[p].use_photo) continue;
        if (k >= 2 && !graph_.pairs[p].use_geo) continue;
        t.push_back({p, l, k});
      }
    }
  }
  return t;
}

ResidualBlock JointProblem::evaluate_task(
    const Task& task, const VariableState& state,
    const std::map<std::pair<int, int>, DecodedLevel>& decoded, bool jacobians) const {
  ResidualBlock blk;
  evaluate_task(task, state, decoded, jacobians, blk);
  return blk;
}

void JointProblem::evaluate_task(const Task& task, const VariableState& state,
                                 const std::map<std::pair<int, int>, DecodedLevel>& decoded,
                                 bool jacobians, ResidualBlock& blk) const {
  const FramePair& pair = graph_.pairs[task.pair];
  const bool reversed = task.kind % 2 == 1;
  const ProblemFrame& fa = frame(reversed ? pair.b : pair.a);
  const ProblemFrame& fb = frame(reversed ? pair.a : pair.b);

  const Code& ca = state.vectors.at(code_var(fa.id));
  const Code& cb = state.vectors.at(code_var(fb.id));
  const FrameView va{fa.image, fa.decoder, &ca, state.poses.at(pose_var(fa.id))};
  const FrameView vb{fb.image, fb.decoder, &cb, state.poses.at(pose_var(fb.id))};
  const DecodedLevel& da = decoded.at({fa.id, task.level});
  const DecodedLevel& db = decoded.at({fb.id, task.level});

  ResidualOptions ro = opts_.residual;
  ro.compute_jacobians = jacobians;
  const bool photo = task.kind < 2;
  if (photo) {
    std::optional<VarId> affine;
    if (opts_.estimate_affine) {
      affine = affine_var(task.pair, task.kind);
      const Eigen::VectorXd& ab = state.vectors.at(*affine);
      ro.affine_gain = ab[0];
      ro.affine_bias = ab[1];
    }
    photometric_residual_into(blk, va, vb, task.level, opts_.camera, opts_.proximity, ro, &da, &db);
    blk.vars.affine = affine;
  } else {
    geometric_residual_into(blk, va, vb, task.level, opts_.camera, opts_.proximity, ro, &da, &db);
    if (!fb.fix_code) blk.vars.code_b = code_var(fb.id);
  }
  if (!fa.fix_pose) blk.vars.pose_a = pose_var(fa.id);
  if (!fb.fix_pose) blk.vars.pose_b = pose_var(fb.id);
  if (!fa.fix_code) blk.vars.code_a = code_var(fa.id);
  if (!jacobians) blk.vars = {};
}

NormalEquations JointProblem::accumulate(const VariableState& state, bool jacobians) {
  const std::vector<double> lw = level_weights(opts_.levels);
  std::map<int, double> weight_of;
  for (std::size_t i = 0; i < opts_.levels.size(); ++i) weight_of[opts_.levels[i]] = lw[i];

  const auto decoded = decode_all(state, opts_.levels);
  const std::vector<Task> all = tasks(opts_.levels);

  int threads = opts_.num_threads > 0 ? opts_.num_threads
                                     : static_cast<int>(std::thread::hardware_concurrency());
  threads = std::clamp(threads, 1, std::max<int>(1, static_cast<int>(all.size())));

  // Static round-robin assignment and a fixed merge order keep results bit-identical
  // for a given thread count.
  std::vector<NormalEquationsBuilder> builders(static_cast<std::size_t>(threads),
                                               NormalEquationsBuilder(layout_, state));
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(threads));
  auto work = [&](int t) {
    try {
      ResidualBlock blk;
      for (std::size_t i = static_cast<std::size_t>(t); i < all.size();
           i += static_cast<std::size_t>(threads)) {
        evaluate_task(all[i], state, decoded, jacobians, blk);
        blk.scale_weights(weight_of.at(all[i].level));
        builders[static_cast<std::size_t>(t)].add(blk);
      }
    } catch (...) {
      errors[static_cast<std::size_t>(t)] = std::current_exception();
    }
  };
  if (threads == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(work, t);
    for (std::thread& th : pool) th.join();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  NormalEquationsBuilder& total = builders.front();
  for (std::size_t t = 1; t < builders.size(); ++t) total.merge(builders[t]);
  for (const LinearPrior& p : priors_) total.add_prior(p);
  total.add_code_prior(opts_.code_prior_weight);
  return total.finish();
}

NormalEquations JointProblem::linearize(const VariableState& state) {
  return accumulate(state, true);
}

double JointProblem::cost(const VariableState& state) { return accumulate(state, false).cost; }

std::vector<ResidualBlock> JointProblem::evaluate_blocks(const VariableState& state, int level,
                                                         bool jacobians) const {
  const std::vector<int> lv{level};
  const auto decoded = decode_all(state, lv);
  std::vector<ResidualBlock> out;
  for (const Task& t : tasks(lv)) out.push_back(evaluate_task(t, state, decoded, jacobians));
  return out;
}

double JointProblem::valid_fraction(const VariableState& state, int frame_id, int level) const {
  const std::vector<int> lv{level};
  const auto decoded = decode_all(state, lv);
  std::vector<std::uint8_t> any;
  for (const Task& t : tasks(lv)) {
    if (t.kind >= 2) continue;
    const FramePair& p = graph_.pairs[t.pair];
    const int ref = t.kind == 0 ? p.a : p.b;
    if (ref != frame_id) continue;
    const ResidualBlock blk = evaluate_task(t, state, decoded, false);
    if (any.empty()) any.assign(blk.valid.size(), 0);
    for (std::size_t i = 0; i < any.size(); ++i) any[i] |= blk.valid[i];
  }
  if (any.empty()) return 0.0;
  const auto n = std::count(any.begin(), any.end(), std::uint8_t{1});
  return static_cast<double>(n) / static_cast<double>(any.size());
}

double proximity_rmse(const Eigen::VectorXd& estimate, const ProximityGroundTruth& gt) {
  if (estimate.size() != gt.proximity.size() ||
      gt.valid.size() != static_cast<std::size_t>(gt.proximity.size())) {
    throw Error(ErrorCode::DimensionMismatch, "ground truth and estimate sizes differ");
  }
  double sum = 0.0;
  std::size_t n = 0;
  for (Eigen::Index i = 0; i < estimate.size(); ++i) {
    if (!gt.valid[static_cast<std::size_t>(i)]) continue;
    const double d = estimate[i] - gt.proximity[i];
    sum += d * d;
    ++n;
  }
  if (n == 0) throw Error(ErrorCode::InvalidArgument, "ground truth has no valid pixels");
  return std::sqrt(sum / static_cast<double>(n));
}

const SfmFrameResult& SfmResult::frame(int id) const {
  for (const SfmFrameResult& f : frames) {
    if (f.id == id) return f;
  }
  throw Error(ErrorCode::UnknownFrame, "frame " + std::to_string(id));
}

SfmResult run_sfm(const std::vector<Keyframe>& frames, const PairGraph& graph,
                  const SfmOptions& opts, const std::map<int, ProximityGroundTruth>& ground_truth) {
  if (frames.size() < 2) throw Error(ErrorCode::InvalidArgument, "need at least two frames");
  if (opts.schedule.empty()) throw Error(ErrorCode::InvalidArgument, "empty schedule");
  std::vector<int> ids;
  for (const Keyframe& k : frames) {
    k.validate();
    ids.push_back(k.id);
  }
  if (std::set<int>(ids.begin(), ids.end()).size() != ids.size()) {
    throw Error(ErrorCode::InvalidArgument, "duplicate frame ids");
  }
  graph.validate(ids);
  const int gauge = opts.gauge_frame.value_or(opts.master_id);
  if (std::find(ids.begin(), ids.end(), gauge) == ids.end() ||
      std::find(ids.begin(), ids.end(), opts.master_id) == ids.end()) {
    throw Error(ErrorCode::UnknownFrame, "gauge or master frame not among the frames");
  }

  std::vector<ProblemFrame> pf;
  std::map<int, Se3Pose> poses;
  std::map<int, Code> codes;
  for (const Keyframe& k : frames) {
    pf.push_back({k.id, k.image.get(), k.decoder.get(), k.id == gauge, false});
    poses[k.id] = k.pose;
    codes[k.id] = k.code;
  }
  JointProblemOptions po = opts.problem;
  po.levels = opts.schedule.front().levels;
  JointProblem problem(pf, graph, po);
  VariableState state = problem.make_state(poses, codes);

  SfmResult result;
  result.camera = opts.problem.camera;
  result.proximity_params = opts.problem.proximity;

  const Keyframe* master = nullptr;
  for (const Keyframe& k : frames) {
    if (k.id == opts.master_id) master = &k;
  }
  const auto gt = ground_truth.find(opts.master_id);
  if (gt != ground_truth.end()) {
    result.master_zero_code_rmse = proximity_rmse(
        decode_proximity(*master->decoder, Code::Zero(master->decoder->code_size()), 0).values,
        gt->second);
  }

  for (const SfmStage& stage : opts.schedule) {
    problem.set_levels(stage.levels);
    OptimizerOptions oo = opts.optimizer;
    oo.max_iters = std::max(1, static_cast<int>(std::lround(stage.iteration_fraction * opts.optimizer.max_iters)));
    const OptimizationReport r = optimize(problem, state, oo);
    result.stage_reports.push_back(r);
    result.report.append(r);
  }

  result.master_overlap = problem.valid_fraction(state, opts.master_id, 0);
  if (result.master_overlap < opts.min_overlap) {
    throw Error(ErrorCode::InsufficientOverlap,
                "only " + std::to_string(result.master_overlap * 100.0) +
                    "% of master pixels are visible in any partner");
  }

  for (const Keyframe& k : frames) {
    SfmFrameResult f;
    f.id = k.id;
    f.pose = state.poses.at(JointProblem::pose_var(k.id));
    f.code = state.vectors.at(JointProblem::code_var(k.id));
    f.proximity = decode_proximity(*k.decoder, f.code, 0);
    f.intensity = k.image->level(0).intensity;
    result.frames.push_back(std::move(f));
  }
  if (opts.problem.estimate_affine) {
    for (std::size_t p = 0; p < graph.pairs.size(); ++p) {
      for (int d = 0; d < 2; ++d) {
        const auto it = state.vectors.find(JointProblem::affine_var(p, d));
        if (it != state.vectors.end()) result.affine[2 * p + static_cast<std::size_t>(d)] = it->second;
      }
    }
  }
  if (gt != ground_truth.end()) {
    result.master_rmse = proximity_rmse(result.frame(opts.master_id).proximity.values, gt->second);
  }
  return result;
}

void export_reconstruction(const SfmResult& result, const std::filesystem::path& path,
                           ExportFormat format) {
  const CameraIntrinsics& cam = result.camera;
  if (format == ExportFormat::DepthPng16) {
    std::filesystem::create_directories(path);
    for (const SfmFrameResult& f : result.frames) {
      const Eigen::Index n = f.proximity.values.size();
      std::vector<std::uint16_t> mm(static_cast<std::size_t>(n), 0);
      for (Eigen::Index i = 0; i < n; ++i) {
        if (f.proximity.clamped[static_cast<std::size_t>(i)]) continue;
        const double d = proximity_to_depth(f.proximity.values[i], result.proximity_params);
        mm[static_cast<std::size_t>(i)] =
            static_cast<std::uint16_t>(std::clamp(std::lround(d * 1000.0), 0L, 65535L));
      }
      write_png16(path / ("depth_" + std::to_string(f.id) + ".png"), f.proximity.width,
                  f.proximity.height, mm);
    }
    return;
  }

  struct Point {
    Vec3 x;
    int grey;
  };
  std::vector<Point> pts;
  for (const SfmFrameResult& f : result.frames) {
    for (int y = 0; y < f.proximity.height; ++y) {
      for (int x = 0; x < f.proximity.width; ++x) {
        const std::size_t i = static_cast<std::size_t>(y) * f.proximity.width + x;
        if (f.proximity.clamped[i]) continue;
        const double d = proximity_to_depth(f.proximity.values[static_cast<Eigen::Index>(i)],
                                            result.proximity_params);
        const Vec3 p = f.pose * unproject(Vec2(x, y), d, cam);
        int g = 128;
        if (f.intensity.width() == f.proximity.width && f.intensity.height() == f.proximity.height) {
          g = static_cast<int>(std::clamp(std::lround(f.intensity(x, y) * 255.0), 0L, 255L));
        }
        pts.push_back({p, g});
      }
    }
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out << "ply\nformat ascii 1.0\nelement vertex " << pts.size()
      << "\nproperty float x\nproperty float y\nproperty float z\n"
         "property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n";
  for (const Point& p : pts) {
    out << static_cast<float>(p.x.x()) << ' ' << static_cast<float>(p.x.y()) << ' '
        << static_cast<float>(p.x.z()) << ' ' << p.grey << ' ' << p.grey << ' ' << p.grey << '\n';
  }
  if (!out) throw Error(ErrorCode::IoError, "failed writing " + path.string());
}

}  // namespace codesfm
