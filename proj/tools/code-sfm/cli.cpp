#include "cli.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "codesfm/error.hpp"
#include "codesfm/io.hpp"
#include "codesfm/jacobian_check.hpp"
#include "codesfm/sfm.hpp"
#include "codesfm/slam.hpp"
#include "codesfm/tracker.hpp"

namespace codesfm {
namespace {
namespace fs = std::filesystem;
using nlohmann::json;

enum Exit { kOk = 0, kUsage = 1, kData = 2, kSolver = 3 };

int exit_code_for(ErrorCode c) {
  switch (c) {
    case ErrorCode::IndefiniteSystem:
    case ErrorCode::SingularBlock:
    case ErrorCode::DivergenceDetected:
    case ErrorCode::InsufficientOverlap:
    case ErrorCode::InitializationFailed:
    case ErrorCode::TrackingLost:
      return kSolver;
    default:
      return kData;
  }
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// Frames from a manifest (file, or directory holding manifest.json) or from an image directory.
struct Dataset {
  SequenceManifest manifest;
  Calibration calib;
};

Dataset load_dataset(const fs::path& frames, const std::optional<fs::path>& decoders,
                     const std::optional<fs::path>& calib) {
  Dataset d;
  fs::path manifest_path;
  if (fs::is_regular_file(frames) && frames.extension() == ".json") {
    manifest_path = frames;
  } else if (fs::is_regular_file(frames / "manifest.json")) {
    manifest_path = frames / "manifest.json";
  }
  if (!manifest_path.empty()) {
    d.manifest = load_manifest(manifest_path);
    if (calib) d.manifest.calibration = *calib;
    if (decoders) {
      for (ManifestFrame& f : d.manifest.frames) {
        const fs::path p = *decoders / (f.image.stem().string() + ".csdm");
        if (fs::exists(p)) f.decoder = p;
      }
    }
    validate_manifest(d.manifest);
  } else {
    if (!calib) throw Error(ErrorCode::InvalidArgument, "--calib is required without a manifest");
    d.manifest = manifest_from_directory(frames, decoders, *calib);
  }
  d.calib = load_calibration(d.manifest.calibration);
  return d;
}

Keyframe load_keyframe(const ManifestFrame& f, int id) {
  if (!f.decoder) throw Error(ErrorCode::IoError, "no decoder for " + f.image.string());
  Keyframe k;
  k.id = id;
  k.image = std::make_shared<const ImagePyramid>(load_image_pyramid(f.image));
  k.decoder = std::make_shared<const DecoderModel>(load_decoder(*f.decoder));
  k.code = Code::Zero(k.decoder->code_size());
  k.validate();
  return k;
}

void print_jacobian_report(const JacobianCheckReport& r) {
  double worst_p95 = 0.0;
  for (const JacobianGroupStats& g : r.groups) {
    std::printf("%-12s %-20s checked %7zu  pass %6.2f%%  p95 rel err %.3e  max rel err %.3e\n",
                g.residual.c_str(), g.variable.c_str(), g.checked, 100.0 * g.pass_fraction(),
                g.p95_rel, g.max_rel);
    worst_p95 = std::max(worst_p95, g.p95_rel);
  }
  std::printf("max rel err (95th percentile over groups) %.3e  runtime %.2f s\n", worst_p95, r.seconds);
}

int run_sfm_cmd(const fs::path& frames, const std::optional<fs::path>& decoders,
                const std::optional<fs::path>& calib, int master, const fs::path& out, bool ply,
                bool depth_png, bool full_graph, bool affine, int iters, int threads) {
  const auto t0 = std::chrono::steady_clock::now();
  const Dataset d = load_dataset(frames, decoders, calib);
  std::vector<Keyframe> kfs;
  std::vector<int> ids;
  std::map<int, ProximityGroundTruth> gt;
  for (std::size_t i = 0; i < d.manifest.frames.size(); ++i) {
    const int id = static_cast<int>(i);
    kfs.push_back(load_keyframe(d.manifest.frames[i], id));
    ids.push_back(id);
    if (d.manifest.frames[i].depth) gt[id] = load_depth_gt(*d.manifest.frames[i].depth, d.calib.proximity);
  }
  if (master < 0 || master >= static_cast<int>(kfs.size())) {
    throw Error(ErrorCode::UnknownFrame, "master index out of range");
  }
  SfmOptions so;
  so.problem.camera = d.calib.camera;
  so.problem.proximity = d.calib.proximity;
  so.problem.estimate_affine = affine;
  so.problem.num_threads = threads;
  so.optimizer.max_iters = iters;
  so.master_id = master;
  if (full_graph && kfs.size() > 5) {
    throw Error(ErrorCode::InvalidArgument, "the full pair graph is limited to 5 frames");
  }
  const PairGraph graph = full_graph ? build_full_pairs(ids) : build_master_pairs(master, ids);
  const SfmResult r = run_sfm(kfs, graph, so, gt);

  fs::create_directories(out);
  std::vector<PoseRecord> poses;
  std::map<int, Code> codes;
  for (const SfmFrameResult& f : r.frames) {
    poses.push_back({f.id, f.pose});
    codes[f.id] = f.code;
  }
  save_poses(poses, out / "poses.json");
  save_codes(codes, out / "codes.bin");
  json rep{{"frames", kfs.size()},
           {"master", master},
           {"optimization", r.report},
           {"master_overlap", r.master_overlap},
           {"runtime_s", seconds_since(t0)}};
  rep["stages"] = json::array();
  for (const OptimizationReport& s : r.stage_reports) rep["stages"].push_back(s);
  if (r.master_rmse) rep["master_proximity_rmse"] = *r.master_rmse;
  if (r.master_zero_code_rmse) rep["master_zero_code_rmse"] = *r.master_zero_code_rmse;
  std::ofstream(out / "report.json") << rep.dump(2) << '\n';
  if (ply) export_reconstruction(r, out / "reconstruction.ply", ExportFormat::PlyPointCloud);
  if (depth_png) export_reconstruction(r, out / "depth", ExportFormat::DepthPng16);
  std::printf("sfm: %d iterations (%d accepted), cost %.6g -> %.6g", r.report.iterations,
              r.report.accepted, r.report.initial_cost(), r.report.final_cost());
  if (r.master_rmse) std::printf(", master rmse %.4g (zero code %.4g)", *r.master_rmse, *r.master_zero_code_rmse);
  std::printf("\n");
  return kOk;
}

int run_track_cmd(const fs::path& sequence, const std::optional<fs::path>& decoders,
                  const std::optional<fs::path>& calib, int keyframe,
                  const std::optional<fs::path>& codes_path, const std::optional<fs::path>& out,
                  bool full_res, bool affine) {
  const Dataset d = load_dataset(sequence, decoders, calib);
  if (keyframe < 0 || keyframe >= static_cast<int>(d.manifest.frames.size())) {
    throw Error(ErrorCode::UnknownFrame, "keyframe index out of range");
  }
  Keyframe ref = load_keyframe(d.manifest.frames[static_cast<std::size_t>(keyframe)], keyframe);
  if (codes_path) {
    const auto codes = load_codes(*codes_path);
    const auto it = codes.find(keyframe);
    if (it == codes.end()) throw Error(ErrorCode::UnknownFrame, "no code for the keyframe");
    ref.code = it->second;
    ref.validate();
  }
  TrackerOptions to;
  to.full_resolution = full_res;
  to.estimate_affine = affine;
  std::vector<PoseRecord> poses;
  Se3Pose init;
  int lost = 0;
  for (std::size_t i = 0; i < d.manifest.frames.size(); ++i) {
    const ImagePyramid img = load_image_pyramid(d.manifest.frames[i].image);
    const TrackingState s = track(img, ref, init, d.calib.camera, d.calib.proximity, to);
    const Vec3 t = s.current_pose_estimate.translation();
    std::printf("frame %3zu  %-9s inliers %.3f  t = (%.4f %.4f %.4f)  rot %.3f deg\n", i,
                to_string(s.convergence), s.inlier_fraction, t.x(), t.y(), t.z(),
                rotation_distance(s.current_pose_estimate, Se3Pose()) * 180.0 / 3.141592653589793);
    if (s.convergence == TrackingStatus::Lost) {
      ++lost;
    } else {
      init = s.current_pose_estimate;
    }
    poses.push_back({static_cast<int>(i), s.current_pose_estimate});
  }
  if (out) save_poses(poses, *out);
  return lost == static_cast<int>(d.manifest.frames.size()) ? kSolver : kOk;
}

int run_slam_cmd(const fs::path& sequence, const std::optional<fs::path>& decoders,
                 const std::optional<fs::path>& calib, const std::optional<fs::path>& config,
                 const fs::path& out) {
  const Dataset d = load_dataset(sequence, decoders, calib);
  const SlamConfig cfg = config ? load_slam_config(*config) : SlamConfig{};
  std::vector<fs::path> decoder_paths;
  for (const ManifestFrame& f : d.manifest.frames) decoder_paths.push_back(f.decoder.value_or(fs::path()));
  DecoderProvider provider = [decoder_paths](const SlamFrame& f) {
    const fs::path& p = decoder_paths.at(static_cast<std::size_t>(f.index));
    if (p.empty()) throw Error(ErrorCode::IoError, "no decoder for frame " + std::to_string(f.index));
    return std::make_shared<const DecoderModel>(load_decoder(p));
  };
  if (d.manifest.frames.size() < 2) throw Error(ErrorCode::InvalidArgument, "SLAM needs two frames");
  SlamSystem slam(cfg, d.calib.camera, d.calib.proximity, provider);
  auto frame = [&](std::size_t i) {
    return SlamFrame{static_cast<int>(i), d.manifest.frames[i].timestamp,
                     std::make_shared<const ImagePyramid>(load_image_pyramid(d.manifest.frames[i].image))};
  };
  slam.initialize(frame(0), frame(1));
  int keyframes = 2;
  for (std::size_t i = 2; i < d.manifest.frames.size(); ++i) {
    if (slam.process_frame(frame(i)) == FrameOutcome::KeyframeAdded) ++keyframes;
  }
  export_trajectory(slam.map(), out);
  std::printf("slam: %zu frames, %d keyframes, %zu marginalized\n", d.manifest.frames.size(),
              keyframes, slam.map().marginalizations.size());
  return kOk;
}

int run_check_cmd(const fs::path& frames, const std::optional<fs::path>& decoders,
                  const std::optional<fs::path>& calib, int fa, int fb, int level, double step,
                  double tol, bool bilinear, const std::string& geometric,
                  const std::optional<fs::path>& json_out) {
  const Dataset d = load_dataset(frames, decoders, calib);
  const int n = static_cast<int>(d.manifest.frames.size());
  if (fa < 0 || fb < 0 || fa >= n || fb >= n || fa == fb) {
    throw Error(ErrorCode::UnknownFrame, "invalid frame pair");
  }
  Keyframe a = load_keyframe(d.manifest.frames[static_cast<std::size_t>(fa)], fa);
  Keyframe b = load_keyframe(d.manifest.frames[static_cast<std::size_t>(fb)], fb);
  // Linearize away from the trivial point: ground-truth poses when known, small code offsets.
  if (d.manifest.frames[static_cast<std::size_t>(fa)].ground_truth_pose) a.pose = *d.manifest.frames[static_cast<std::size_t>(fa)].ground_truth_pose;
  if (d.manifest.frames[static_cast<std::size_t>(fb)].ground_truth_pose) b.pose = *d.manifest.frames[static_cast<std::size_t>(fb)].ground_truth_pose;
  for (Eigen::Index k = 0; k < a.code.size(); ++k) a.code[k] = 0.1 * std::sin(1.0 + k);
  for (Eigen::Index k = 0; k < b.code.size(); ++k) b.code[k] = 0.1 * std::cos(2.0 + k);
  JacobianCheckOptions o;
  o.level = level;
  o.step = step;
  o.tolerance = tol;
  if (bilinear) o.residual.interpolation = Interpolation::Bilinear;
  if (geometric == "direct") o.residual.geometric_mode = GeometricMode::Direct;
  const JacobianCheckReport r = check_jacobians(a, b, d.calib.camera, d.calib.proximity, o);
  print_jacobian_report(r);
  if (json_out) {
    json j = r;
    std::ofstream(*json_out) << j.dump(2) << '\n';
  }
  if (!r.ok(0.95)) {
    std::printf("FAIL: fewer than 95%% of valid pixels within tolerance in some group\n");
    return kSolver;
  }
  std::printf("OK\n");
  return kOk;
}

int run_decode_cmd(const fs::path& decoder_path, const std::optional<fs::path>& codes_path, int id,
                   int level, const std::optional<fs::path>& prox_out,
                   const std::optional<fs::path>& depth_out, double a) {
  const DecoderModel dec = load_decoder(decoder_path);
  Code c = Code::Zero(dec.code_size());
  if (codes_path) {
    const auto codes = load_codes(*codes_path);
    const auto it = codes.find(id);
    if (it == codes.end()) throw Error(ErrorCode::UnknownFrame, "no code with id " + std::to_string(id));
    c = it->second;
  }
  const ProximityMap p = decode_proximity(dec, c, level);
  if (prox_out) {
    std::vector<std::uint16_t> q(static_cast<std::size_t>(p.values.size()));
    for (std::size_t i = 0; i < q.size(); ++i) {
      q[i] = static_cast<std::uint16_t>(std::lround(p.values[static_cast<Eigen::Index>(i)] * 65535.0));
    }
    write_png16(*prox_out, p.width, p.height, q);
  }
  if (depth_out) {
    const Eigen::VectorXd dep = decode_depth(dec, c, level, ProximityParams{a});
    save_depth_png16(*depth_out, p.width, p.height, std::span<const double>(dep.data(), static_cast<std::size_t>(dep.size())));
  }
  const auto clamped = std::count(p.clamped.begin(), p.clamped.end(), std::uint8_t{1});
  std::printf("decoded %dx%d level %d, code size %d, proximity [%.6f, %.6f], %td clamped\n", p.width,
              p.height, level, dec.code_size(), p.values.minCoeff(), p.values.maxCoeff(), clamped);
  return kOk;
}

}  // namespace

int cli_main(int argc, const char* const* argv) {
  CLI::App app{"Dense structure from motion and SLAM with linear depth decoders", "code-sfm"};
  app.require_subcommand(1);

  std::string geometric = "transformed";
  std::string frames, decoders, calib, out, config, codes, decoder, json_out, prox_out, depth_out;
  int master = 0, iters = 50, threads = 0, keyframe = 0, pair_a = 0, pair_b = 1, level = 0, id = 0;
  bool ply = false, depth_png = false, full_graph = false, affine = false, full_res = false,
       bilinear = false;
  double step = 1e-4, tol = 1e-4, avg_depth = 2.0;

  CLI::App* sfm = app.add_subcommand("sfm", "joint pose and code optimization of a master frame and partners");
  sfm->add_option("--frames", frames, "image directory or manifest.json")->required();
  sfm->add_option("--decoders", decoders, "directory of <image stem>.csdm decoder files");
  sfm->add_option("--calib", calib, "calib.json");
  sfm->add_option("--master", master, "index of the master frame");
  sfm->add_option("--out", out, "output directory")->required();
  sfm->add_option("--iters", iters, "iteration budget over the schedule");
  sfm->add_option("--threads", threads, "worker threads (0: all cores)");
  sfm->add_flag("--ply", ply, "write reconstruction.ply");
  sfm->add_flag("--depth-png", depth_png, "write depth/depth_<id>.png in millimetres");
  sfm->add_flag("--full-graph", full_graph, "use every frame pair (at most 5 frames)");
  sfm->add_flag("--affine", affine, "estimate per-pair gain and bias");

  CLI::App* trk = app.add_subcommand("track", "track every frame of a sequence against one keyframe");
  trk->add_option("--sequence", frames, "image directory or manifest.json")->required();
  trk->add_option("--decoders", decoders, "decoder directory");
  trk->add_option("--calib", calib, "calib.json");
  trk->add_option("--keyframe", keyframe, "index of the reference frame");
  trk->add_option("--codes", codes, "codes.bin holding the keyframe code");
  trk->add_option("--out", out, "poses.json");
  trk->add_flag("--full-resolution", full_res, "refine on level 0 as well");
  trk->add_flag("--affine", affine, "estimate gain and bias");

  CLI::App* slm = app.add_subcommand("slam", "windowed keyframe SLAM over an image sequence");
  slm->add_option("--sequence", frames, "image directory (with timestamps.txt) or manifest.json")->required();
  slm->add_option("--decoders", decoders, "decoder directory");
  slm->add_option("--calib", calib, "calib.json");
  slm->add_option("--config", config, "slam.json");
  slm->add_option("--out", out, "TUM trajectory")->required();

  CLI::App* chk = app.add_subcommand("check-jacobians", "finite-difference check of residual Jacobians");
  chk->add_option("--frames", frames, "image directory or manifest.json")->required();
  chk->add_option("--decoders", decoders, "decoder directory");
  chk->add_option("--calib", calib, "calib.json");
  chk->add_option("-a,--frame-a", pair_a, "reference frame index");
  chk->add_option("-b,--frame-b", pair_b, "target frame index");
  chk->add_option("--level", level, "pyramid level");
  chk->add_option("--step", step, "central-difference step");
  chk->add_option("--tol", tol, "relative tolerance");
  chk->add_flag("--bilinear", bilinear, "use bilinear interpolation");
  chk->add_option("--geometric", geometric, "geometric residual form")
      ->check(CLI::IsMember({"direct", "transformed"}));
  chk->add_option("--json", json_out, "write the report as JSON");

  CLI::App* dec = app.add_subcommand("decode", "dump decoded proximity and depth");
  dec->add_option("--decoder", decoder, "decoder file")->required();
  dec->add_option("--codes", codes, "codes.bin (zero code when omitted)");
  dec->add_option("--id", id, "code id inside codes.bin");
  dec->add_option("--level", level, "pyramid level");
  dec->add_option("--out", prox_out, "16-bit PNG of proximity scaled to 65535");
  dec->add_option("--depth-out", depth_out, "16-bit millimetre depth PNG");
  dec->add_option("--avg-depth", avg_depth, "proximity constant a in metres");

  if (argc <= 1) {
    std::cout << app.help();
    return kUsage;
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    app.exit(e);
    return kOk;
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  auto opt = [](const std::string& s) -> std::optional<fs::path> {
    if (s.empty()) return std::nullopt;
    return fs::path(s);
  };
  try {
    if (*sfm) {
      return run_sfm_cmd(frames, opt(decoders), opt(calib), master, out, ply, depth_png, full_graph,
                         affine, iters, threads);
    }
    if (*trk) {
      return run_track_cmd(frames, opt(decoders), opt(calib), keyframe, opt(codes), opt(out),
                           full_res, affine);
    }
    if (*slm) return run_slam_cmd(frames, opt(decoders), opt(calib), opt(config), out);
    if (*chk) {
      return run_check_cmd(frames, opt(decoders), opt(calib), pair_a, pair_b, level, step, tol,
                           bilinear, geometric, opt(json_out));
    }
    if (*dec) return run_decode_cmd(decoder, opt(codes), id, level, opt(prox_out), opt(depth_out), avg_depth);
  } catch (const Error& e) {
    std::cerr << "error [" << to_string(e.code()) << "]: " << e.what() << '\n';
    return e.code() == ErrorCode::InvalidArgument ? kUsage : exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kData;
  }
  return kUsage;
}

}  // namespace codesfm
