#pragma once

// Synthetic scenes, renderer and stand-in linear decoders for tests, benchmarks and fixtures.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "codesfm/decoder.hpp"
#include "codesfm/geometry.hpp"
#include "codesfm/image.hpp"
#include "codesfm/sfm.hpp"

namespace codesfm::synth {

struct Wave {
  Vec3 k;  // wave vector, rad/m
  double phase = 0.0;
  double amplitude = 0.0;
};

/// Solid texture: albedo plus a sum of 3D sinusoids.
struct Texture {
  double albedo = 0.5;
  std::vector<Wave> waves;

  double operator()(const Vec3& p) const;
};

struct Plane {
  Vec3 normal;  // unit, facing the interior
  double offset = 0.0;  // normal . x = offset
  Texture texture;
};

struct Box {
  Vec3 min;
  Vec3 max;
  Texture texture;
};

struct Sphere {
  Vec3 center;
  double radius = 0.0;
  Texture texture;
};

struct Scene {
  std::vector<Plane> planes;
  std::vector<Box> boxes;
  std::vector<Sphere> spheres;
  Vec3 light = Vec3(0.3, -0.8, -0.5).normalized();
  /// Scales every texture amplitude (0 = untextured, shading only).
  double texture_contrast = 1.0;
};

struct Hit {
  double t = 0.0;
  Vec3 point;
  Vec3 normal;
  const Texture* texture = nullptr;
};

std::optional<Hit> intersect(const Scene& scene, const Vec3& origin, const Vec3& direction);

/// Room of five walls with a box and two spheres; camera space centred near the origin looking
/// down +z. `depth` sets the back wall distance.
Scene make_room_scene(std::uint32_t seed, double depth = 3.0);

struct RenderOptions {
  int supersample = 3;  // per axis, intensity only
  bool quantize_8bit = true;
  double noise_sigma = 0.0;
  std::uint32_t noise_seed = 0;
  double gain = 1.0;
  double bias = 0.0;
};

struct Rendering {
  Image image;
  std::vector<double> depth;  // z-depth in metres at pixel centres, 0 where nothing was hit
};

Rendering render_scene(const Scene& scene, const Se3Pose& world_from_camera,
                       const CameraIntrinsics& camera, const RenderOptions& opts = {});

struct DecoderFitOptions {
  int code_size = kDefaultCodeSize;
  /// RMS proximity error of the zero-code prediction.
  double zero_code_rmse = 0.03;
  /// Number of low-frequency modes carrying the zero-code bias.
  int bias_modes = 10;
  /// Per-column RMS of the basis at level 0.
  double basis_scale = 0.02;
  /// Attenuation of the basis at intensity edges, in [0, 1).
  double edge_attenuation = 0.5;
  double base_uncertainty = 0.02;
  double edge_uncertainty_gain = 4.0;
  std::uint32_t seed = 1;
};

struct FittedDecoder {
  DecoderModel model;
  Code true_code;
  double fit_rmse = 0.0;        // decode(true_code) vs ground truth at level 0
  double zero_code_rmse = 0.0;  // decode(0) vs ground truth at level 0
};

/// DCT-basis stand-in decoder around the ground-truth proximity of `depth` (level 0).
FittedDecoder fit_dct_decoder(const Image& image, const std::vector<double>& depth,
                              const ProximityParams& params, const DecoderFitOptions& opts,
                              const std::string& source_id = "synthetic-dct");

enum class Motion { Lateral, Forward, RotationOnly, Loop, Static };
Motion motion_from_string(const std::string& s);
std::string to_string(Motion m);

struct FixtureOptions {
  int width = 128;
  int height = 96;
  int num_frames = 2;
  Motion motion = Motion::Lateral;
  /// Per-frame translation as a fraction of the scene depth (lateral/forward), loop radius
  /// fraction for loops, degrees per frame for rotation-only.
  double step = 0.05;
  double scene_depth = 3.0;
  std::uint32_t seed = 7;
  RenderOptions render;
  DecoderFitOptions decoder;
  /// Fit decoders for every frame (otherwise only for frames listed in `decoder_frames`).
  bool all_decoders = true;
  std::vector<int> decoder_frames;
  double texture_contrast = 1.0;
  ProximityParams proximity;
  /// Overrides `motion` when set (num_frames is taken from its size).
  std::optional<std::vector<Se3Pose>> poses;
};

struct FixtureFrame {
  int id = 0;
  double timestamp = 0.0;
  Se3Pose pose;  // ground-truth world-from-camera
  Image image;
  std::vector<double> depth;
  ProximityGroundTruth ground_truth;
  std::optional<FittedDecoder> decoder;
};

struct Fixture {
  FixtureOptions options;
  CameraIntrinsics camera;
  ProximityParams proximity;
  Scene scene;
  std::vector<FixtureFrame> frames;

  /// Keyframe of frame `i` with identity pose and zero code; throws when it has no decoder.
  Keyframe keyframe(int i) const;
  std::shared_ptr<const ImagePyramid> pyramid(int i) const;
  std::shared_ptr<const DecoderModel> decoder(int i) const;

 private:
  mutable std::vector<std::shared_ptr<const ImagePyramid>> pyramids_;
  mutable std::vector<std::shared_ptr<const DecoderModel>> decoders_;
};

/// Pinhole camera with a 70 degree horizontal field of view.
CameraIntrinsics make_camera(int width, int height);

/// Ground-truth camera poses of a motion pattern.
std::vector<Se3Pose> make_trajectory(Motion motion, int num_frames, double step, double scene_depth);

Fixture make_fixture(const FixtureOptions& opts);

/// Writes manifest.json, calib.json, images/, depth/, decoders/, gt_codes.bin and fixture.json
/// (fit residuals and generation options).
void emit_fixture(const Fixture& fixture, const std::filesystem::path& outdir);

}  // namespace codesfm::synth
