#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "codesfm/decoder.hpp"
#include "codesfm/geometry.hpp"
#include "codesfm/image.hpp"
#include "codesfm/sfm.hpp"

namespace codesfm {

/// Decoded PNG samples, grey or colour, 8 or 16 bit. Samples are stored widened to 16 bit.
struct PngData {
  int width = 0;
  int height = 0;
  int channels = 0;  // 1 grey, 2 grey+alpha, 3 rgb, 4 rgba
  int bit_depth = 0;
  std::vector<std::uint16_t> samples;
};

/// Throws IoError when unreadable, UnsupportedFormat for non-PNG data.
PngData read_png(const std::filesystem::path& path);
/// Header only: (width, height).
std::pair<int, int> read_png_size(const std::filesystem::path& path);

void write_png8(const std::filesystem::path& path, int width, int height,
                std::span<const std::uint8_t> grey);
void write_png16(const std::filesystem::path& path, int width, int height,
                 std::span<const std::uint16_t> grey);

/// Greyscale image in [0,1]; colour is converted to luminance, alpha is dropped.
Image load_image(const std::filesystem::path& path);
/// Quantizes to 8 bit.
void save_image(const Image& image, const std::filesystem::path& path);

inline constexpr int kMinImageSize = 32;

/// Four-level pyramid of a PNG; inputs below 32x32 are UnsupportedFormat.
ImagePyramid load_image_pyramid(const std::filesystem::path& path);

/// 16-bit millimetre depth PNG (0 = invalid) converted to proximity.
ProximityGroundTruth load_depth_gt(const std::filesystem::path& path, const ProximityParams& params);
/// Metric depth in metres, written as millimetres; non-positive or non-finite depths become 0.
void save_depth_png16(const std::filesystem::path& path, int width, int height,
                      std::span<const double> depth_m);

struct Calibration {
  CameraIntrinsics camera;
  ProximityParams proximity;
};

/// {fx, fy, cx, cy, width, height, avg_depth}; avg_depth sets the proximity constant.
Calibration load_calibration(const std::filesystem::path& path);
void save_calibration(const Calibration& calib, const std::filesystem::path& path);

struct ManifestFrame {
  std::filesystem::path image;
  std::optional<std::filesystem::path> depth;
  std::optional<std::filesystem::path> decoder;
  double timestamp = 0.0;
  std::optional<Se3Pose> ground_truth_pose;
};

struct SequenceManifest {
  std::filesystem::path calibration;
  std::vector<ManifestFrame> frames;
};

/// Parses manifest.json; relative paths are resolved against its directory. Rejects missing
/// files, non-increasing timestamps and images whose size differs from the calibration.
SequenceManifest load_manifest(const std::filesystem::path& path);
/// Writes paths relative to the manifest's directory when possible.
void save_manifest(const SequenceManifest& manifest, const std::filesystem::path& path);

/// Checks a manifest against its calibration, including decoder resolution and code sizes
/// (decoders are fully loaded). Throws UnsupportedFormat / DimensionMismatch / IoError.
void validate_manifest(const SequenceManifest& manifest);

/// Ordered *.png of `images_dir`, timestamps from timestamps.txt when present (else 0, 1, ...),
/// decoders from `decoders_dir`/<stem>.csdm when present.
SequenceManifest manifest_from_directory(const std::filesystem::path& images_dir,
                                         const std::optional<std::filesystem::path>& decoders_dir,
                                         const std::filesystem::path& calibration);

struct PoseRecord {
  int id = 0;
  Se3Pose pose;
};

/// [{"id": n, "q": [qx, qy, qz, qw], "t": [tx, ty, tz]}]
void save_poses(std::span<const PoseRecord> poses, const std::filesystem::path& path);
std::vector<PoseRecord> load_poses(const std::filesystem::path& path);

/// "CSCB" magic, u32 version, u32 count, u32 code_size, then per code u32 id and f64 values.
void save_codes(const std::map<int, Code>& codes, const std::filesystem::path& path);
std::map<int, Code> load_codes(const std::filesystem::path& path);

struct TrajectoryEntry {
  double timestamp = 0.0;
  Se3Pose pose;
};

/// TUM text: "timestamp tx ty tz qx qy qz qw" per line.
void save_tum_trajectory(std::span<const TrajectoryEntry> entries, const std::filesystem::path& path);
std::vector<TrajectoryEntry> load_tum_trajectory(const std::filesystem::path& path);

}  // namespace codesfm
