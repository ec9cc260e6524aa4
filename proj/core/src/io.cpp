#include "codesfm/io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <nlohmann/json.hpp>

#include "binary_io.hpp"
#include "codesfm/error.hpp"

namespace codesfm {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::vector<unsigned char> read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw Error(ErrorCode::IoError, "cannot read " + path.string());
  return buf;
}

struct MemoryReader {
  const std::vector<unsigned char>* data;
  std::size_t pos;
};

void read_callback(png_structp png, png_bytep out, png_size_t n) {
  auto* r = static_cast<MemoryReader*>(png_get_io_ptr(png));
  if (r->pos + n > r->data->size()) png_error(png, "truncated PNG data");
  std::memcpy(out, r->data->data() + r->pos, n);
  r->pos += n;
}

struct PngMessage {
  char text[256] = {0};
};

void error_callback(png_structp png, png_const_charp msg) {
  auto* m = static_cast<PngMessage*>(png_get_error_ptr(png));
  std::snprintf(m->text, sizeof(m->text), "%s", msg);
  png_longjmp(png, 1);
}

void warning_callback(png_structp, png_const_charp) {}

// Decodes into `out`; returns false (message in `msg`) on a libpng error.
bool decode_png(const std::vector<unsigned char>& file, bool header_only, PngData& out,
                PngMessage& msg) {
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &msg, error_callback, warning_callback);
  if (png == nullptr) return false;
  png_infop info = png_create_info_struct(png);
  if (info == nullptr) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    return false;
  }
  MemoryReader reader{&file, 0};
  std::vector<png_bytep> rows;
  std::vector<unsigned char> pixels;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    return false;
  }
  png_set_read_fn(png, &reader, read_callback);
  png_read_info(png, info);
  const png_uint_32 w = png_get_image_width(png, info);
  const png_uint_32 h = png_get_image_height(png, info);
  out.width = static_cast<int>(w);
  out.height = static_cast<int>(h);
  if (header_only) {
    png_destroy_read_struct(&png, &info, nullptr);
    return true;
  }
  const int color = png_get_color_type(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8) {
    png_set_expand_gray_1_2_4_to_8(png);
  }
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  png_read_update_info(png, info);
  out.channels = png_get_channels(png, info);
  out.bit_depth = png_get_bit_depth(png, info);
  const std::size_t stride = png_get_rowbytes(png, info);
  pixels.resize(stride * h);
  rows.resize(h);
  for (png_uint_32 y = 0; y < h; ++y) rows[y] = pixels.data() + y * stride;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  const std::size_t n = static_cast<std::size_t>(w) * h * static_cast<std::size_t>(out.channels);
  out.samples.resize(n);
  for (png_uint_32 y = 0; y < h; ++y) {
    const unsigned char* row = pixels.data() + y * stride;
    const std::size_t per_row = static_cast<std::size_t>(w) * static_cast<std::size_t>(out.channels);
    for (std::size_t i = 0; i < per_row; ++i) {
      // 16-bit PNG samples are big-endian.
      out.samples[y * per_row + i] =
          out.bit_depth == 16 ? static_cast<std::uint16_t>((row[2 * i] << 8) | row[2 * i + 1])
                              : row[i];
    }
  }
  return true;
}

bool encode_png(FILE* fp, int width, int height, int bit_depth, const unsigned char* data,
                PngMessage& msg) {
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &msg, error_callback, warning_callback);
  if (png == nullptr) return false;
  png_infop info = png_create_info_struct(png);
  if (info == nullptr) {
    png_destroy_write_struct(&png, nullptr);
    return false;
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    return false;
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), bit_depth,
               PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  const std::size_t stride = static_cast<std::size_t>(width) * (bit_depth == 16 ? 2 : 1);
  for (int y = 0; y < height; ++y) {
    png_write_row(png, const_cast<png_bytep>(data + static_cast<std::size_t>(y) * stride));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return true;
}

void write_gray(const fs::path& path, int width, int height, int bit_depth,
                const std::vector<unsigned char>& bytes) {
  if (width <= 0 || height <= 0) throw Error(ErrorCode::InvalidArgument, "empty image");
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  FILE* fp = std::fopen(path.c_str(), "wb");
  if (fp == nullptr) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  PngMessage msg;
  const bool ok = encode_png(fp, width, height, bit_depth, bytes.data(), msg);
  const bool closed = std::fclose(fp) == 0;
  if (!ok || !closed) throw Error(ErrorCode::IoError, "PNG encoding failed: " + std::string(msg.text));
}

bool is_png(const std::vector<unsigned char>& file) {
  return file.size() >= 8 && png_sig_cmp(file.data(), 0, 8) == 0;
}

fs::path resolve(const fs::path& base, const std::string& p) {
  const fs::path q(p);
  return q.is_absolute() ? q : base / q;
}

void require_file(const fs::path& p) {
  if (!fs::is_regular_file(p)) throw Error(ErrorCode::IoError, "missing file " + p.string());
}

json pose_to_json(const Se3Pose& pose) {
  const Eigen::Quaterniond q = pose.quaternion();
  const Vec3& t = pose.translation();
  return json{{"q", {q.x(), q.y(), q.z(), q.w()}}, {"t", {t.x(), t.y(), t.z()}}};
}

Se3Pose pose_from_json(const json& j) {
  const auto q = j.at("q").get<std::vector<double>>();
  const auto t = j.at("t").get<std::vector<double>>();
  if (q.size() != 4 || t.size() != 3) throw Error(ErrorCode::FormatError, "pose needs q[4] and t[3]");
  const Eigen::Quaterniond quat(q[3], q[0], q[1], q[2]);
  if (!(quat.norm() > 0.5)) throw Error(ErrorCode::FormatError, "degenerate quaternion");
  return Se3Pose(quat.normalized(), Vec3(t[0], t[1], t[2]));
}

json parse_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::FormatError, path.string() + ": " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  out << text;
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
}

}  // namespace

PngData read_png(const fs::path& path) {
  const std::vector<unsigned char> file = read_file(path);
  if (!is_png(file)) throw Error(ErrorCode::UnsupportedFormat, path.string() + " is not a PNG");
  PngData out;
  PngMessage msg;
  if (!decode_png(file, false, out, msg)) {
    throw Error(ErrorCode::UnsupportedFormat, path.string() + ": " + msg.text);
  }
  return out;
}

std::pair<int, int> read_png_size(const fs::path& path) {
  const std::vector<unsigned char> file = read_file(path);
  if (!is_png(file)) throw Error(ErrorCode::UnsupportedFormat, path.string() + " is not a PNG");
  PngData out;
  PngMessage msg;
  if (!decode_png(file, true, out, msg)) {
    throw Error(ErrorCode::UnsupportedFormat, path.string() + ": " + msg.text);
  }
  return {out.width, out.height};
}

void write_png8(const fs::path& path, int width, int height, std::span<const std::uint8_t> grey) {
  if (grey.size() != static_cast<std::size_t>(width) * static_cast<std::size_t>(height)) {
    throw Error(ErrorCode::DimensionMismatch, "pixel count does not match image size");
  }
  write_gray(path, width, height, 8, std::vector<unsigned char>(grey.begin(), grey.end()));
}

void write_png16(const fs::path& path, int width, int height, std::span<const std::uint16_t> grey) {
  if (grey.size() != static_cast<std::size_t>(width) * static_cast<std::size_t>(height)) {
    throw Error(ErrorCode::DimensionMismatch, "pixel count does not match image size");
  }
  std::vector<unsigned char> bytes(grey.size() * 2);
  for (std::size_t i = 0; i < grey.size(); ++i) {
    bytes[2 * i] = static_cast<unsigned char>(grey[i] >> 8);
    bytes[2 * i + 1] = static_cast<unsigned char>(grey[i] & 0xff);
  }
  write_gray(path, width, height, 16, bytes);
}

Image load_image(const fs::path& path) {
  const PngData png = read_png(path);
  const double scale = 1.0 / (png.bit_depth == 16 ? 65535.0 : 255.0);
  Image img(png.width, png.height);
  const std::size_t c = static_cast<std::size_t>(png.channels);
  for (std::size_t i = 0; i < static_cast<std::size_t>(png.width) * png.height; ++i) {
    const std::uint16_t* s = png.samples.data() + i * c;
    double v = 0.0;
    if (c <= 2) {
      v = s[0];
    } else {
      v = 0.299 * s[0] + 0.587 * s[1] + 0.114 * s[2];
    }
    img[i] = static_cast<float>(v * scale);
  }
  return img;
}

void save_image(const Image& image, const fs::path& path) {
  std::vector<std::uint8_t> q(image.pixels().size());
  for (std::size_t i = 0; i < q.size(); ++i) {
    q[i] = static_cast<std::uint8_t>(std::clamp(std::lround(image[i] * 255.0f), 0L, 255L));
  }
  write_png8(path, image.width(), image.height(), q);
}

ImagePyramid load_image_pyramid(const fs::path& path) {
  const Image img = load_image(path);
  if (img.width() < kMinImageSize || img.height() < kMinImageSize) {
    throw Error(ErrorCode::UnsupportedFormat,
                path.string() + ": images must be at least 32x32 for four pyramid levels");
  }
  return ImagePyramid::build(img, kPyramidLevels);
}

ProximityGroundTruth load_depth_gt(const fs::path& path, const ProximityParams& params) {
  params.validate();
  const PngData png = read_png(path);
  if (png.bit_depth != 16 || png.channels != 1) {
    throw Error(ErrorCode::UnsupportedFormat, path.string() + ": depth must be 16-bit greyscale");
  }
  ProximityGroundTruth gt;
  gt.width = png.width;
  gt.height = png.height;
  gt.proximity = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(png.samples.size()));
  gt.valid.assign(png.samples.size(), 0);
  for (std::size_t i = 0; i < png.samples.size(); ++i) {
    if (png.samples[i] == 0) continue;
    gt.valid[i] = 1;
    gt.proximity[static_cast<Eigen::Index>(i)] = depth_to_proximity(png.samples[i] * 1e-3, params);
  }
  return gt;
}

void save_depth_png16(const fs::path& path, int width, int height, std::span<const double> depth_m) {
  std::vector<std::uint16_t> mm(depth_m.size(), 0);
  for (std::size_t i = 0; i < depth_m.size(); ++i) {
    const double d = depth_m[i];
    if (!(d > 0.0) || !std::isfinite(d)) continue;
    mm[i] = static_cast<std::uint16_t>(std::clamp(std::lround(d * 1000.0), 1L, 65535L));
  }
  write_png16(path, width, height, mm);
}

Calibration load_calibration(const fs::path& path) {
  const json j = parse_json(path);
  Calibration c;
  try {
    c.camera.fx = j.at("fx").get<double>();
    c.camera.fy = j.at("fy").get<double>();
    c.camera.cx = j.at("cx").get<double>();
    c.camera.cy = j.at("cy").get<double>();
    c.camera.width = j.at("width").get<int>();
    c.camera.height = j.at("height").get<int>();
    c.proximity.a = j.value("avg_depth", ProximityParams{}.a);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::FormatError, path.string() + ": " + e.what());
  }
  c.camera.validate();
  c.proximity.validate();
  return c;
}

void save_calibration(const Calibration& calib, const fs::path& path) {
  const json j{{"fx", calib.camera.fx},         {"fy", calib.camera.fy},
               {"cx", calib.camera.cx},         {"cy", calib.camera.cy},
               {"width", calib.camera.width},   {"height", calib.camera.height},
               {"avg_depth", calib.proximity.a}};
  write_text(path, j.dump(2) + "\n");
}

SequenceManifest load_manifest(const fs::path& path) {
  const json j = parse_json(path);
  const fs::path base = path.parent_path();
  SequenceManifest m;
  try {
    m.calibration = resolve(base, j.at("calibration").get<std::string>());
    for (const json& f : j.at("frames")) {
      ManifestFrame fr;
      fr.image = resolve(base, f.at("image").get<std::string>());
      if (f.contains("depth")) fr.depth = resolve(base, f.at("depth").get<std::string>());
      if (f.contains("decoder")) fr.decoder = resolve(base, f.at("decoder").get<std::string>());
      fr.timestamp = f.at("timestamp").get<double>();
      if (f.contains("pose")) fr.ground_truth_pose = pose_from_json(f.at("pose"));
      m.frames.push_back(std::move(fr));
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::FormatError, path.string() + ": " + e.what());
  }
  validate_manifest(m);
  return m;
}

void save_manifest(const SequenceManifest& m, const fs::path& path) {
  const fs::path base = path.parent_path();
  auto rel = [&](const fs::path& p) {
    const fs::path r = p.lexically_relative(base.empty() ? fs::path(".") : base);
    return (r.empty() || *r.begin() == "..") ? p.generic_string() : r.generic_string();
  };
  json frames = json::array();
  for (const ManifestFrame& f : m.frames) {
    json e{{"image", rel(f.image)}, {"timestamp", f.timestamp}};
    if (f.depth) e["depth"] = rel(*f.depth);
    if (f.decoder) e["decoder"] = rel(*f.decoder);
    if (f.ground_truth_pose) e["pose"] = pose_to_json(*f.ground_truth_pose);
    frames.push_back(std::move(e));
  }
  const json j{{"calibration", rel(m.calibration)}, {"frames", frames}};
  write_text(path, j.dump(2) + "\n");
}

void validate_manifest(const SequenceManifest& m) {
  require_file(m.calibration);
  const Calibration calib = load_calibration(m.calibration);
  for (std::size_t i = 0; i < m.frames.size(); ++i) {
    const ManifestFrame& f = m.frames[i];
    if (i > 0 && !(f.timestamp > m.frames[i - 1].timestamp)) {
      throw Error(ErrorCode::FormatError, "manifest timestamps must strictly increase");
    }
    require_file(f.image);
    const auto [w, h] = read_png_size(f.image);
    if (w != calib.camera.width || h != calib.camera.height) {
      throw Error(ErrorCode::DimensionMismatch,
                  f.image.string() + " does not match the calibrated image size");
    }
    if (f.depth) {
      require_file(*f.depth);
      const auto [dw, dh] = read_png_size(*f.depth);
      if (dw != w || dh != h) throw Error(ErrorCode::DimensionMismatch, f.depth->string() + " size");
    }
    if (f.decoder) {
      require_file(*f.decoder);
      const DecoderModel d = load_decoder(*f.decoder);
      if (d.level(0).width != w || d.level(0).height != h) {
        throw Error(ErrorCode::DimensionMismatch, f.decoder->string() + " resolution");
      }
    }
  }
}

SequenceManifest manifest_from_directory(const fs::path& images_dir,
                                         const std::optional<fs::path>& decoders_dir,
                                         const fs::path& calibration) {
  if (!fs::is_directory(images_dir)) throw Error(ErrorCode::IoError, "not a directory: " + images_dir.string());
  std::vector<fs::path> images;
  for (const auto& e : fs::directory_iterator(images_dir)) {
    if (e.is_regular_file() && e.path().extension() == ".png") images.push_back(e.path());
  }
  std::sort(images.begin(), images.end());
  if (images.empty()) throw Error(ErrorCode::IoError, "no PNG images in " + images_dir.string());

  std::vector<double> stamps;
  const fs::path ts = images_dir / "timestamps.txt";
  if (fs::exists(ts)) {
    std::ifstream in(ts);
    std::string line;
    while (std::getline(in, line)) {
      std::istringstream ls(line);
      double t = 0.0;
      if (line.empty() || line[0] == '#') continue;
      if (!(ls >> t)) throw Error(ErrorCode::FormatError, ts.string() + ": bad line '" + line + "'");
      stamps.push_back(t);
    }
    if (stamps.size() != images.size()) {
      throw Error(ErrorCode::FormatError, "timestamps.txt does not list one time per image");
    }
  } else {
    for (std::size_t i = 0; i < images.size(); ++i) stamps.push_back(static_cast<double>(i));
  }

  SequenceManifest m;
  m.calibration = calibration;
  for (std::size_t i = 0; i < images.size(); ++i) {
    ManifestFrame f;
    f.image = images[i];
    f.timestamp = stamps[i];
    if (decoders_dir) {
      const fs::path d = *decoders_dir / (images[i].stem().string() + ".csdm");
      if (fs::exists(d)) f.decoder = d;
    }
    m.frames.push_back(std::move(f));
  }
  validate_manifest(m);
  return m;
}

void save_poses(std::span<const PoseRecord> poses, const fs::path& path) {
  json arr = json::array();
  for (const PoseRecord& p : poses) {
    json e = pose_to_json(p.pose);
    e["id"] = p.id;
    arr.push_back(std::move(e));
  }
  write_text(path, arr.dump(2) + "\n");
}

std::vector<PoseRecord> load_poses(const fs::path& path) {
  const json j = parse_json(path);
  std::vector<PoseRecord> out;
  try {
    for (const json& e : j) out.push_back({e.at("id").get<int>(), pose_from_json(e)});
  } catch (const json::exception& e) {
    throw Error(ErrorCode::FormatError, path.string() + ": " + e.what());
  }
  return out;
}

namespace {
constexpr char kCodesMagic[4] = {'C', 'S', 'C', 'B'};
constexpr std::uint32_t kCodesVersion = 1;
}  // namespace

void save_codes(const std::map<int, Code>& codes, const fs::path& path) {
  std::uint32_t size = codes.empty() ? 0 : static_cast<std::uint32_t>(codes.begin()->second.size());
  for (const auto& [id, c] : codes) {
    if (static_cast<std::uint32_t>(c.size()) != size) {
      throw Error(ErrorCode::CodeSizeMismatch, "codes of different sizes");
    }
  }
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out.write(kCodesMagic, 4);
  detail::write_u32(out, kCodesVersion);
  detail::write_u32(out, static_cast<std::uint32_t>(codes.size()));
  detail::write_u32(out, size);
  for (const auto& [id, c] : codes) {
    detail::write_u32(out, static_cast<std::uint32_t>(id));
    for (Eigen::Index i = 0; i < c.size(); ++i) detail::write_f64(out, c[i]);
  }
  if (!out) throw Error(ErrorCode::IoError, "failed writing " + path.string());
}

std::map<int, Code> load_codes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  detail::Reader r(in, path.string());
  char magic[4];
  r.read_bytes(magic, 4);
  if (std::memcmp(magic, kCodesMagic, 4) != 0) r.fail("not a code file");
  if (r.u32() != kCodesVersion) r.fail("unsupported code file version");
  const std::uint32_t count = r.u32();
  const std::uint32_t size = r.u32();
  if (count > (1u << 20) || size > (1u << 20)) r.fail("implausible code file header");
  std::map<int, Code> out;
  for (std::uint32_t k = 0; k < count; ++k) {
    const int id = static_cast<int>(r.u32());
    Code c(size);
    for (std::uint32_t i = 0; i < size; ++i) c[i] = r.f64();
    if (!out.emplace(id, std::move(c)).second) r.fail("duplicate code id");
  }
  if (!r.at_end()) r.fail("trailing bytes");
  return out;
}

void save_tum_trajectory(std::span<const TrajectoryEntry> entries, const fs::path& path) {
  std::ostringstream os;
  os << std::setprecision(17);
  for (const TrajectoryEntry& e : entries) {
    const Eigen::Quaterniond q = e.pose.quaternion();
    const Vec3& t = e.pose.translation();
    os << e.timestamp << ' ' << t.x() << ' ' << t.y() << ' ' << t.z() << ' ' << q.x() << ' '
       << q.y() << ' ' << q.z() << ' ' << q.w() << '\n';
  }
  write_text(path, os.str());
}

std::vector<TrajectoryEntry> load_tum_trajectory(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  std::vector<TrajectoryEntry> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    double t, x, y, z, qx, qy, qz, qw;
    if (!(ls >> t >> x >> y >> z >> qx >> qy >> qz >> qw)) {
      throw Error(ErrorCode::FormatError, path.string() + ": bad trajectory line");
    }
    out.push_back({t, Se3Pose(Eigen::Quaterniond(qw, qx, qy, qz).normalized(), Vec3(x, y, z))});
  }
  return out;
}

}  // namespace codesfm
