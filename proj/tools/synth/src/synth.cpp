#include "codesfm/synth/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <random>

#include <nlohmann/json.hpp>

#include "codesfm/error.hpp"
#include "codesfm/io.hpp"

namespace codesfm::synth {
namespace fs = std::filesystem;

double Texture::operator()(const Vec3& p) const {
  double v = albedo;
  for (const Wave& w : waves) v += w.amplitude * std::sin(w.k.dot(p) + w.phase);
  return v;
}

namespace {

constexpr double kNoHit = std::numeric_limits<double>::infinity();

Texture random_texture(std::mt19937& rng, double albedo) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> n(0.0, 1.0);
  Texture t;
  t.albedo = albedo;
  // Wavelengths from 0.6 m down to 0.1 m; amplitude falls off with frequency.
  constexpr int kWaves = 8;
  for (int i = 0; i < kWaves; ++i) {
    const double lambda = 0.6 * std::pow(0.1 / 0.6, static_cast<double>(i) / (kWaves - 1));
    Vec3 dir(n(rng), n(rng), n(rng));
    dir.normalize();
    t.waves.push_back({dir * (2.0 * std::numbers::pi / lambda), 2.0 * std::numbers::pi * u(rng),
                       0.16 * std::pow(lambda / 0.6, 0.35)});
  }
  return t;
}

double shade(const Scene& scene, const Hit& h) {
  const double lambert = std::max(0.0, -h.normal.dot(scene.light));
  const Texture& t = *h.texture;
  double v = t.albedo;
  for (const Wave& w : t.waves) v += scene.texture_contrast * w.amplitude * std::sin(w.k.dot(h.point) + w.phase);
  return std::clamp(v * (0.75 + 0.25 * lambert), 0.02, 0.98);
}

}  // namespace

std::optional<Hit> intersect(const Scene& scene, const Vec3& o, const Vec3& d) {
  Hit best;
  best.t = kNoHit;
  for (const Plane& p : scene.planes) {
    const double den = p.normal.dot(d);
    if (std::abs(den) < 1e-12) continue;
    const double t = (p.offset - p.normal.dot(o)) / den;
    if (t > 1e-9 && t < best.t) best = {t, o + t * d, p.normal, &p.texture};
  }
  for (const Sphere& s : scene.spheres) {
    const Vec3 oc = o - s.center;
    const double a = d.squaredNorm();
    const double b = oc.dot(d);
    const double c = oc.squaredNorm() - s.radius * s.radius;
    const double disc = b * b - a * c;
    if (disc < 0.0) continue;
    const double sq = std::sqrt(disc);
    double t = (-b - sq) / a;
    if (t <= 1e-9) t = (-b + sq) / a;
    if (t > 1e-9 && t < best.t) {
      const Vec3 x = o + t * d;
      best = {t, x, (x - s.center) / s.radius, &s.texture};
    }
  }
  for (const Box& bx : scene.boxes) {
    double t0 = -kNoHit;
    double t1 = kNoHit;
    int axis = -1;
    bool ok = true;
    for (int k = 0; k < 3 && ok; ++k) {
      if (std::abs(d[k]) < 1e-15) {
        ok = o[k] >= bx.min[k] && o[k] <= bx.max[k];
        continue;
      }
      double ta = (bx.min[k] - o[k]) / d[k];
      double tb = (bx.max[k] - o[k]) / d[k];
      if (ta > tb) std::swap(ta, tb);
      if (ta > t0) {
        t0 = ta;
        axis = k;
      }
      t1 = std::min(t1, tb);
      ok = t0 <= t1;
    }
    if (!ok || axis < 0 || t0 <= 1e-9 || t0 >= best.t) continue;
    Vec3 nrm = Vec3::Zero();
    nrm[axis] = d[axis] > 0.0 ? -1.0 : 1.0;
    best = {t0, o + t0 * d, nrm, &bx.texture};
  }
  if (best.t == kNoHit) return std::nullopt;
  return best;
}

Scene make_room_scene(std::uint32_t seed, double depth) {
  std::mt19937 rng(seed);
  Scene s;
  const double half_w = 0.9 * depth;
  const double half_h = 0.6 * depth;
  // Interior-facing walls: back, floor (+y is down), ceiling, left, right.
  s.planes.push_back({Vec3(0, 0, -1), -depth, random_texture(rng, 0.50)});
  s.planes.push_back({Vec3(0, -1, 0), -half_h, random_texture(rng, 0.42)});
  s.planes.push_back({Vec3(0, 1, 0), -half_h, random_texture(rng, 0.58)});
  s.planes.push_back({Vec3(1, 0, 0), -half_w, random_texture(rng, 0.46)});
  s.planes.push_back({Vec3(-1, 0, 0), -half_w, random_texture(rng, 0.54)});
  s.planes.push_back({Vec3(0, 0, 1), -2.0 * depth, random_texture(rng, 0.5)});  // behind the camera
  s.boxes.push_back({Vec3(-0.55, 0.05, 0.62) * depth, Vec3(-0.15, half_h / depth, 0.85) * depth,
                     random_texture(rng, 0.62)});
  s.spheres.push_back({Vec3(0.32, 0.12, 0.7) * depth, 0.16 * depth, random_texture(rng, 0.38)});
  s.spheres.push_back({Vec3(-0.05, -0.25, 0.82) * depth, 0.09 * depth, random_texture(rng, 0.66)});
  return s;
}

Rendering render_scene(const Scene& scene, const Se3Pose& world_from_camera,
                       const CameraIntrinsics& camera, const RenderOptions& opts) {
  camera.validate();
  const int w = camera.width;
  const int h = camera.height;
  const Mat3& r = world_from_camera.rotation();
  const Vec3& o = world_from_camera.translation();
  Rendering out;
  out.image = Image(w, h);
  out.depth.assign(static_cast<std::size_t>(w) * h, 0.0);
  const int ss = std::max(1, opts.supersample);
  std::mt19937 rng(opts.noise_seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const Vec3 center((x - camera.cx) / camera.fx, (y - camera.cy) / camera.fy, 1.0);
      // Unnormalized ray with unit camera-z: the hit parameter is the z-depth.
      if (const auto hit = intersect(scene, o, r * center)) {
        out.depth[static_cast<std::size_t>(y) * w + x] = hit->t;
      }
      double acc = 0.0;
      int n = 0;
      for (int sy = 0; sy < ss; ++sy) {
        for (int sx = 0; sx < ss; ++sx) {
          const double px = x + (sx + 0.5) / ss - 0.5;
          const double py = y + (sy + 0.5) / ss - 0.5;
          const Vec3 ray((px - camera.cx) / camera.fx, (py - camera.cy) / camera.fy, 1.0);
          if (const auto hit = intersect(scene, o, r * ray)) {
            acc += shade(scene, *hit);
            ++n;
          }
        }
      }
      double v = n > 0 ? acc / n : 0.0;
      v = opts.gain * v + opts.bias;
      if (opts.noise_sigma > 0.0) v += opts.noise_sigma * noise(rng);
      v = std::clamp(v, 0.0, 1.0);
      if (opts.quantize_8bit) {
        // Same mapping as the PNG loader so in-memory and on-disk fixtures agree bit for bit.
        v = static_cast<double>(std::lround(v * 255.0)) * (1.0 / 255.0);
      }
      out.image(x, y) = static_cast<float>(v);
    }
  }
  return out;
}

namespace {

std::vector<float> box_down(const std::vector<float>& src, int w, int h) {
  const int w2 = w / 2;
  const int h2 = h / 2;
  std::vector<float> dst(static_cast<std::size_t>(w2) * h2);
  for (int y = 0; y < h2; ++y) {
    for (int x = 0; x < w2; ++x) {
      const auto at = [&](int xx, int yy) { return static_cast<double>(src[static_cast<std::size_t>(yy) * w + xx]); };
      dst[static_cast<std::size_t>(y) * w2 + x] = static_cast<float>(
          0.25 * (at(2 * x, 2 * y) + at(2 * x + 1, 2 * y) + at(2 * x, 2 * y + 1) + at(2 * x + 1, 2 * y + 1)));
    }
  }
  return dst;
}

// Gradient magnitude normalized by its 95th percentile and clipped to [0, 1].
std::vector<double> edge_map(const std::vector<double>& v, int w, int h) {
  std::vector<double> e(v.size(), 0.0);
  auto at = [&](int x, int y) {
    x = std::clamp(x, 0, w - 1);
    y = std::clamp(y, 0, h - 1);
    return v[static_cast<std::size_t>(y) * w + x];
  };
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double gx = 0.5 * (at(x + 1, y) - at(x - 1, y));
      const double gy = 0.5 * (at(x, y + 1) - at(x, y - 1));
      e[static_cast<std::size_t>(y) * w + x] = std::hypot(gx, gy);
    }
  }
  std::vector<double> sorted = e;
  const std::size_t k = sorted.size() * 95 / 100;
  std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(k), sorted.end());
  const double scale = sorted[k] > 0.0 ? sorted[k] : 1.0;
  for (double& x : e) x = std::min(1.0, x / scale);
  return e;
}

std::vector<std::pair<int, int>> dct_modes(int count, int w, int h) {
  std::vector<std::pair<int, int>> modes;
  for (int s = 0; static_cast<int>(modes.size()) < count; ++s) {
    for (int ky = 0; ky <= s && static_cast<int>(modes.size()) < count; ++ky) {
      const int kx = s - ky;
      if (kx < w && ky < h) modes.emplace_back(kx, ky);
    }
    if (s > w + h) break;
  }
  return modes;
}

}  // namespace

FittedDecoder fit_dct_decoder(const Image& image, const std::vector<double>& depth,
                              const ProximityParams& params, const DecoderFitOptions& opts,
                              const std::string& source_id) {
  const int w = image.width();
  const int h = image.height();
  const std::size_t n = static_cast<std::size_t>(w) * h;
  if (depth.size() != n) throw Error(ErrorCode::DimensionMismatch, "depth and image sizes differ");
  if (opts.code_size < 1 || static_cast<std::size_t>(opts.code_size) > n) {
    throw Error(ErrorCode::InvalidArgument, "code size exceeds pixel count");
  }
  const int cs = opts.code_size;

  std::vector<double> gt(n);
  for (std::size_t i = 0; i < n; ++i) {
    gt[i] = depth[i] > 0.0 ? depth_to_proximity(depth[i], params) : kMinProximity;
  }
  // Edges of the smoothed image, themselves smoothed, so the basis varies on the scale of
  // image structures rather than pixel noise.
  std::vector<double> img_edges;
  {
    const Image blurred = gaussian_blur(image, 2.0);
    std::vector<double> bi(n);
    for (std::size_t i = 0; i < n; ++i) bi[i] = blurred[i];
    const std::vector<double> raw = edge_map(bi, w, h);
    Image e(w, h);
    for (std::size_t i = 0; i < n; ++i) e[i] = static_cast<float>(raw[i]);
    const Image es = gaussian_blur(e, 2.0);
    img_edges.resize(n);
    for (std::size_t i = 0; i < n; ++i) img_edges[i] = es[i];
  }
  const std::vector<double> depth_edges = edge_map(gt, w, h);

  // Pixel-major Jacobian: row i holds the cs basis values of pixel i.
  std::vector<double> basis(n * static_cast<std::size_t>(cs));
  const auto modes = dct_modes(cs, w, h);
  const double norm_base = opts.basis_scale;
  for (int k = 0; k < cs; ++k) {
    const auto [kx, ky] = modes[static_cast<std::size_t>(k)];
    const double nx = kx == 0 ? 1.0 : std::numbers::sqrt2;
    const double ny = ky == 0 ? 1.0 : std::numbers::sqrt2;
    for (int y = 0; y < h; ++y) {
      const double cy = std::cos(std::numbers::pi * (y + 0.5) * ky / h);
      for (int x = 0; x < w; ++x) {
        const double cx = std::cos(std::numbers::pi * (x + 0.5) * kx / w);
        const std::size_t i = static_cast<std::size_t>(y) * w + x;
        const double atten = 1.0 - opts.edge_attenuation * img_edges[i];
        basis[i * cs + static_cast<std::size_t>(k)] = norm_base * nx * ny * cx * cy * atten;
      }
    }
  }
  // Zero-code bias spread over low-frequency non-constant modes.
  std::mt19937 rng(opts.seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  Code c_bias = Code::Zero(cs);
  const int nb = std::min(opts.bias_modes, cs - 1);
  for (int k = 1; k <= nb; ++k) c_bias[k] = nd(rng);
  std::vector<double> offset(n, 0.0);
  auto apply = [&](const Code& c, std::vector<double>& out) {
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (int k = 0; k < cs; ++k) s += basis[i * cs + static_cast<std::size_t>(k)] * c[k];
      out[i] = s;
    }
  };
  if (nb > 0) {
    apply(c_bias, offset);
    double ss = 0.0;
    for (double v : offset) ss += v * v;
    const double rms = std::sqrt(ss / static_cast<double>(n));
    const double scale = rms > 0.0 ? opts.zero_code_rmse / rms : 0.0;
    c_bias *= scale;
    for (double& v : offset) v *= scale;
  }

  DecoderLevel l0;
  l0.width = w;
  l0.height = h;
  l0.mean_zero.resize(n);
  l0.uncertainty.resize(n);
  l0.jacobian.resize(n * static_cast<std::size_t>(cs));
  for (std::size_t i = 0; i < n; ++i) {
    // The float mean must reproduce the ground truth under the true code, so the offset is
    // removed in double before rounding.
    l0.mean_zero[i] = static_cast<float>(std::clamp(gt[i] + offset[i], kMinProximity, 1.0));
    l0.uncertainty[i] =
        static_cast<float>(opts.base_uncertainty * (1.0 + opts.edge_uncertainty_gain * depth_edges[i]));
  }
  for (std::size_t i = 0; i < basis.size(); ++i) l0.jacobian[i] = static_cast<float>(basis[i]);

  std::vector<DecoderLevel> levels{l0};
  for (int l = 1; l < kPyramidLevels; ++l) {
    const DecoderLevel& prev = levels.back();
    DecoderLevel next;
    next.width = prev.width / 2;
    next.height = prev.height / 2;
    next.mean_zero = box_down(prev.mean_zero, prev.width, prev.height);
    next.uncertainty = box_down(prev.uncertainty, prev.width, prev.height);
    const std::size_t np = static_cast<std::size_t>(next.width) * next.height;
    next.jacobian.resize(np * static_cast<std::size_t>(cs));
    for (int y = 0; y < next.height; ++y) {
      for (int x = 0; x < next.width; ++x) {
        const std::size_t dst = static_cast<std::size_t>(y) * next.width + x;
        for (int k = 0; k < cs; ++k) {
          double s = 0.0;
          for (int dy = 0; dy < 2; ++dy) {
            for (int dx = 0; dx < 2; ++dx) {
              const std::size_t src = static_cast<std::size_t>(2 * y + dy) * prev.width + (2 * x + dx);
              s += prev.jacobian[src * cs + static_cast<std::size_t>(k)];
            }
          }
          next.jacobian[dst * cs + static_cast<std::size_t>(k)] = static_cast<float>(0.25 * s);
        }
      }
    }
    levels.push_back(std::move(next));
  }

  FittedDecoder out{DecoderModel(cs, std::move(levels), source_id), -c_bias, 0.0, 0.0};
  out.model.validate(ErrorCode::InvalidArgument);
  ProximityGroundTruth g{w, h, Eigen::Map<const Eigen::VectorXd>(gt.data(), static_cast<Eigen::Index>(n)),
                         std::vector<std::uint8_t>(n, 0)};
  for (std::size_t i = 0; i < n; ++i) g.valid[i] = depth[i] > 0.0;
  out.fit_rmse = proximity_rmse(decode_proximity(out.model, out.true_code, 0).values, g);
  out.zero_code_rmse = proximity_rmse(decode_proximity(out.model, Code::Zero(cs), 0).values, g);
  return out;
}

Motion motion_from_string(const std::string& s) {
  if (s == "lateral") return Motion::Lateral;
  if (s == "forward") return Motion::Forward;
  if (s == "rotation-only") return Motion::RotationOnly;
  if (s == "loop") return Motion::Loop;
  if (s == "static") return Motion::Static;
  throw Error(ErrorCode::InvalidArgument, "unknown motion pattern '" + s + "'");
}

std::string to_string(Motion m) {
  switch (m) {
    case Motion::Lateral: return "lateral";
    case Motion::Forward: return "forward";
    case Motion::RotationOnly: return "rotation-only";
    case Motion::Loop: return "loop";
    case Motion::Static: return "static";
  }
  return "?";
}

CameraIntrinsics make_camera(int width, int height) {
  CameraIntrinsics c;
  c.width = width;
  c.height = height;
  c.fx = 0.5 * width / std::tan(35.0 * std::numbers::pi / 180.0);
  c.fy = c.fx;
  c.cx = 0.5 * width - 0.5;
  c.cy = 0.5 * height - 0.5;
  return c;
}

std::vector<Se3Pose> make_trajectory(Motion motion, int num_frames, double step, double scene_depth) {
  std::vector<Se3Pose> poses;
  for (int i = 0; i < num_frames; ++i) {
    switch (motion) {
      case Motion::Lateral:
        poses.emplace_back(Mat3::Identity(), Vec3(i * step * scene_depth, 0.0, 0.0));
        break;
      case Motion::Forward:
        poses.emplace_back(Mat3::Identity(), Vec3(0.0, 0.0, i * step * scene_depth));
        break;
      case Motion::RotationOnly: {
        const double yaw = i * step * std::numbers::pi / 180.0;
        poses.emplace_back(so3_exp(Vec3(0.0, yaw, 0.0)), Vec3::Zero());
        break;
      }
      case Motion::Loop: {
        // Horizontal circle through the origin with a gentle yaw oscillation.
        const double r = step * scene_depth;
        const double th = 2.0 * std::numbers::pi * i / num_frames;
        const Vec3 t(r * std::sin(th), 0.05 * r * std::sin(2.0 * th), r * (1.0 - std::cos(th)));
        const double yaw = 4.0 * std::numbers::pi / 180.0 * std::sin(th);
        poses.emplace_back(so3_exp(Vec3(0.0, yaw, 0.0)), t);
        break;
      }
      case Motion::Static:
        poses.emplace_back();
        break;
    }
  }
  return poses;
}

Fixture make_fixture(const FixtureOptions& opts) {
  if (!opts.poses && opts.num_frames < 1) throw Error(ErrorCode::InvalidArgument, "fixture needs frames");
  Fixture fx;
  fx.options = opts;
  fx.camera = make_camera(opts.width, opts.height);
  fx.proximity = opts.proximity;
  fx.scene = make_room_scene(opts.seed, opts.scene_depth);
  fx.scene.texture_contrast = opts.texture_contrast;
  const std::vector<Se3Pose> poses =
      opts.poses ? *opts.poses : make_trajectory(opts.motion, opts.num_frames, opts.step, opts.scene_depth);
  fx.options.num_frames = static_cast<int>(poses.size());
  for (int i = 0; i < fx.options.num_frames; ++i) {
    FixtureFrame f;
    f.id = i;
    f.timestamp = 0.1 * i;
    f.pose = poses[static_cast<std::size_t>(i)];
    RenderOptions ro = opts.render;
    ro.noise_seed = opts.render.noise_seed + static_cast<std::uint32_t>(i) * 7919u + opts.seed;
    Rendering r = render_scene(fx.scene, f.pose, fx.camera, ro);
    f.image = std::move(r.image);
    f.depth = std::move(r.depth);
    const std::size_t n = f.depth.size();
    f.ground_truth = {opts.width, opts.height, Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n)),
                      std::vector<std::uint8_t>(n, 0)};
    for (std::size_t p = 0; p < n; ++p) {
      if (f.depth[p] <= 0.0) continue;
      f.ground_truth.valid[p] = 1;
      f.ground_truth.proximity[static_cast<Eigen::Index>(p)] = depth_to_proximity(f.depth[p], fx.proximity);
    }
    const bool want = opts.all_decoders ||
                      std::find(opts.decoder_frames.begin(), opts.decoder_frames.end(), i) != opts.decoder_frames.end();
    if (want) {
      DecoderFitOptions d = opts.decoder;
      d.seed = opts.decoder.seed + static_cast<std::uint32_t>(i);
      f.decoder = fit_dct_decoder(f.image, f.depth, fx.proximity, d, "synthetic-dct-" + std::to_string(i));
    }
    fx.frames.push_back(std::move(f));
  }
  return fx;
}

std::shared_ptr<const ImagePyramid> Fixture::pyramid(int i) const {
  pyramids_.resize(frames.size());
  auto& p = pyramids_.at(static_cast<std::size_t>(i));
  if (!p) p = std::make_shared<const ImagePyramid>(ImagePyramid::build(frames.at(static_cast<std::size_t>(i)).image));
  return p;
}

std::shared_ptr<const DecoderModel> Fixture::decoder(int i) const {
  const FixtureFrame& f = frames.at(static_cast<std::size_t>(i));
  if (!f.decoder) throw Error(ErrorCode::InvalidArgument, "fixture frame has no decoder");
  decoders_.resize(frames.size());
  auto& d = decoders_.at(static_cast<std::size_t>(i));
  if (!d) d = std::make_shared<const DecoderModel>(f.decoder->model);
  return d;
}

Keyframe Fixture::keyframe(int i) const {
  Keyframe k;
  k.id = frames.at(static_cast<std::size_t>(i)).id;
  k.image = pyramid(i);
  k.decoder = decoder(i);
  k.code = Code::Zero(k.decoder->code_size());
  return k;
}

void emit_fixture(const Fixture& fx, const fs::path& outdir) {
  fs::create_directories(outdir / "images");
  fs::create_directories(outdir / "depth");
  fs::create_directories(outdir / "decoders");
  save_calibration({fx.camera, fx.proximity}, outdir / "calib.json");

  SequenceManifest m;
  m.calibration = outdir / "calib.json";
  std::map<int, Code> codes;
  nlohmann::json frames = nlohmann::json::array();
  std::ofstream ts(outdir / "images" / "timestamps.txt");
  for (const FixtureFrame& f : fx.frames) {
    char stem[32];
    std::snprintf(stem, sizeof(stem), "frame_%03d", f.id);
    ManifestFrame mf;
    mf.image = outdir / "images" / (std::string(stem) + ".png");
    mf.depth = outdir / "depth" / (std::string(stem) + ".png");
    mf.timestamp = f.timestamp;
    mf.ground_truth_pose = f.pose;
    save_image(f.image, mf.image);
    save_depth_png16(*mf.depth, fx.camera.width, fx.camera.height, f.depth);
    ts << f.timestamp << '\n';
    nlohmann::json info{{"id", f.id}};
    if (f.decoder) {
      mf.decoder = outdir / "decoders" / (std::string(stem) + ".csdm");
      save_decoder(f.decoder->model, *mf.decoder);
      codes[f.id] = f.decoder->true_code;
      info["fit_rmse"] = f.decoder->fit_rmse;
      info["zero_code_rmse"] = f.decoder->zero_code_rmse;
    }
    frames.push_back(info);
    m.frames.push_back(std::move(mf));
  }
  if (!ts) throw Error(ErrorCode::IoError, "cannot write timestamps.txt");
  save_manifest(m, outdir / "manifest.json");
  if (!codes.empty()) save_codes(codes, outdir / "gt_codes.bin");

  const FixtureOptions& o = fx.options;
  const nlohmann::json meta{{"width", o.width},
                            {"height", o.height},
                            {"frames", o.num_frames},
                            {"motion", to_string(o.motion)},
                            {"step", o.step},
                            {"scene_depth", o.scene_depth},
                            {"seed", o.seed},
                            {"code_size", o.decoder.code_size},
                            {"basis", "dct2d"},
                            {"zero_code_rmse_target", o.decoder.zero_code_rmse},
                            {"noise_sigma", o.render.noise_sigma},
                            {"per_frame", frames}};
  std::ofstream meta_out(outdir / "fixture.json");
  meta_out << meta.dump(2) << '\n';
  if (!meta_out) throw Error(ErrorCode::IoError, "cannot write fixture.json");
}

}  // namespace codesfm::synth
