#include "codesfm/decoder.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "binary_io.hpp"

namespace codesfm {

namespace {

constexpr char kMagic[4] = {'C', 'S', 'D', 'M'};
constexpr std::uint32_t kVersion = 1;
// Guards allocations when reading corrupt headers.
constexpr std::uint32_t kMaxDimension = 1 << 14;
constexpr std::uint32_t kMaxCodeSize = 1 << 12;

}  // namespace

DecoderModel::DecoderModel(int code_size, std::vector<DecoderLevel> levels, std::string source_id)
    : code_size_(code_size), levels_(std::move(levels)), source_id_(std::move(source_id)) {
  if (code_size_ <= 0) throw Error(ErrorCode::InvalidArgument, "code_size must be positive");
  for (const DecoderLevel& lv : levels_) {
    const std::size_t n = lv.num_pixels();
    if (lv.mean_zero.size() != n || lv.uncertainty.size() != n ||
        lv.jacobian.size() != n * static_cast<std::size_t>(code_size_)) {
      throw Error(ErrorCode::DimensionMismatch, "decoder level buffers do not match its shape");
    }
  }
}

const DecoderLevel& DecoderModel::level(int l) const {
  if (l < 0 || l >= num_levels()) {
    throw Error(ErrorCode::LevelOutOfRange, "decoder level " + std::to_string(l));
  }
  return levels_[l];
}

void DecoderModel::validate(ErrorCode code) const {
  if (code_size_ <= 0) throw Error(code, "code_size must be positive");
  if (levels_.size() != 4) throw Error(code, "decoder must have exactly 4 levels");
  for (std::size_t l = 0; l < levels_.size(); ++l) {
    const DecoderLevel& lv = levels_[l];
    if (lv.width <= 0 || lv.height <= 0) throw Error(code, "empty decoder level");
    if (l > 0 && (lv.width != levels_[l - 1].width / 2 || lv.height != levels_[l - 1].height / 2)) {
      throw Error(code, "decoder levels must halve in resolution");
    }
    const std::size_t n = lv.num_pixels();
    if (lv.mean_zero.size() != n || lv.uncertainty.size() != n ||
        lv.jacobian.size() != n * static_cast<std::size_t>(code_size_)) {
      throw Error(code, "decoder level buffers do not match its shape");
    }
    for (std::size_t i = 0; i < n; ++i) {
      if (!(lv.mean_zero[i] > 0.0f && lv.mean_zero[i] <= 1.0f)) {
        throw Error(code, "mean_zero outside (0, 1]");
      }
      if (!(lv.uncertainty[i] > 0.0f) || !std::isfinite(lv.uncertainty[i])) {
        throw Error(code, "uncertainty must be positive");
      }
    }
    if (!std::all_of(lv.jacobian.begin(), lv.jacobian.end(),
                     [](float v) { return std::isfinite(v); })) {
      throw Error(code, "non-finite Jacobian entry");
    }
  }
}

ProximityMap decode_proximity(const DecoderModel& model, const Code& code, int level) {
  if (code.size() != model.code_size()) {
    throw Error(ErrorCode::CodeSizeMismatch, "code has " + std::to_string(code.size()) +
                                                 " entries, decoder expects " +
                                                 std::to_string(model.code_size()));
  }
  const DecoderLevel& lv = model.level(level);
  const std::size_t n = lv.num_pixels();
  const int cs = model.code_size();
  const bool zero = code.isZero(0.0);

  ProximityMap out;
  out.width = lv.width;
  out.height = lv.height;
  out.values.resize(static_cast<Eigen::Index>(n));
  out.clamped.assign(n, 0);
  const double* c = code.data();
  for (std::size_t i = 0; i < n; ++i) {
    double p = lv.mean_zero[i];
    if (!zero) {
      const float* row = lv.jacobian.data() + i * cs;
      double acc = 0.0;
      for (int k = 0; k < cs; ++k) acc += static_cast<double>(row[k]) * c[k];
      p += acc;
    }
    if (p < kMinProximity) {
      p = kMinProximity;
      out.clamped[i] = 1;
    } else if (p > 1.0) {
      p = 1.0;
      out.clamped[i] = 1;
    }
    out.values[static_cast<Eigen::Index>(i)] = p;
  }
  return out;
}

Eigen::VectorXd decode_depth(const DecoderModel& model, const Code& code, int level,
                             const ProximityParams& params) {
  const ProximityMap prox = decode_proximity(model, code, level);
  Eigen::VectorXd depth(prox.values.size());
  for (Eigen::Index i = 0; i < depth.size(); ++i) {
    depth[i] = proximity_to_depth(prox.values[i], params);
  }
  return depth;
}

JacobianView code_jacobian(const DecoderModel& model, int level) {
  const DecoderLevel& lv = model.level(level);
  return JacobianView(lv.jacobian.data(), static_cast<Eigen::Index>(lv.num_pixels()),
                      model.code_size());
}

void save_decoder(const DecoderModel& model, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error(ErrorCode::IoError, "cannot open " + path.string() + " for writing");
  os.write(kMagic, 4);
  detail::write_u32(os, kVersion);
  detail::write_u32(os, static_cast<std::uint32_t>(model.code_size()));
  detail::write_u32(os, static_cast<std::uint32_t>(model.num_levels()));
  for (int l = 0; l < model.num_levels(); ++l) {
    const DecoderLevel& lv = model.level(l);
    detail::write_u32(os, static_cast<std::uint32_t>(lv.width));
    detail::write_u32(os, static_cast<std::uint32_t>(lv.height));
    detail::write_f32_array(os, lv.mean_zero);
    detail::write_f32_array(os, lv.uncertainty);
    detail::write_f32_array(os, lv.jacobian);
  }
  detail::write_u32(os, static_cast<std::uint32_t>(model.source_id().size()));
  os.write(model.source_id().data(), static_cast<std::streamsize>(model.source_id().size()));
  if (!os) throw Error(ErrorCode::IoError, "write failed for " + path.string());
}

DecoderModel load_decoder(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  detail::Reader rd(is, path.string());

  char magic[4];
  rd.read_bytes(magic, 4);
  if (!std::equal(magic, magic + 4, kMagic)) rd.fail("bad magic");
  if (rd.u32() != kVersion) rd.fail("unsupported version");
  const std::uint32_t code_size = rd.u32();
  const std::uint32_t n_levels = rd.u32();
  if (code_size == 0 || code_size > kMaxCodeSize) rd.fail("implausible code_size");
  if (n_levels != 4) rd.fail("expected 4 levels");

  std::vector<DecoderLevel> levels(n_levels);
  for (std::uint32_t l = 0; l < n_levels; ++l) {
    DecoderLevel& lv = levels[l];
    const std::uint32_t w = rd.u32();
    const std::uint32_t h = rd.u32();
    if (w == 0 || h == 0 || w > kMaxDimension || h > kMaxDimension) rd.fail("implausible level size");
    if (l > 0 && (w != static_cast<std::uint32_t>(levels[l - 1].width) / 2 ||
                  h != static_cast<std::uint32_t>(levels[l - 1].height) / 2)) {
      rd.fail("level shape mismatch");
    }
    lv.width = static_cast<int>(w);
    lv.height = static_cast<int>(h);
    const std::size_t n = lv.num_pixels();
    lv.mean_zero = rd.f32_array(n);
    lv.uncertainty = rd.f32_array(n);
    lv.jacobian = rd.f32_array(n * code_size);
  }
  const std::uint32_t id_len = rd.u32();
  if (id_len > (1u << 20)) rd.fail("implausible source_id length");
  std::string source_id(id_len, '\0');
  if (id_len > 0) rd.read_bytes(source_id.data(), id_len);
  if (!rd.at_end()) rd.fail("trailing bytes after footer");

  DecoderModel model(static_cast<int>(code_size), std::move(levels), std::move(source_id));
  model.validate(ErrorCode::FormatError);
  return model;
}

}  // namespace codesfm
