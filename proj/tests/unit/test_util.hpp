#pragma once
#include <atomic>
#include <filesystem>
#include <random>
#include <string>

#include <gtest/gtest.h>

#include "codesfm/synth/synth.hpp"

namespace codesfm::test {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    std::string name = "codesfm_";
    if (info) name += std::string(info->test_suite_name()) + "_" + info->name();
    name += "_" + std::to_string(counter++);
    path_ = std::filesystem::temp_directory_path() / name;
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

 private:
  std::filesystem::path path_;
};

/// 64x48 lateral pair with 16-dimensional decoders; built once per process.
inline const synth::Fixture& small_fixture() {
  static const synth::Fixture fx = [] {
    synth::FixtureOptions o;
    o.width = 64;
    o.height = 48;
    o.num_frames = 2;
    o.step = 0.04;
    o.decoder.code_size = 16;
    o.render.supersample = 2;
    return synth::make_fixture(o);
  }();
  return fx;
}

inline Vec6 random_twist(std::mt19937& rng, double scale) {
  std::normal_distribution<double> n(0.0, scale);
  Vec6 v;
  for (int i = 0; i < 6; ++i) v[i] = n(rng);
  return v;
}

}  // namespace codesfm::test
