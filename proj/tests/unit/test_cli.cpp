#include <fstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "cli.hpp"
#include "codesfm/decoder.hpp"
#include "codesfm/io.hpp"
#include "test_util.hpp"

namespace codesfm {
namespace {

namespace fs = std::filesystem;
const fs::path kFixture = fs::path(CODESFM_FIXTURE_DIR) / "two_frame";

int run(std::vector<std::string> args) {
  args.insert(args.begin(), "code-sfm");
  std::vector<const char*> argv;
  for (const std::string& a : args) argv.push_back(a.c_str());
  return cli_main(static_cast<int>(argv.size()), argv.data());
}

TEST(Cli, UsageErrors) {
  EXPECT_EQ(run({}), 1);
  EXPECT_EQ(run({"frobnicate"}), 1);
  EXPECT_EQ(run({"decode"}), 1);
  EXPECT_EQ(run({"--help"}), 0);
}

TEST(Cli, MissingInputIsDataError) {
  test::TempDir dir;
  EXPECT_EQ(run({"decode", "--decoder", (dir / "none.csdm").string()}), 2);
}

TEST(Cli, DecodeZeroCodeIsMean) {
  test::TempDir dir;
  const fs::path dec = kFixture / "decoders" / "frame_000.csdm";
  ASSERT_EQ(run({"decode", "--decoder", dec.string(), "--level", "1", "--out", (dir / "p.png").string(),
                 "--depth-out", (dir / "d.png").string()}),
            0);
  const DecoderModel m = load_decoder(dec);
  const PngData png = read_png(dir / "p.png");
  ASSERT_EQ(png.width, m.level(1).width);
  ASSERT_EQ(png.height, m.level(1).height);
  for (std::size_t i = 0; i < png.samples.size(); ++i) {
    ASSERT_EQ(png.samples[i], std::lround(m.level(1).mean_zero[i] * 65535.0)) << i;
  }
  EXPECT_EQ(read_png(dir / "d.png").bit_depth, 16);
}

TEST(Cli, DecodeWithCodeFile) {
  test::TempDir dir;
  const fs::path dec = kFixture / "decoders" / "frame_001.csdm";
  const auto codes = load_codes(kFixture / "gt_codes.bin");
  ASSERT_TRUE(codes.count(1));
  ASSERT_EQ(run({"decode", "--decoder", dec.string(), "--codes", (kFixture / "gt_codes.bin").string(),
                 "--id", "1", "--out", (dir / "p.png").string()}),
            0);
  const ProximityMap p = decode_proximity(load_decoder(dec), codes.at(1), 0);
  const PngData png = read_png(dir / "p.png");
  for (std::size_t i = 0; i < png.samples.size(); ++i) {
    ASSERT_EQ(png.samples[i], std::lround(p.values[static_cast<Eigen::Index>(i)] * 65535.0));
  }
}

TEST(Cli, CheckJacobiansPassesOnFixture) {
  test::TempDir dir;
  ASSERT_EQ(run({"check-jacobians", "--frames", (kFixture / "manifest.json").string(), "--level", "1",
                 "--json", (dir / "report.json").string()}),
            0);
  const nlohmann::json j = nlohmann::json::parse(std::ifstream(dir / "report.json"));
  EXPECT_FALSE(j.empty());
}

TEST(Cli, SfmWritesPosesAndCodes) {
  test::TempDir dir;
  ASSERT_EQ(run({"sfm", "--frames", (kFixture / "manifest.json").string(), "--out", dir.path().string(),
                 "--iters", "6", "--ply"}),
            0);
  const auto poses = load_poses(dir / "poses.json");
  const auto codes = load_codes(dir / "codes.bin");
  EXPECT_EQ(poses.size(), 2u);
  EXPECT_EQ(codes.size(), 2u);
  EXPECT_TRUE(fs::exists(dir / "reconstruction.ply"));
}

TEST(Cli, TrackWritesOnePosePerFrame) {
  test::TempDir dir;
  ASSERT_EQ(run({"track", "--sequence", (kFixture / "manifest.json").string(), "--codes",
                 (kFixture / "gt_codes.bin").string(), "--out", (dir / "poses.json").string()}),
            0);
  const auto poses = load_poses(dir / "poses.json");
  ASSERT_EQ(poses.size(), 2u);
  EXPECT_LT(poses[0].pose.translation().norm(), 1e-6);
}

}  // namespace
}  // namespace codesfm
