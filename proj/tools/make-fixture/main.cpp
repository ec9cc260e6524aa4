// Renders a synthetic fixture (images, depth, decoders, poses) to a directory.

#include <cstdio>
#include <iostream>

#include <CLI11.hpp>

#include "codesfm/error.hpp"
#include "codesfm/synth/synth.hpp"

int main(int argc, char** argv) {
  using namespace codesfm;
  CLI::App app{"Synthetic fixture generator", "make-fixture"};
  std::string out, motion = "lateral";
  synth::FixtureOptions o;
  o.decoder.code_size = 32;
  app.add_option("--out", out, "output directory")->required();
  app.add_option("--frames", o.num_frames, "number of frames");
  app.add_option("--motion", motion, "lateral | forward | rotation-only | loop | static");
  app.add_option("--step", o.step, "per-frame step (fraction of scene depth, or degrees)");
  app.add_option("--width", o.width, "image width");
  app.add_option("--height", o.height, "image height");
  app.add_option("--code-size", o.decoder.code_size, "decoder code size");
  app.add_option("--zero-code-rmse", o.decoder.zero_code_rmse, "proximity RMSE of the zero-code prediction");
  app.add_option("--noise", o.render.noise_sigma, "image noise standard deviation");
  app.add_option("--edge-attenuation", o.decoder.edge_attenuation, "basis attenuation at intensity edges");
  app.add_option("--seed", o.seed, "scene seed");
  CLI11_PARSE(app, argc, argv);
  try {
    o.motion = synth::motion_from_string(motion);
    const synth::Fixture fx = synth::make_fixture(o);
    synth::emit_fixture(fx, out);
    for (const auto& f : fx.frames) {
      if (f.decoder) {
        std::printf("frame %d: fit rmse %.3e, zero-code rmse %.4f\n", f.id, f.decoder->fit_rmse,
                    f.decoder->zero_code_rmse);
      }
    }
  } catch (const Error& e) {
    std::cerr << "error [" << to_string(e.code()) << "]: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
