#include <benchmark/benchmark.h>

#include "codesfm/sfm.hpp"
#include "codesfm/solver.hpp"
#include "codesfm/synth/synth.hpp"
#include "codesfm/tracker.hpp"
#include "codesfm/warp.hpp"

namespace {

using namespace codesfm;

const synth::Fixture& fixture() {
  static const synth::Fixture fx = [] {
    synth::FixtureOptions o;
    o.width = 128;
    o.height = 96;
    o.num_frames = 2;
    o.step = 0.04;
    o.decoder.code_size = 32;
    return synth::make_fixture(o);
  }();
  return fx;
}

struct Views {
  Code ca, cb;
  FrameView a, b;
  Views() {
    const auto& fx = fixture();
    ca = fx.frames[0].decoder->true_code;
    cb = fx.frames[1].decoder->true_code;
    a = {fx.pyramid(0).get(), fx.decoder(0).get(), &ca, fx.frames[0].pose};
    b = {fx.pyramid(1).get(), fx.decoder(1).get(), &cb, fx.frames[1].pose};
  }
};

void BM_PhotometricResidual(benchmark::State& state) {
  const auto& fx = fixture();
  Views v;
  const int level = static_cast<int>(state.range(0));
  const DecodedLevel da = decode_level(*v.a.decoder, v.ca, level, fx.camera, fx.proximity);
  const DecodedLevel db = decode_level(*v.b.decoder, v.cb, level, fx.camera, fx.proximity);
  ResidualBlock blk;
  for (auto _ : state) {
    photometric_residual_into(blk, v.a, v.b, level, fx.camera, fx.proximity, {}, &da, &db);
    benchmark::DoNotOptimize(blk.residuals.data());
  }
}
BENCHMARK(BM_PhotometricResidual)->Arg(0)->Arg(2)->Unit(benchmark::kMicrosecond);

void BM_GeometricResidual(benchmark::State& state) {
  const auto& fx = fixture();
  Views v;
  const int level = static_cast<int>(state.range(0));
  const DecodedLevel da = decode_level(*v.a.decoder, v.ca, level, fx.camera, fx.proximity);
  const DecodedLevel db = decode_level(*v.b.decoder, v.cb, level, fx.camera, fx.proximity);
  ResidualBlock blk;
  for (auto _ : state) {
    geometric_residual_into(blk, v.a, v.b, level, fx.camera, fx.proximity, {}, &da, &db);
    benchmark::DoNotOptimize(blk.residuals.data());
  }
}
BENCHMARK(BM_GeometricResidual)->Arg(0)->Arg(2)->Unit(benchmark::kMicrosecond);

struct Problem {
  std::vector<ProblemFrame> frames;
  std::unique_ptr<JointProblem> problem;
  VariableState state;
  explicit Problem(std::vector<int> levels) {
    const auto& fx = fixture();
    frames = {{0, fx.pyramid(0).get(), fx.decoder(0).get(), true, false},
              {1, fx.pyramid(1).get(), fx.decoder(1).get(), false, false}};
    JointProblemOptions o;
    o.camera = fx.camera;
    o.proximity = fx.proximity;
    o.levels = std::move(levels);
    o.num_threads = 1;
    problem = std::make_unique<JointProblem>(frames, build_full_pairs(std::vector<int>{0, 1}), o);
    const int cs = fx.decoder(0)->code_size();
    state = problem->make_state({{0, Se3Pose()}, {1, Se3Pose()}},
                                {{0, Code::Zero(cs)}, {1, Code::Zero(cs)}});
  }
};

void BM_Linearize(benchmark::State& state) {
  Problem p({static_cast<int>(state.range(0))});
  for (auto _ : state) {
    NormalEquations ne = p.problem->linearize(p.state);
    benchmark::DoNotOptimize(ne.H.data());
  }
}
BENCHMARK(BM_Linearize)->Arg(0)->Arg(1)->Arg(3)->Unit(benchmark::kMillisecond);

void BM_Cost(benchmark::State& state) {
  Problem p({0, 1, 2, 3});
  for (auto _ : state) benchmark::DoNotOptimize(p.problem->cost(p.state));
}
BENCHMARK(BM_Cost)->Unit(benchmark::kMillisecond);

// One damped Gauss-Newton iteration of the two-frame problem over the full pyramid.
void BM_SfmIteration(benchmark::State& state) {
  Problem p({0, 1, 2, 3});
  OptimizerOptions o;
  o.max_iters = 1;
  for (auto _ : state) {
    VariableState s = p.state;
    benchmark::DoNotOptimize(optimize(*p.problem, s, o).iterations);
  }
}
BENCHMARK(BM_SfmIteration)->Unit(benchmark::kMillisecond);

void BM_Track(benchmark::State& state) {
  const auto& fx = fixture();
  Keyframe kf = fx.keyframe(0);
  kf.code = fx.frames[0].decoder->true_code;
  for (auto _ : state) {
    const TrackingState t = track(*fx.pyramid(1), kf, Se3Pose(), fx.camera, fx.proximity);
    benchmark::DoNotOptimize(t.final_cost);
  }
}
BENCHMARK(BM_Track)->Unit(benchmark::kMillisecond);

void BM_Marginalize(benchmark::State& state) {
  Problem p({2});
  const NormalEquations ne = p.problem->linearize(p.state);
  const std::vector<VarId> drop{JointProblem::code_var(0)};
  for (auto _ : state) {
    LinearPrior prior = marginalize(ne, drop, p.state);
    benchmark::DoNotOptimize(prior.H.data());
  }
}
BENCHMARK(BM_Marginalize)->Unit(benchmark::kMicrosecond);

}  // namespace
BENCHMARK_MAIN();
