// Serial reference vs OpenMP kernels on 320x240 synthetic frames.
// Argument 0 runs serially, 1 in parallel.

#include <benchmark/benchmark.h>

#include "d3vo/backend.hpp"
#include "d3vo/frontend.hpp"
#include "d3vo/imaging.hpp"
#include "d3vo/selfsup.hpp"
#include "d3vo/synth.hpp"

namespace {

using namespace d3vo;

Exec exec_of(const benchmark::State& state) { return state.range(0) == 0 ? Exec::Serial : Exec::Parallel; }

struct Data {
  Intrinsics intrinsics;
  Scene scene = make_room_scene(1);
  std::vector<Se3> poses = desk_trajectory(4, 1);
  std::vector<Rendering> frames;

  Data() {
    intrinsics.fx = intrinsics.fy = 265.0;
    intrinsics.cx = 159.5;
    intrinsics.cy = 119.5;
    intrinsics.width = 320;
    intrinsics.height = 240;
    for (const Se3& p : poses) frames.push_back(render(scene, p, intrinsics, {}, Exec::Parallel));
  }
};

const Data& data() {
  static const Data d;
  return d;
}

void BM_SsimMap(benchmark::State& state) {
  const Data& d = data();
  for (auto _ : state) {
    benchmark::DoNotOptimize(ssim_map(d.frames[0].image.raster(), d.frames[1].image.raster(), exec_of(state)));
  }
}

void BM_Render(benchmark::State& state) {
  const Data& d = data();
  for (auto _ : state) benchmark::DoNotOptimize(render(d.scene, d.poses[1], d.intrinsics, {}, exec_of(state)));
}

void BM_Warp(benchmark::State& state) {
  const Data& d = data();
  const Se3 rel = d.poses[1] * d.poses[0].inverse();
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        warp_source_to_target(d.frames[1].image.raster(), d.frames[0].depth, rel, d.intrinsics, exec_of(state)));
  }
}

void BM_AlignDirect(benchmark::State& state) {
  const Data& d = data();
  const Pyramid ref(d.frames[0].image, 4);
  const Pyramid cur(d.frames[1].image, 4);
  const ReferenceView view{ref, d.frames[0].depth};
  for (auto _ : state) {
    benchmark::DoNotOptimize(align_direct(cur, view, d.intrinsics, {}, std::nullopt, {}, exec_of(state)));
  }
}

void BM_WindowEnergy(benchmark::State& state) {
  const Data& d = data();
  Window w(BackendConfig(), d.intrinsics, exec_of(state));
  for (std::size_t k = 0; k < d.frames.size(); ++k) {
    FrameBundle b;
    b.image = d.frames[k].image;
    b.depth = d.frames[k].depth;
    b.uncertainty = UncertaintyMap(Raster(320, 240, 0.05));
    w.add_keyframe(b, {d.poses[k], 0.0, 0.0}, std::nullopt, static_cast<int>(k));
  }
  for (auto _ : state) benchmark::DoNotOptimize(w.energy_total());
}

void BM_WindowOptimize(benchmark::State& state) {
  const Data& d = data();
  for (auto _ : state) {
    state.PauseTiming();
    Window w(BackendConfig(), d.intrinsics, exec_of(state));
    for (std::size_t k = 0; k < d.frames.size(); ++k) {
      FrameBundle b;
      b.image = d.frames[k].image;
      b.depth = d.frames[k].depth;
      b.uncertainty = UncertaintyMap(Raster(320, 240, 0.05));
      const Se3 nudged = k == 0 ? d.poses[k] : se3_exp(Vec6::Constant(0.002)) * d.poses[k];
      w.add_keyframe(b, {nudged, 0.0, 0.0}, std::nullopt, static_cast<int>(k));
    }
    state.ResumeTiming();
    benchmark::DoNotOptimize(w.optimize());
  }
}

BENCHMARK(BM_SsimMap)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Render)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Warp)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_AlignDirect)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_WindowEnergy)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_WindowOptimize)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
