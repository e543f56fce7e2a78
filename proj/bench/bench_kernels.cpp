// Serial reference kernels against their OpenMP counterparts.
#include <benchmark/benchmark.h>
#include <omp.h>

#include <random>

#include "gazediff/conditioning.hpp"
#include "gazediff/metrics.hpp"
#include "gazediff/training.hpp"

using namespace gazediff;

namespace {

VideoEvaluation make_video(std::size_t gt, std::size_t gen, std::size_t len) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  VideoEvaluation v;
  v.meta = {"bench", 1280, 720, 30.0, static_cast<int>(len)};
  auto path = [&] {
    std::vector<Point2> p(len);
    for (auto& q : p) q = {u(rng), u(rng)};
    return p;
  };
  for (std::size_t i = 0; i < gt; ++i) v.gt.push_back(path());
  for (std::size_t i = 0; i < gen; ++i) v.generated.push_back(path());
  return v;
}

void BM_PairwiseSerial(benchmark::State& state) {
  const auto v = make_video(4, 10, static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(reference::pairwise_scores_serial(v, MetricConfig{}));
}

void BM_PairwiseParallel(benchmark::State& state) {
  const auto v = make_video(4, 10, static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(pairwise_scores(v, MetricConfig{}));
}

SaliencyClip make_clip() {
  SynthSceneSpec spec;
  spec.blob_count = 2;
  spec.duration_s = 20.0;
  spec.height = 64;
  spec.width = 64;
  return synth_scene(spec);
}

void BM_PoolSerial(benchmark::State& state) {
  const auto clip = make_clip();
  for (auto _ : state) benchmark::DoNotOptimize(reference::pool_compress_serial(clip, {4, 4}));
}

void BM_PoolParallel(benchmark::State& state) {
  const auto clip = make_clip();
  for (auto _ : state) benchmark::DoNotOptimize(pool_compress(clip, {4, 4}));
}

struct GradFixture {
  DenoiserConfig cfg;
  std::unique_ptr<Denoiser> model;
  std::vector<TrainingWindow> windows;
  std::vector<BatchItem> batch;
  NoiseSchedule sched = linear_beta_schedule(1000, 1e-4, 2e-2);

  GradFixture() {
    cfg.base_width = 16;
    cfg.window_len = 135;
    model = std::make_unique<Denoiser>(cfg, 1);
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    windows.resize(8);
    for (auto& w : windows) {
      w.coords.resize(cfg.window_len);
      for (auto& p : w.coords) p = {u(rng), u(rng)};
      for (int s = 0; s < 27; ++s)
        for (int c = 0; c < 16; ++c) w.tokens.push_back({u(rng), (c / 4 + 0.5) / 4, (c % 4 + 0.5) / 4, s / 27.0});
    }
    TrainConfig tc;
    for (std::size_t i = 0; i < windows.size(); ++i)
      batch.push_back({&windows[i], draw_example(tc, cfg.window_len, 1000, 0, i)});
  }
};

void BM_BatchGradientSerial(benchmark::State& state) {
  GradFixture f;
  auto g = f.model->params().zero_gradients();
  for (auto _ : state) benchmark::DoNotOptimize(reference::batch_gradient_serial(*f.model, f.batch, f.sched, g));
}

void BM_BatchGradientParallel(benchmark::State& state) {
  GradFixture f;
  auto g = f.model->params().zero_gradients();
  for (auto _ : state) benchmark::DoNotOptimize(batch_gradient(*f.model, f.batch, f.sched, g));
}

}  // namespace

BENCHMARK(BM_PairwiseSerial)->Arg(150)->Arg(300)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_PairwiseParallel)->Arg(150)->Arg(300)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_PoolSerial)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_PoolParallel)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_BatchGradientSerial)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_BatchGradientParallel)->Unit(benchmark::kMillisecond);

int main(int argc, char** argv) {
  benchmark::Initialize(&argc, argv);
  benchmark::AddCustomContext("omp_max_threads", std::to_string(omp_get_max_threads()));
  benchmark::RunSpecifiedBenchmarks();
  benchmark::Shutdown();
  return 0;
}
