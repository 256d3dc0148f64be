#include <benchmark/benchmark.h>

#include "malt/maskgit.hpp"
#include "malt/nn_util.hpp"
#include "malt/temporal.hpp"

namespace {

// Full-scale shapes: 4x4x32 latent tokens, 256-wide spatial predictor,
// 512-wide temporal model with a 64-token context.
malt::RunConfig paper_cfg() {
  malt::RunConfig cfg;
  cfg.apply_preset("paper");
  return cfg;
}

void bm_sample_categorical(benchmark::State& state) {
  auto gen = malt::make_generator(0);
  auto probs = torch::softmax(torch::randn({16, 512, 32}, gen), -1);
  for (auto _ : state) {
    auto s = malt::sample_categorical(probs, gen);
    benchmark::DoNotOptimize(s.data_ptr());
  }
}
BENCHMARK(bm_sample_categorical);

// Parallel decoding of one latent frame; the argument is the schedule length.
void bm_scheduled_decode(benchmark::State& state) {
  torch::NoGradGuard ng;
  torch::manual_seed(1);
  auto cfg = paper_cfg();
  malt::MaskGIT mg(cfg);
  mg->eval();
  auto gen = malt::make_generator(2);
  auto h = torch::randn({1, cfg.tt_width}, gen);
  auto remask = malt::remask_schedule(state.range(0), mg->total_tokens_);
  for (auto _ : state) {
    auto z = mg->scheduled_decode(h, remask, gen);
    benchmark::DoNotOptimize(z.data_ptr());
  }
}
BENCHMARK(bm_scheduled_decode)->Arg(1)->Arg(3)->Arg(8);

// One predictor pass per token: the autoregressive baseline.
void bm_sequential_decode(benchmark::State& state) {
  torch::NoGradGuard ng;
  torch::manual_seed(1);
  auto cfg = paper_cfg();
  malt::MaskGIT mg(cfg);
  mg->eval();
  auto gen = malt::make_generator(2);
  auto h = torch::randn({1, cfg.tt_width}, gen);
  auto remask = malt::sequential_remask_schedule(mg->total_tokens_);
  for (auto _ : state) {
    auto z = mg->scheduled_decode(h, remask, gen);
    benchmark::DoNotOptimize(z.data_ptr());
  }
}
BENCHMARK(bm_sequential_decode);

// The dynamics linear head alone: the zero-pass decoding floor.
void bm_dynamics_linear(benchmark::State& state) {
  torch::NoGradGuard ng;
  torch::manual_seed(1);
  auto cfg = paper_cfg();
  malt::MaskGIT mg(cfg);
  mg->eval();
  auto gen = malt::make_generator(2);
  auto h = torch::randn({1, cfg.tt_width}, gen);
  for (auto _ : state) {
    auto logits = mg->dynamics_logits(h);
    benchmark::DoNotOptimize(logits.data_ptr());
  }
}
BENCHMARK(bm_dynamics_linear);

// One temporal-transformer step with a warm rolling cache (imagination pace).
void bm_temporal_step(benchmark::State& state) {
  torch::NoGradGuard ng;
  torch::manual_seed(1);
  auto cfg = paper_cfg();
  malt::TemporalModel tm(cfg, 17);
  tm->eval();
  auto gen = malt::make_generator(3);
  int64_t lanes = state.range(0);
  auto cache = tm->make_cache(int(lanes));
  auto e = torch::randn({lanes, 1, cfg.tt_width}, gen);
  auto first = torch::zeros({lanes, 1}, torch::kBool);
  first.fill_(true);
  tm->forward_temporal(e, cache, first, false, gen);
  first.fill_(false);
  for (int i = 0; i < cfg.ctx_len; ++i) tm->forward_temporal(e, cache, first, false, gen);
  for (auto _ : state) {
    auto out = tm->forward_temporal(e, cache, first, false, gen);
    benchmark::DoNotOptimize(out.data_ptr());
  }
}
BENCHMARK(bm_temporal_step)->Arg(1)->Arg(16);

}  // namespace

BENCHMARK_MAIN();
