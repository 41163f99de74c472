#include <benchmark/benchmark.h>

#include "maskfocus/model.hpp"
#include "maskfocus/pretrain.hpp"
#include "maskfocus/sampler.hpp"
#include "maskfocus/synthworld.hpp"

using namespace maskfocus;

namespace {

model::ModelConfig bench_model(int width) {
    model::ModelConfig cfg;
    cfg.width = width;
    return cfg;
}

void BM_Forward(benchmark::State& state) {
    const auto params = model::ModelParams<float>::initialized(bench_model(static_cast<int>(state.range(0))), 1);
    world::WorldConfig wc;
    const auto prompt = world::encode_prompt(wc, {world::Task::Counting, 2, 0, 3, world::Quadrant::NW});
    TokenGrid grid = world::generate_scene(wc, {world::Task::Counting, 2, 0, 3, world::Quadrant::NW}, 5);
    for (auto _ : state) {
        auto out = model::forward(params, prompt, grid, true);
        benchmark::DoNotOptimize(out.logits.data());
    }
}
BENCHMARK(BM_Forward)->Arg(32)->Arg(48)->Arg(64)->Unit(benchmark::kMicrosecond);

void BM_LikelihoodWithGrad(benchmark::State& state) {
    const auto params = model::ModelParams<float>::initialized(bench_model(static_cast<int>(state.range(0))), 1);
    world::WorldConfig wc;
    const world::PromptSpec spec{world::Task::Position, 3, 0, 0, world::Quadrant::SE};
    model::MaskedCompletion c{world::encode_prompt(wc, spec), world::generate_scene(wc, spec, 2)};
    for (int p = 0; p < c.grid.size(); p += 2) c.grid.mask[static_cast<std::size_t>(p)] = 1;
    const model::PolicyOptions opts{5.0, true, 1.0};
    model::ModelParams<float> grads(params.config());
    for (auto _ : state) {
        model::LikelihoodTape<float> tape;
        const auto lik = model::masked_log_likelihood(params, c, opts, &tape);
        const std::vector<float> up(lik.per_token.size(), 1.0f);
        model::masked_log_likelihood_backward(params, tape, std::span<const float>(up), grads);
        benchmark::DoNotOptimize(grads.values().data());
    }
}
BENCHMARK(BM_LikelihoodWithGrad)->Arg(32)->Arg(64)->Unit(benchmark::kMicrosecond);

void BM_RolloutGroup(benchmark::State& state) {
    const auto params = model::ModelParams<float>::initialized(bench_model(64), 1);
    world::WorldConfig wc;
    const auto prompt = world::encode_prompt(wc, {world::Task::Counting, 2, 0, 3, world::Quadrant::NW});
    sampler::SamplerConfig cfg;
    std::uint64_t seed = 0;
    for (auto _ : state) {
        auto traj = sampler::rollout_group(params, prompt, 8, cfg, seed++);
        benchmark::DoNotOptimize(traj.data());
    }
}
BENCHMARK(BM_RolloutGroup)->Unit(benchmark::kMillisecond);

void BM_PretrainExample(benchmark::State& state) {
    const auto params = model::ModelParams<float>::initialized(bench_model(64), 1);
    world::WorldConfig wc;
    Rng rng(3);
    const world::PromptSpec spec{world::Task::TwoObject, 1, 4, 0, world::Quadrant::NW};
    model::ModelParams<float> grads(params.config());
    for (auto _ : state) {
        const auto ex = pretrain::make_example(wc, spec, rng);
        benchmark::DoNotOptimize(pretrain::ce_loss(params, ex, &grads));
    }
}
BENCHMARK(BM_PretrainExample)->Unit(benchmark::kMicrosecond);

}  // namespace
BENCHMARK_MAIN();
