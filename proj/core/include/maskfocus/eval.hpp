#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "maskfocus/grid.hpp"
#include "maskfocus/model.hpp"
#include "maskfocus/sampler.hpp"
#include "maskfocus/synthworld.hpp"

// Strict-binary reward per task over sampled prompts, plus the overall mean.
namespace maskfocus::eval {

struct EvalConfig {
    int n_per_task = 100;
    std::vector<world::Task> tasks = {world::kAllTasks, world::kAllTasks + world::kNumTasks};
    std::uint64_t seed = 0;

    friend bool operator==(const EvalConfig&, const EvalConfig&) = default;
};

void validate(const EvalConfig& cfg);

// Produces one fully unmasked grid for a prompt. Called concurrently.
using GridProducer = std::function<TokenGrid(const world::PromptSpec& spec, std::uint64_t seed)>;

struct TaskScore {
    world::Task task = world::Task::SingleObject;
    int n = 0;
    double mean = 0.0;
};

struct Summary {
    std::vector<TaskScore> tasks;
    double overall = 0.0;  // mean of the per-task means
};

// Item i of task t uses a spec drawn from stream derive_seed(seed, t) and
// producer seed derive_seed(seed, t, i).
Summary evaluate(const world::WorldConfig& world_cfg, const EvalConfig& cfg, const GridProducer& producer);

// One decoded sample per prompt with standard (unrouted) confidence sampling.
GridProducer model_producer(const model::ModelParams<float>& params, const world::WorldConfig& world_cfg,
                            sampler::SamplerConfig sampler_cfg);

// Ground-truth scenes from the generator.
GridProducer oracle_producer(const world::WorldConfig& world_cfg);

// Uniformly random tokens at every position.
GridProducer random_producer(const world::WorldConfig& world_cfg);

std::string summary_csv(const Summary& s);
std::string summary_json(const Summary& s);

}  // namespace maskfocus::eval
