#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "maskfocus/grid.hpp"
#include "maskfocus/model.hpp"
#include "maskfocus/rng.hpp"
#include "maskfocus/synthworld.hpp"

// Masked-token cross-entropy training of the base model on generated scenes.
namespace maskfocus::pretrain {

struct PretrainExample {
    std::vector<int> prompt;          // null prompt ids when dropped
    TokenGrid target;                 // fully unmasked scene
    std::vector<std::uint8_t> mask;   // positions to predict
    bool dropped = false;
};

// max(1, round(N * cos(pi/2 * u)))
int mask_size(double u, int grid_size);

// Scene, mask size from a uniform u, uniformly placed mask, prompt dropout.
PretrainExample make_example(const world::WorldConfig& world_cfg, const world::PromptSpec& spec, Rng& rng,
                             double dropout = 0.1);

// Mean negative log-likelihood of the masked targets under the conditional
// (unguided) model; adds its gradient into grads when non-null.
template <class T>
double ce_loss(const model::ModelParams<T>& params, const PretrainExample& example,
               model::ModelParams<T>* grads = nullptr);

struct PretrainConfig {
    int steps = 20000;
    int batch_size = 32;
    double learning_rate = 1e-3;
    int warmup_steps = 500;
    double min_lr_ratio = 0.1;  // cosine decay floor, as a fraction of learning_rate
    double dropout = 0.1;
    double clip_norm = 1.0;
    int log_every = 500;
    std::vector<world::Task> tasks = {world::kAllTasks, world::kAllTasks + world::kNumTasks};
    std::uint64_t seed = 0;

    friend bool operator==(const PretrainConfig&, const PretrainConfig&) = default;
};

void validate(const PretrainConfig& cfg);

double learning_rate_at(const PretrainConfig& cfg, int step);

struct LogRow {
    int step = 0;        // updates completed
    double ce = 0.0;     // mean batch CE over the window ending at `step`
    double lr = 0.0;
    double grad_norm = 0.0;
    double wall_ms = 0.0;
};

struct PretrainResult {
    model::ModelParams<float> params;  // last finite parameters
    int steps_done = 0;
    double initial_ce = 0.0;           // first batch, before any update
    double final_ce = 0.0;
    std::vector<LogRow> log;
    bool aborted = false;              // stopped by a NonFinite loss or update
    std::string abort_reason;
};

using LogCallback = std::function<void(const LogRow&)>;

// Deterministic for a fixed (configs, init seed): batch item b of step s is
// generated from stream derive_seed(cfg.seed, s, b).
PretrainResult pretrain_loop(const world::WorldConfig& world_cfg, model::ModelParams<float> init,
                             const PretrainConfig& cfg, const LogCallback& on_log = {});

}  // namespace maskfocus::pretrain
