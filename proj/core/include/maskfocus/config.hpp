#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "maskfocus/eval.hpp"
#include "maskfocus/model.hpp"
#include "maskfocus/pretrain.hpp"
#include "maskfocus/rl.hpp"
#include "maskfocus/sampler.hpp"
#include "maskfocus/synthworld.hpp"

namespace maskfocus {

// Every setting of a run. JSON sections: world, model, sampler, routing, rl,
// pretrain, eval, plus the global seed and output_dir. Missing keys keep their
// defaults; unknown keys are rejected.
struct RunConfig {
    world::WorldConfig world;
    model::ModelConfig model;  // only the architecture fields are read; sizes follow `world`
    sampler::SamplerConfig sampler;
    rl::TrainConfig rl;
    pretrain::PretrainConfig pretrain;
    eval::EvalConfig eval;
    std::uint64_t seed = 0;
    std::string output_dir = "runs/default";

    // Fills model sizes from `world` and per-module seeds from `seed`.
    void resolve();
    std::uint64_t init_seed() const;

    friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

// Throws Error(Config).
RunConfig parse_config(std::string_view json_text);
RunConfig load_config(const std::filesystem::path& path);
std::string serialize_config(const RunConfig& cfg);
void validate(const RunConfig& cfg);

}  // namespace maskfocus
