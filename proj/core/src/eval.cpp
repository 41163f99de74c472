#include "maskfocus/eval.hpp"

#include "json.hpp"
#include "maskfocus/error.hpp"
#include "maskfocus/io.hpp"
#include "maskfocus/parallel.hpp"
#include "maskfocus/rng.hpp"

namespace maskfocus::eval {

void validate(const EvalConfig& cfg) {
    if (cfg.n_per_task < 1) fail(ErrorCode::Config, "eval.n_per_task must be >= 1");
    if (cfg.tasks.empty()) fail(ErrorCode::Config, "eval.tasks must not be empty");
}

Summary evaluate(const world::WorldConfig& world_cfg, const EvalConfig& cfg, const GridProducer& producer) {
    validate(cfg);
    Summary s;
    for (world::Task task : cfg.tasks) {
        const auto pool = world::enumerate_specs(world_cfg, task);
        const auto t = static_cast<std::uint64_t>(task);
        Rng rng(derive_seed(cfg.seed, t));
        std::vector<world::PromptSpec> specs;
        for (int i = 0; i < cfg.n_per_task; ++i) specs.push_back(pool[rng.below(pool.size())]);

        std::vector<double> scores(specs.size());
        parallel_for(specs.size(), [&](std::size_t i) {
            const TokenGrid g = producer(specs[i], derive_seed(cfg.seed, t, i));
            scores[i] = world::reward(g, specs[i], world::RewardMode::Strict);
        });
        double total = 0.0;
        for (double x : scores) total += x;
        s.tasks.push_back({task, cfg.n_per_task, total / cfg.n_per_task});
    }
    double total = 0.0;
    for (const auto& ts : s.tasks) total += ts.mean;
    s.overall = total / static_cast<double>(s.tasks.size());
    return s;
}

GridProducer model_producer(const model::ModelParams<float>& params, const world::WorldConfig& world_cfg,
                            sampler::SamplerConfig sampler_cfg) {
    sampler_cfg.routing.mode = sampler::SamplingMode::Standard;
    return [&params, world_cfg, sampler_cfg](const world::PromptSpec& spec, std::uint64_t seed) {
        const auto prompt = world::encode_prompt(world_cfg, spec);
        return sampler::decode(params, prompt, 1, sampler_cfg, seed).front().final_grid;
    };
}

GridProducer oracle_producer(const world::WorldConfig& world_cfg) {
    return [world_cfg](const world::PromptSpec& spec, std::uint64_t seed) {
        return world::generate_scene(world_cfg, spec, seed);
    };
}

GridProducer random_producer(const world::WorldConfig& world_cfg) {
    return [world_cfg](const world::PromptSpec&, std::uint64_t seed) {
        Rng rng(seed);
        TokenGrid g(world_cfg.height, world_cfg.width);
        for (auto& tok : g.tokens) tok = static_cast<int>(rng.below(static_cast<std::uint64_t>(world_cfg.vocab_size)));
        return g;
    };
}

std::string summary_csv(const Summary& s) {
    std::string out = "task,n,mean\n";
    for (const auto& t : s.tasks) {
        out += std::string(world::to_string(t.task)) + ',' + std::to_string(t.n) + ',' + io::format_double(t.mean) + '\n';
    }
    out += "overall,," + io::format_double(s.overall) + '\n';
    return out;
}

std::string summary_json(const Summary& s) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& t : s.tasks) rows.push_back({{"task", std::string(world::to_string(t.task))}, {"n", t.n}, {"mean", t.mean}});
    return nlohmann::json{{"tasks", rows}, {"overall", s.overall}}.dump(2) + '\n';
}

}  // namespace maskfocus::eval
