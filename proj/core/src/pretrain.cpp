#include "maskfocus/pretrain.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numbers>
#include <numeric>

#include "maskfocus/error.hpp"
#include "maskfocus/parallel.hpp"
#include "maskfocus/sampler.hpp"

namespace maskfocus::pretrain {

int mask_size(double u, int grid_size) {
    return std::max(1, static_cast<int>(std::lround(grid_size * sampler::schedule(u))));
}

PretrainExample make_example(const world::WorldConfig& world_cfg, const world::PromptSpec& spec, Rng& rng,
                             double dropout) {
    const int N = world_cfg.grid_size();
    PretrainExample ex;
    ex.target = world::generate_scene(world_cfg, spec, rng.next_u64());
    const int m = mask_size(rng.uniform01(), N);
    std::vector<int> pos(static_cast<std::size_t>(N));
    std::iota(pos.begin(), pos.end(), 0);
    // Partial Fisher-Yates: the first m entries are a uniform m-subset.
    for (int i = 0; i < m; ++i) {
        const int j = i + static_cast<int>(rng.below(static_cast<std::uint64_t>(N - i)));
        std::swap(pos[static_cast<std::size_t>(i)], pos[static_cast<std::size_t>(j)]);
    }
    ex.mask.assign(static_cast<std::size_t>(N), 0);
    for (int i = 0; i < m; ++i) ex.mask[static_cast<std::size_t>(pos[static_cast<std::size_t>(i)])] = 1;
    ex.dropped = rng.uniform01() < dropout;
    if (ex.dropped) {
        ex.prompt.assign(static_cast<std::size_t>(world_cfg.prompt_len), world_cfg.prompt_vocab_size());
    } else {
        ex.prompt = world::encode_prompt(world_cfg, spec);
    }
    return ex;
}

template <class T>
double ce_loss(const model::ModelParams<T>& params, const PretrainExample& example, model::ModelParams<T>* grads) {
    model::MaskedCompletion c{example.prompt, example.target};
    c.grid.mask = example.mask;
    const model::PolicyOptions opts{0.0, false, 1.0};
    model::LikelihoodTape<T> tape;
    const auto lik = model::masked_log_likelihood(params, c, opts, grads ? &tape : nullptr);
    const double n = static_cast<double>(lik.per_token.size());
    if (grads) {
        const std::vector<T> upstream(lik.per_token.size(), static_cast<T>(-1.0 / n));
        model::masked_log_likelihood_backward(params, tape, std::span<const T>(upstream), *grads);
    }
    return -static_cast<double>(lik.total) / n;
}

void validate(const PretrainConfig& cfg) {
    if (cfg.steps < 0) fail(ErrorCode::Config, "pretrain.steps must be >= 0");
    if (cfg.batch_size < 1) fail(ErrorCode::Config, "pretrain.batch_size must be >= 1");
    if (!(cfg.learning_rate > 0)) fail(ErrorCode::Config, "pretrain.learning_rate must be > 0");
    if (cfg.warmup_steps < 0) fail(ErrorCode::Config, "pretrain.warmup_steps must be >= 0");
    if (!(cfg.min_lr_ratio >= 0 && cfg.min_lr_ratio <= 1)) fail(ErrorCode::Config, "pretrain.min_lr_ratio must be in [0, 1]");
    if (!(cfg.dropout >= 0 && cfg.dropout < 1)) fail(ErrorCode::Config, "pretrain.dropout must be in [0, 1)");
    if (cfg.log_every < 1) fail(ErrorCode::Config, "pretrain.log_every must be >= 1");
    if (cfg.tasks.empty()) fail(ErrorCode::Config, "pretrain.tasks must not be empty");
}

double learning_rate_at(const PretrainConfig& cfg, int step) {
    if (step < cfg.warmup_steps) return cfg.learning_rate * (step + 1) / cfg.warmup_steps;
    const int span = std::max(1, cfg.steps - cfg.warmup_steps);
    const double progress = std::min(1.0, static_cast<double>(step - cfg.warmup_steps) / span);
    const double cosine = 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
    return cfg.learning_rate * (cfg.min_lr_ratio + (1.0 - cfg.min_lr_ratio) * cosine);
}

PretrainResult pretrain_loop(const world::WorldConfig& world_cfg, model::ModelParams<float> init,
                             const PretrainConfig& cfg, const LogCallback& on_log) {
    using clock = std::chrono::steady_clock;
    world::validate(world_cfg);
    validate(cfg);
    std::vector<world::PromptSpec> pool;
    for (world::Task t : cfg.tasks) {
        const auto specs = world::enumerate_specs(world_cfg, t);
        pool.insert(pool.end(), specs.begin(), specs.end());
    }

    PretrainResult res;
    res.params = std::move(init);
    model::ModelParams<float>& params = res.params;
    model::AdamState<float> adam;
    const std::size_t B = static_cast<std::size_t>(cfg.batch_size);
    std::vector<model::ModelParams<float>> item_grads(B);
    std::vector<double> item_loss(B);

    double window_ce = 0.0;
    int window_n = 0;
    double last_norm = 0.0;
    auto window_start = clock::now();

    for (int step = 0; step < cfg.steps; ++step) {
        try {
            parallel_for(B, [&](std::size_t b) {
                Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(step), b));
                const world::PromptSpec& spec = pool[rng.below(pool.size())];
                const PretrainExample ex = make_example(world_cfg, spec, rng, cfg.dropout);
                item_grads[b] = model::ModelParams<float>(params.config());
                item_loss[b] = ce_loss(params, ex, &item_grads[b]);
            });
            double loss = 0.0;
            model::ModelParams<float> grads(params.config());
            auto dst = grads.values();
            const float inv_b = 1.0f / static_cast<float>(B);
            for (std::size_t b = 0; b < B; ++b) {
                loss += item_loss[b];
                const auto src = item_grads[b].values();
                for (std::size_t p = 0; p < dst.size(); ++p) dst[p] += src[p] * inv_b;
            }
            loss /= static_cast<double>(B);
            if (!std::isfinite(loss) || !grads.all_finite()) fail(ErrorCode::NonFinite, "non-finite pretraining loss");
            if (step == 0) res.initial_ce = loss;

            model::ModelParams<float> candidate = params;
            const model::AdamConfig adam_cfg{learning_rate_at(cfg, step), 0.9, 0.999, 1e-8, cfg.clip_norm};
            model::AdamState<float> adam_next = adam;
            last_norm = model::optimizer_step(candidate, grads, adam_next, adam_cfg).grad_norm;
            params = std::move(candidate);
            adam = std::move(adam_next);
            window_ce += loss;
            ++window_n;
        } catch (const Error& e) {
            if (e.code() != ErrorCode::NonFinite) throw;
            res.aborted = true;
            res.abort_reason = e.what();
            break;
        }
        res.steps_done = step + 1;
        if (res.steps_done % cfg.log_every == 0 || res.steps_done == cfg.steps) {
            LogRow row;
            row.step = res.steps_done;
            row.ce = window_ce / window_n;
            row.lr = learning_rate_at(cfg, step);
            row.grad_norm = last_norm;
            row.wall_ms = std::chrono::duration<double, std::milli>(clock::now() - window_start).count();
            res.log.push_back(row);
            res.final_ce = row.ce;
            if (on_log) on_log(row);
            window_ce = 0.0;
            window_n = 0;
            window_start = clock::now();
        }
    }
    if (window_n > 0) res.final_ce = window_ce / window_n;
    return res;
}

template double ce_loss<float>(const model::ModelParams<float>&, const PretrainExample&, model::ModelParams<float>*);
template double ce_loss<double>(const model::ModelParams<double>&, const PretrainExample&, model::ModelParams<double>*);

}  // namespace maskfocus::pretrain
