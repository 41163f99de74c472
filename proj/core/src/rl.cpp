#include "maskfocus/rl.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>

#include "maskfocus/error.hpp"
#include "maskfocus/parallel.hpp"

namespace maskfocus::rl {

std::vector<double> compute_advantages(std::span<const double> rewards) {
    const std::size_t G = rewards.size();
    if (G < 2) fail(ErrorCode::GroupTooSmall, "advantages need at least two rewards");
    std::vector<double> adv(G, 0.0);
    if (std::all_of(rewards.begin(), rewards.end(), [&](double r) { return r == rewards[0]; })) return adv;
    const double mean = std::accumulate(rewards.begin(), rewards.end(), 0.0) / static_cast<double>(G);
    double var = 0.0;
    for (double r : rewards) var += (r - mean) * (r - mean);
    const double denom = std::max(std::sqrt(var / static_cast<double>(G)), 1e-6);
    for (std::size_t i = 0; i < G; ++i) adv[i] = (rewards[i] - mean) / denom;
    return adv;
}

std::vector<std::uint8_t> shuffle_mask(std::span<const std::uint8_t> mask, Rng& rng) {
    std::vector<std::uint8_t> out(mask.begin(), mask.end());
    if (std::none_of(out.begin(), out.end(), [](std::uint8_t m) { return m != 0; })) {
        fail(ErrorCode::EmptyMask, "cannot shuffle an empty mask");
    }
    for (auto& m : out) m = m != 0;
    rng.shuffle(out);
    return out;
}

template <class T>
double kl_estimate(std::span<const T> logp_theta, std::span<const T> logp_ref) {
    if (logp_theta.size() != logp_ref.size()) fail(ErrorCode::ShapeMismatch, "log-prob vectors differ in length");
    if (logp_theta.empty()) return 0.0;
    double total = 0.0;
    for (std::size_t i = 0; i < logp_theta.size(); ++i) {
        const double x = static_cast<double>(logp_ref[i]) - static_cast<double>(logp_theta[i]);
        total += std::exp(x) - x - 1.0;
    }
    return total / static_cast<double>(logp_theta.size());
}

double token_surrogate(double ratio, double advantage, double clip_eps) {
    const double clipped = std::clamp(ratio, 1.0 - clip_eps, 1.0 + clip_eps);
    return std::min(ratio * advantage, clipped * advantage);
}

std::string_view to_string(MaskMode mode) { return mode == MaskMode::Shuffle ? "shuffle" : "trajectory"; }

MaskMode parse_mask_mode(std::string_view name) {
    if (name == "shuffle") return MaskMode::Shuffle;
    if (name == "trajectory") return MaskMode::Trajectory;
    fail(ErrorCode::Config, "unknown mask mode '" + std::string(name) + "'");
}

void validate(const TrainConfig& cfg, const sampler::SamplerConfig& sampler_cfg) {
    if (cfg.group_size < 2) fail(ErrorCode::Config, "rl.group_size must be >= 2");
    if (sampler_cfg.routing.enabled() && cfg.group_size % 2 != 0) {
        fail(ErrorCode::Config, "rl.group_size must be even when routing is enabled");
    }
    if (cfg.critical_steps < 1 || cfg.critical_steps > sampler_cfg.steps - 1) {
        fail(ErrorCode::Config, "rl.critical_steps must be in [1, steps - 1]");
    }
    if (!(cfg.clip_eps > 0 && cfg.clip_eps < 1)) fail(ErrorCode::Config, "rl.clip_eps must be in (0, 1)");
    if (!(cfg.kl_beta >= 0)) fail(ErrorCode::Config, "rl.kl_beta must be >= 0");
    if (!(cfg.learning_rate > 0)) fail(ErrorCode::Config, "rl.learning_rate must be > 0");
    if (cfg.prompts_per_iteration < 1) fail(ErrorCode::Config, "rl.prompts_per_iteration must be >= 1");
    if (cfg.minibatches_per_collection < 1) fail(ErrorCode::Config, "rl.minibatches_per_collection must be >= 1");
    if (cfg.minibatches_per_collection > cfg.prompts_per_iteration * cfg.group_size * cfg.critical_steps) {
        fail(ErrorCode::Config, "more mini-batches than records per collection");
    }
    if (cfg.iterations < 0) fail(ErrorCode::Config, "rl.iterations must be >= 0");
    if (!(cfg.cfg_scale >= 0)) fail(ErrorCode::Config, "rl.cfg_scale must be >= 0");
    if (cfg.tasks.empty()) fail(ErrorCode::Config, "rl.tasks must not be empty");
    if (cfg.checkpoint_every < 0) fail(ErrorCode::Config, "rl.checkpoint_every must be >= 0");
}

template <class T>
GroupRollout rollout_and_score(const model::ModelParams<T>& old, const world::WorldConfig& world_cfg,
                               const world::PromptSpec& spec, const sampler::SamplerConfig& sampler_cfg,
                               const TrainConfig& cfg, std::uint64_t group_seed) {
    GroupRollout g;
    g.spec = spec;
    g.prompt = world::encode_prompt(world_cfg, spec);
    g.trajectories = sampler::rollout_group(old, g.prompt, cfg.group_size, sampler_cfg, group_seed);
    g.rewards.reserve(g.trajectories.size());
    for (const auto& t : g.trajectories) g.rewards.push_back(world::reward(t.final_grid, spec, cfg.reward_mode));
    g.advantages = compute_advantages(g.rewards);
    return g;
}

template <class T>
std::vector<GRPOEntry<T>> make_entries(const GroupRollout& group, const std::vector<css::CriticalStepRecord>& records,
                                       MaskMode mode, std::uint64_t mask_seed, int first_record_id) {
    std::vector<GRPOEntry<T>> out;
    out.reserve(records.size());
    int id = first_record_id;
    for (const auto& rec : records) {
        GRPOEntry<T> e;
        e.record_id = id++;
        e.record = rec;
        if (mode == MaskMode::Shuffle) {
            Rng rng(derive_seed(mask_seed, static_cast<std::uint64_t>(e.record_id)));
            e.train_mask = shuffle_mask(rec.mask, rng);
        } else {
            e.train_mask = rec.mask;
        }
        e.completion.prompt = rec.prompt;
        e.completion.grid = rec.final_grid;
        e.completion.grid.mask = e.train_mask;
        e.advantage = group.advantages.at(static_cast<std::size_t>(rec.trajectory_id));
        out.push_back(std::move(e));
    }
    return out;
}

template <class T>
void cache_log_probs(GRPOBatch<T>& batch, const model::ModelParams<T>& old, const model::ModelParams<T>& ref,
                     SnapshotIds ids, const model::PolicyOptions& opts) {
    parallel_for(batch.entries.size(), [&](std::size_t i) {
        auto& e = batch.entries[i];
        e.logp_old = model::masked_log_likelihood(old, e.completion, opts).per_token;
        e.logp_ref = model::masked_log_likelihood(ref, e.completion, opts).per_token;
    });
    batch.old_snapshot = ids.old_id;
    batch.ref_snapshot = ids.ref_id;
}

namespace {

struct EntryTotals {
    double surrogate = 0.0;
    double kl = 0.0;
    double ratio_sum = 0.0;
    double ratio_max = 0.0;
    double ratio_min = std::numeric_limits<double>::infinity();
    int clipped = 0;
    int tokens = 0;
};

}  // namespace

template <class T>
LossReport grpo_loss(const GRPOBatch<T>& batch, const model::ModelParams<T>& theta, const TrainConfig& cfg,
                     SnapshotIds expected, model::ModelParams<T>* grads) {
    if (batch.old_snapshot != expected.old_id || batch.ref_snapshot != expected.ref_id) {
        fail(ErrorCode::StaleSnapshot, "cached log-probs come from a different policy snapshot");
    }
    if (batch.entries.empty()) fail(ErrorCode::EmptyMask, "empty batch");
    int n_tok = 0;
    for (const auto& e : batch.entries) {
        const int m = e.completion.grid.masked_count();
        if (static_cast<int>(e.logp_old.size()) != m || static_cast<int>(e.logp_ref.size()) != m) {
            fail(ErrorCode::ShapeMismatch, "cached log-probs do not match the entry mask");
        }
        n_tok += m;
    }
    const double inv_n = 1.0 / n_tok;
    const model::PolicyOptions opts = cfg.policy();
    const double eps = cfg.clip_eps;
    const double beta = cfg.kl_beta;

    const std::size_t E = batch.entries.size();
    std::vector<EntryTotals> totals(E);
    std::vector<model::ModelParams<T>> entry_grads(grads ? E : 0);

    parallel_for(E, [&](std::size_t i) {
        const auto& e = batch.entries[i];
        model::LikelihoodTape<T> tape;
        const auto lik = model::masked_log_likelihood(theta, e.completion, opts, grads ? &tape : nullptr);
        const std::size_t m = lik.per_token.size();
        std::vector<T> upstream(m);
        EntryTotals& acc = totals[i];
        for (std::size_t j = 0; j < m; ++j) {
            const double lp = static_cast<double>(lik.per_token[j]);
            const double r = std::exp(lp - static_cast<double>(e.logp_old[j]));
            const double a = e.advantage;
            const double clipped = std::clamp(r, 1.0 - eps, 1.0 + eps) * a;
            const double unclipped = r * a;
            acc.surrogate += std::min(unclipped, clipped);
            if (clipped < unclipped) ++acc.clipped;
            const double x = static_cast<double>(e.logp_ref[j]) - lp;
            const double ex = std::exp(x);
            acc.kl += ex - x - 1.0;
            acc.ratio_sum += r;
            acc.ratio_max = std::max(acc.ratio_max, r);
            acc.ratio_min = std::min(acc.ratio_min, r);
            ++acc.tokens;
            const double d_surr = unclipped <= clipped ? unclipped : 0.0;
            upstream[j] = static_cast<T>((-d_surr + beta * (1.0 - ex)) * inv_n);
        }
        if (grads) {
            entry_grads[i] = model::ModelParams<T>(theta.config());
            model::masked_log_likelihood_backward(theta, tape, std::span<const T>(upstream), entry_grads[i]);
        }
    });

    LossReport rep;
    rep.min_ratio = std::numeric_limits<double>::infinity();
    double surr = 0.0, kl = 0.0, ratio_sum = 0.0;
    int clipped = 0;
    for (std::size_t i = 0; i < E; ++i) {
        surr += totals[i].surrogate;
        kl += totals[i].kl;
        ratio_sum += totals[i].ratio_sum;
        rep.max_ratio = std::max(rep.max_ratio, totals[i].ratio_max);
        rep.min_ratio = std::min(rep.min_ratio, totals[i].ratio_min);
        clipped += totals[i].clipped;
    }
    rep.tokens = n_tok;
    rep.policy_loss = -surr * inv_n;
    rep.kl = kl * inv_n;
    rep.loss = rep.policy_loss + beta * rep.kl;
    rep.mean_ratio = ratio_sum * inv_n;
    rep.clip_fraction = static_cast<double>(clipped) * inv_n;
    if (!std::isfinite(rep.loss)) fail(ErrorCode::NonFinite, "non-finite GRPO loss");

    if (grads) {
        auto dst = grads->values();
        for (std::size_t i = 0; i < E; ++i) {
            const auto src = entry_grads[i].values();
            for (std::size_t p = 0; p < dst.size(); ++p) dst[p] += src[p];
        }
        rep.grad_norm = model::global_norm<T>(std::span<const T>(dst.data(), dst.size()));
    }
    return rep;
}

template <class T>
GrpoTrainer<T>::GrpoTrainer(world::WorldConfig world_cfg, sampler::SamplerConfig sampler_cfg, TrainConfig cfg,
                            model::ModelParams<T> base)
    : world_cfg_(world_cfg), sampler_cfg_(sampler_cfg), cfg_(std::move(cfg)), theta_(base), old_(base),
      ref_(std::move(base)) {
    sampler_cfg_.cfg_scale = cfg_.cfg_scale;
    world::validate(world_cfg_);
    sampler::validate(sampler_cfg_, theta_.config().grid_size());
    validate(cfg_, sampler_cfg_);
    for (world::Task task : cfg_.tasks) {
        const auto specs = world::enumerate_specs(world_cfg_, task);
        pool_.insert(pool_.end(), specs.begin(), specs.end());
    }
    if (pool_.empty()) fail(ErrorCode::Config, "no prompts for the configured tasks");
}

template <class T>
std::vector<world::PromptSpec> GrpoTrainer<T>::next_prompts() const {
    Rng rng(derive_seed(cfg_.seed, 0x70726f6d7074ULL, static_cast<std::uint64_t>(iteration_)));
    std::vector<world::PromptSpec> out;
    for (int i = 0; i < cfg_.prompts_per_iteration; ++i) out.push_back(pool_[rng.below(pool_.size())]);
    return out;
}

template <class T>
IterationMetrics GrpoTrainer<T>::train_iteration(const std::vector<world::PromptSpec>& prompts) {
    using clock = std::chrono::steady_clock;
    const auto t0 = clock::now();
    const int it = iteration_;

    // C and D are emptied however the iteration ends.
    struct ClearBuffers {
        GrpoTrainer* self;
        ~ClearBuffers() {
            self->buffer_c_.clear();
            self->buffer_d_.entries.clear();
        }
    } clear_on_exit{this};

    old_ = theta_;
    ++old_id_;
    const SnapshotIds ids{old_id_, kRefId};

    IterationMetrics metrics;
    metrics.iteration = it;
    double reward_sum = 0.0;
    int reward_count = 0;
    last_groups_.clear();
    for (std::size_t p = 0; p < prompts.size(); ++p) {
        const std::uint64_t group_seed = derive_seed(cfg_.seed, static_cast<std::uint64_t>(it), p);
        GroupRollout group = rollout_and_score(old_, world_cfg_, prompts[p], sampler_cfg_, cfg_, group_seed);
        for (double r : group.rewards) reward_sum += r;
        reward_count += static_cast<int>(group.rewards.size());

        auto records = css::build_records(group.trajectories, cfg_.critical_steps, cfg_.step_select,
                                          derive_seed(group_seed, 0x637373ULL));
        const int first_id = static_cast<int>(buffer_c_.size());
        auto entries = make_entries<T>(group, records, cfg_.mask_mode, derive_seed(group_seed, 0x6d61736bULL), first_id);
        for (const auto& r : records) metrics.selected_steps.push_back(r.step);
        buffer_c_.insert(buffer_c_.end(), std::make_move_iterator(records.begin()), std::make_move_iterator(records.end()));
        for (auto& e : entries) buffer_d_.entries.push_back(std::move(e));
        last_groups_.push_back(std::move(group));
    }
    metrics.mean_reward = reward_count ? reward_sum / reward_count : 0.0;
    metrics.records = static_cast<int>(buffer_d_.entries.size());

    const model::PolicyOptions opts = cfg_.policy();
    cache_log_probs(buffer_d_, old_, ref_, ids, opts);

    // Random partition of D into mini-batches; each record is used once.
    std::vector<std::size_t> order(buffer_d_.entries.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng batch_rng(derive_seed(cfg_.seed, 0x6261746368ULL, static_cast<std::uint64_t>(it)));
    batch_rng.shuffle(order);
    const std::size_t B = static_cast<std::size_t>(cfg_.minibatches_per_collection);
    const model::AdamConfig adam_cfg{cfg_.learning_rate, 0.9, 0.999, 1e-8, cfg_.clip_norm};

    for (std::size_t b = 0; b < B; ++b) {
        const auto tb = clock::now();
        const std::size_t lo = order.size() * b / B;
        const std::size_t hi = order.size() * (b + 1) / B;
        std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(lo),
                                     order.begin() + static_cast<std::ptrdiff_t>(hi));
        std::sort(idx.begin(), idx.end());
        GRPOBatch<T> mb;
        mb.old_snapshot = buffer_d_.old_snapshot;
        mb.ref_snapshot = buffer_d_.ref_snapshot;
        mb.entries.reserve(idx.size());
        for (std::size_t i : idx) mb.entries.push_back(std::move(buffer_d_.entries[i]));

        model::ModelParams<T> grads(theta_.config());
        LossReport rep = grpo_loss(mb, theta_, cfg_, ids, &grads);
        if (!grads.all_finite()) fail(ErrorCode::NonFinite, "non-finite GRPO gradient");
        const model::StepReport step = model::optimizer_step(theta_, grads, adam_, adam_cfg);
        rep.grad_norm = step.grad_norm;

        UpdateLog log;
        log.iteration = it;
        log.update = static_cast<int>(updates_.size());
        log.mean_reward = metrics.mean_reward;
        log.report = rep;
        log.wall_ms = std::chrono::duration<double, std::milli>(clock::now() - tb).count();
        updates_.push_back(log);

        metrics.loss += rep.loss;
        metrics.kl += rep.kl;
        metrics.clip_fraction += rep.clip_fraction;
        metrics.grad_norm += rep.grad_norm;
        ++metrics.updates;
    }
    if (metrics.updates > 0) {
        metrics.loss /= metrics.updates;
        metrics.kl /= metrics.updates;
        metrics.clip_fraction /= metrics.updates;
        metrics.grad_norm /= metrics.updates;
    }
    ++iteration_;
    metrics.wall_ms = std::chrono::duration<double, std::milli>(clock::now() - t0).count();
    return metrics;
}

#define MASKFOCUS_INSTANTIATE_RL(T)                                                                               \
    template double kl_estimate<T>(std::span<const T>, std::span<const T>);                                       \
    template GroupRollout rollout_and_score<T>(const model::ModelParams<T>&, const world::WorldConfig&,           \
                                               const world::PromptSpec&, const sampler::SamplerConfig&,           \
                                               const TrainConfig&, std::uint64_t);                                \
    template std::vector<GRPOEntry<T>> make_entries<T>(const GroupRollout&,                                       \
                                                       const std::vector<css::CriticalStepRecord>&, MaskMode,     \
                                                       std::uint64_t, int);                                       \
    template void cache_log_probs<T>(GRPOBatch<T>&, const model::ModelParams<T>&, const model::ModelParams<T>&,   \
                                     SnapshotIds, const model::PolicyOptions&);                                   \
    template LossReport grpo_loss<T>(const GRPOBatch<T>&, const model::ModelParams<T>&, const TrainConfig&,       \
                                     SnapshotIds, model::ModelParams<T>*);                                        \
    template class GrpoTrainer<T>;

MASKFOCUS_INSTANTIATE_RL(float)
MASKFOCUS_INSTANTIATE_RL(double)

#undef MASKFOCUS_INSTANTIATE_RL

}  // namespace maskfocus::rl
