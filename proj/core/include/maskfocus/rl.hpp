#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "maskfocus/css.hpp"
#include "maskfocus/model.hpp"
#include "maskfocus/rng.hpp"
#include "maskfocus/sampler.hpp"
#include "maskfocus/synthworld.hpp"

// Group relative policy optimization over critical decoding steps.
namespace maskfocus::rl {

// (R - mean) / max(std, 1e-6) with population std; all-equal groups give
// exact zeros. Throws GroupTooSmall for fewer than two rewards.
std::vector<double> compute_advantages(std::span<const double> rewards);

// Uniformly random mask over all positions with the same number of masked
// entries (a permutation of the binary mask). Throws EmptyMask.
std::vector<std::uint8_t> shuffle_mask(std::span<const std::uint8_t> mask, Rng& rng);

// Mean over tokens of exp(x) - x - 1 with x = logp_ref - logp_theta.
// Throws ShapeMismatch.
template <class T>
double kl_estimate(std::span<const T> logp_theta, std::span<const T> logp_ref);

// min(r A, clip(r, 1 - eps, 1 + eps) A)
double token_surrogate(double ratio, double advantage, double clip_eps);

enum class MaskMode {
    Shuffle,     // fresh random mask of the same size
    Trajectory,  // the trajectory's own mask at the selected step
};
std::string_view to_string(MaskMode mode);
MaskMode parse_mask_mode(std::string_view name);  // shuffle | trajectory

struct TrainConfig {
    int group_size = 8;
    int critical_steps = 3;
    double clip_eps = 0.2;
    double kl_beta = 0.01;
    double learning_rate = 3e-4;
    double clip_norm = 1.0;
    int prompts_per_iteration = 4;
    int minibatches_per_collection = 4;  // each record is consumed by exactly one update
    int iterations = 100;
    double cfg_scale = 5.0;              // used for both rollouts and likelihoods
    bool guided_likelihood = true;
    css::StepSelect step_select = css::StepSelect::Critical;
    MaskMode mask_mode = MaskMode::Shuffle;
    world::RewardMode reward_mode = world::RewardMode::Shaped;
    std::vector<world::Task> tasks = {world::kAllTasks, world::kAllTasks + world::kNumTasks};
    std::uint64_t seed = 0;
    int checkpoint_every = 0;            // iterations; 0 = final checkpoint only

    model::PolicyOptions policy() const { return {cfg_scale, guided_likelihood, 1.0}; }
    friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

void validate(const TrainConfig& cfg, const sampler::SamplerConfig& sampler_cfg);

struct GroupRollout {
    world::PromptSpec spec;
    std::vector<int> prompt;
    std::vector<sampler::Trajectory> trajectories;
    std::vector<double> rewards;
    std::vector<double> advantages;
};

template <class T>
GroupRollout rollout_and_score(const model::ModelParams<T>& old, const world::WorldConfig& world_cfg,
                               const world::PromptSpec& spec, const sampler::SamplerConfig& sampler_cfg,
                               const TrainConfig& cfg, std::uint64_t group_seed);

template <class T>
struct GRPOEntry {
    int record_id = 0;
    css::CriticalStepRecord record;
    std::vector<std::uint8_t> train_mask;  // M'_k
    model::MaskedCompletion completion;    // final tokens, mask M'_k
    double advantage = 0.0;
    std::vector<T> logp_old;               // aligned with the masked positions of completion
    std::vector<T> logp_ref;
};

template <class T>
struct GRPOBatch {
    std::vector<GRPOEntry<T>> entries;
    std::uint64_t old_snapshot = 0;
    std::uint64_t ref_snapshot = 0;
};

struct SnapshotIds {
    std::uint64_t old_id = 0;
    std::uint64_t ref_id = 0;
};

// Entries for one group's records; record ids start at first_record_id and
// masks are drawn from stream derive_seed(mask_seed, record id).
template <class T>
std::vector<GRPOEntry<T>> make_entries(const GroupRollout& group, const std::vector<css::CriticalStepRecord>& records,
                                       MaskMode mode, std::uint64_t mask_seed, int first_record_id);

// Fills logp_old / logp_ref for every entry and stamps the snapshot ids.
template <class T>
void cache_log_probs(GRPOBatch<T>& batch, const model::ModelParams<T>& old, const model::ModelParams<T>& ref,
                     SnapshotIds ids, const model::PolicyOptions& opts);

struct LossReport {
    double loss = 0.0;
    double policy_loss = 0.0;  // -(1/N_tok) sum of surrogates
    double kl = 0.0;           // mean k3 per token
    double mean_ratio = 0.0;
    double max_ratio = 0.0;
    double min_ratio = 0.0;
    double clip_fraction = 0.0;
    int tokens = 0;
    double grad_norm = 0.0;
};

// Clipped surrogate plus KL penalty over every masked token of the batch.
// Adds d(loss)/d(theta) into grads when non-null. Throws StaleSnapshot when the
// cached log-probs were not taken from the expected snapshots.
template <class T>
LossReport grpo_loss(const GRPOBatch<T>& batch, const model::ModelParams<T>& theta, const TrainConfig& cfg,
                     SnapshotIds expected, model::ModelParams<T>* grads = nullptr);

struct UpdateLog {
    int iteration = 0;
    int update = 0;
    double mean_reward = 0.0;  // of the collection this update trains on
    LossReport report;
    double wall_ms = 0.0;
};

struct IterationMetrics {
    int iteration = 0;
    double mean_reward = 0.0;
    double loss = 0.0;  // means over the iteration's updates
    double kl = 0.0;
    double clip_fraction = 0.0;
    double grad_norm = 0.0;
    int records = 0;
    int updates = 0;
    std::vector<int> selected_steps;  // every selected k, record order
    double wall_ms = 0.0;
};

// Owns theta, the frozen reference, the per-collection snapshot of theta and
// the optimizer state. Each iteration: snapshot old <- theta, roll out every
// prompt, score, select steps into C, build D, then one update per mini-batch.
template <class T>
class GrpoTrainer {
public:
    GrpoTrainer(world::WorldConfig world_cfg, sampler::SamplerConfig sampler_cfg, TrainConfig cfg,
                model::ModelParams<T> base);

    // Prompts for the next iteration, drawn from the configured tasks.
    std::vector<world::PromptSpec> next_prompts() const;

    IterationMetrics train_iteration(const std::vector<world::PromptSpec>& prompts);
    IterationMetrics train_iteration() { return train_iteration(next_prompts()); }

    const model::ModelParams<T>& theta() const { return theta_; }
    const model::ModelParams<T>& old() const { return old_; }
    const model::ModelParams<T>& ref() const { return ref_; }
    const std::vector<UpdateLog>& updates() const { return updates_; }
    int iteration() const { return iteration_; }
    std::size_t buffer_c_size() const { return buffer_c_.size(); }
    std::size_t buffer_d_size() const { return buffer_d_.entries.size(); }
    // Rollouts of the most recent iteration.
    const std::vector<GroupRollout>& last_groups() const { return last_groups_; }
    const TrainConfig& config() const { return cfg_; }
    const sampler::SamplerConfig& sampler_config() const { return sampler_cfg_; }

private:
    world::WorldConfig world_cfg_;
    sampler::SamplerConfig sampler_cfg_;
    TrainConfig cfg_;
    std::vector<world::PromptSpec> pool_;
    model::ModelParams<T> theta_, old_, ref_;
    model::AdamState<T> adam_;
    std::vector<css::CriticalStepRecord> buffer_c_;
    GRPOBatch<T> buffer_d_;
    std::vector<UpdateLog> updates_;
    std::vector<GroupRollout> last_groups_;
    int iteration_ = 0;
    std::uint64_t old_id_ = 1;
    static constexpr std::uint64_t kRefId = 0;
};

}  // namespace maskfocus::rl
