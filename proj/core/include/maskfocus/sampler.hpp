#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "maskfocus/grid.hpp"
#include "maskfocus/model.hpp"
#include "maskfocus/rng.hpp"
#include "maskfocus/synthworld.hpp"

// Iterative parallel decoding: cosine mask schedule, confidence-based
// commitment and entropy-routed exploration within a group.
namespace maskfocus::sampler {

// gamma(u) = cos(pi/2 * u)
double schedule(double u);

// Number of positions still masked after step t (m_0 = N, m_T = 0). Each step
// commits at least one position.
int mask_count(int t, int grid_size, int steps);
std::vector<int> mask_counts(int grid_size, int steps);

// Entropy in nats; 0 log 0 = 0. Throws InvalidDistribution.
double token_entropy(std::span<const double> dist);

enum class SamplingMode {
    DynamicRouting,  // high-entropy half exploits, low-entropy half explores
    Standard,        // every sample uses confidence sampling at the base temperature
    EntropyAll,      // every sample uses the entropy-modulated temperature
};

std::string_view to_string(SamplingMode mode);
SamplingMode parse_sampling_mode(std::string_view name);  // "dr" | "standard" | "entropy-all"

struct RoutingConfig {
    SamplingMode mode = SamplingMode::DynamicRouting;
    double t_max = 1.0;        // maximum temperature
    double alpha = 1.0;        // decay rate
    double theta_floor = 0.6;  // lower bound

    bool enabled() const { return mode == SamplingMode::DynamicRouting; }
    friend bool operator==(const RoutingConfig&, const RoutingConfig&) = default;
};

void validate(const RoutingConfig& cfg);

// t_max * exp(-entropy / alpha) + theta_floor
double dynamic_temperature(double entropy, const RoutingConfig& cfg);

struct SamplerConfig {
    int steps = 12;
    double cfg_scale = 5.0;
    double base_temperature = 1.0;
    RoutingConfig routing;
    bool guided_entropy = true;  // false: entropies from conditional logits
    bool gumbel_confidence = false;
    double gumbel_scale = 1.0;
    std::uint64_t seed = 0;

    friend bool operator==(const SamplerConfig&, const SamplerConfig&) = default;
};

void validate(const SamplerConfig& cfg, int grid_size);

enum class Branch { Standard, Exploit, Explore };
std::string_view to_string(Branch branch);
Branch parse_branch(std::string_view name);

struct StepRecord {
    int step = 0;                            // 1..T
    std::vector<std::uint8_t> mask_before;   // M_t
    std::vector<int> masked_positions;       // positions of M_t, ascending
    std::vector<double> entropies;           // per masked position
    std::vector<double> temperatures;        // per masked position
    double sample_entropy = 0.0;             // mean of entropies
    Branch branch = Branch::Standard;
    std::vector<int> committed_positions;    // ascending
    std::vector<int> committed_tokens;
    TokenGrid estimate;                      // intermediate estimate after this step
    world::Embedding embedding;              // E_t
};

struct Trajectory {
    int id = 0;
    std::vector<int> prompt;
    std::vector<StepRecord> steps;
    TokenGrid final_grid;
    world::Embedding final_embedding;  // E_T
};

// Policy distribution and entropies for one sample before a step.
struct PreparedStep {
    model::Mat<double> logits;         // guided logits at temperature 1
    std::vector<double> entropy;       // per position; only masked entries meaningful
    double sample_entropy = 0.0;
};

template <class T>
PreparedStep prepare_step(const model::ModelParams<T>& params, std::span<const int> prompt, const TokenGrid& state,
                          const SamplerConfig& cfg);

// Mean token entropy over the masked positions of `state`. Throws EmptyMask.
double sample_entropy(const PreparedStep& prepared, const TokenGrid& state);

// Commits grid positions for step t in place and returns the step record.
StepRecord sample_step(const PreparedStep& prepared, TokenGrid& state, Branch branch, int step,
                       const SamplerConfig& cfg, int vocab_size, Rng& rng);

template <class T>
StepRecord sample_step(const model::ModelParams<T>& params, std::span<const int> prompt, TokenGrid& state,
                       Branch branch, int step, const SamplerConfig& cfg, Rng& rng);

// Committed tokens kept; masked positions filled with the argmax of `logits`.
TokenGrid intermediate_estimate(const TokenGrid& state, const model::Mat<double>& logits);

// G samples decoded in lockstep from an all-masked canvas. Sample i draws
// from its own stream derive_seed(group_seed, i).
template <class T>
std::vector<Trajectory> rollout_group(const model::ModelParams<T>& params, std::span<const int> prompt, int group_size,
                                      const SamplerConfig& cfg, std::uint64_t group_seed);

// Same engine without the group-size requirement (G >= 1); used for inference.
template <class T>
std::vector<Trajectory> decode(const model::ModelParams<T>& params, std::span<const int> prompt, int count,
                               const SamplerConfig& cfg, std::uint64_t group_seed);

}  // namespace maskfocus::sampler
