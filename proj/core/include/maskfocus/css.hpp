#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "maskfocus/grid.hpp"
#include "maskfocus/rng.hpp"
#include "maskfocus/sampler.hpp"

// Critical step selection: how far each intermediate estimate is from the
// final image, how much that changes per step, and which steps to train on.
namespace maskfocus::css {

// S_t = CosSim(E_t, E_T) for t = 1..T. Throws IncompleteTrajectory.
std::vector<double> similarity_series(const sampler::Trajectory& traj);

// V_t = |S_{t+1} - S_t| for t = 1..T-1. Throws TooShort.
std::vector<double> information_gain(std::span<const double> similarity);

// The K steps (1-based) with the largest V_t, earlier step on ties, ascending.
// Throws KOutOfRange.
std::vector<int> select_critical(std::span<const double> gain, int k);

enum class StepSelect {
    Critical,      // top-K information gain
    RandomEarly,   // K distinct steps uniform over the first 40% of steps
    FixedWindow,   // K steps spaced 20% of T apart, starting at step 1
    EarliestOnly,  // steps 1..K
};

std::string_view to_string(StepSelect mode);
StepSelect parse_step_select(std::string_view name);  // critical | random-early | window | earliest

// Steps chosen by `mode` for a trajectory with T = gain.size() + 1 steps.
// Only RandomEarly draws from rng.
std::vector<int> select_steps(StepSelect mode, std::span<const double> gain, int k, Rng& rng);

struct CriticalStepRecord {
    int trajectory_id = 0;
    int step = 0;                     // k in [1, T-1]
    std::vector<std::uint8_t> mask;   // mask before step k
    double info_gain = 0.0;           // V_k
    TokenGrid final_grid;             // o, fully unmasked
    std::vector<int> prompt;
};

// K records per trajectory, in trajectory order then ascending step.
// RandomEarly draws from stream derive_seed(seed, trajectory id).
std::vector<CriticalStepRecord> build_records(const std::vector<sampler::Trajectory>& group, int k,
                                              StepSelect mode = StepSelect::Critical, std::uint64_t seed = 0);

// One line per (sample, step): {step, sample, branch, entropy, n_masked,
// committed_positions, S_t}. Sample ids are trajectory ids plus `sample_offset`.
std::string trajectory_jsonl(const std::vector<sampler::Trajectory>& trajectories, int sample_offset = 0);

struct ExportedStep {
    int sample = 0;
    int step = 0;
    std::string branch;
    double entropy = 0.0;
    int n_masked = 0;
    std::vector<int> committed_positions;
    double similarity = 0.0;
};

// Throws MalformedInput on bad JSON, missing fields, or non-contiguous steps.
std::vector<ExportedStep> parse_trajectory_jsonl(std::string_view text);

struct AnalysisRow {
    int sample = 0;
    int step = 0;
    double similarity = 0.0;
    double info_gain = 0.0;  // V_t; 0 at the last step, where it is undefined
    bool has_gain = false;
    double entropy = 0.0;
    std::string branch;
    bool selected = false;
};

// Per-sample S_t, V_t, entropy and top-K selection.
std::vector<AnalysisRow> analyze(const std::vector<ExportedStep>& steps, int k);

// CSV: sample,step,S_t,V_t,entropy,branch,selected (V_t empty at the last step).
std::string analysis_csv(const std::vector<AnalysisRow>& rows);

}  // namespace maskfocus::css
