#pragma once

#include <cstdint>
#include <optional>
#include <string>

// Subcommands of the `maskfocus` executable. Each returns a process exit code:
// 0 ok, 2 configuration or input error, 3 numerical abort, 1 anything else.
namespace maskfocus::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitNonFinite = 3;

struct PretrainArgs {
    std::string config;
    std::optional<std::string> out;  // overrides output_dir
};

struct RlTrainArgs {
    std::string config;
    std::string base;                        // base checkpoint directory
    std::optional<std::string> out;
    std::optional<std::string> step_select;  // critical | random-early | window | earliest
    std::optional<std::string> sampling;     // dr | standard | entropy-all
    std::optional<double> cfg_scale;
    std::optional<std::string> mask_mode;    // shuffle | trajectory
    std::optional<int> iterations;
    int export_every = 0;                    // trajectory export period; 0 = last iteration only
    bool quiet = false;
};

struct SampleArgs {
    std::string checkpoint;
    std::string prompt;  // JSON {task, params}, or @path
    int n = 4;
    std::uint64_t seed = 0;
    std::string out = "samples";
    std::optional<std::string> config;
    std::string sampling = "standard";
    std::optional<int> steps;
    std::optional<double> cfg_scale;
    bool dump_intermediate = false;
};

struct AnalyzeArgs {
    std::string trajectories;
    std::string out = "analysis.csv";
    int k = 3;
};

struct EvalArgs {
    std::string checkpoint;
    std::string suite = "all";  // all | a task name
    int n_per_task = 100;
    std::string out = "eval";
    std::uint64_t seed = 0;
    std::optional<std::string> config;
};

int cmd_pretrain(const PretrainArgs& args);
int cmd_rl_train(const RlTrainArgs& args);
int cmd_sample(const SampleArgs& args);
int cmd_analyze(const AnalyzeArgs& args);
int cmd_eval(const EvalArgs& args);

// Full command-line entry point (argv[0] is the program name).
int run(int argc, const char* const* argv);

}  // namespace maskfocus::cli
