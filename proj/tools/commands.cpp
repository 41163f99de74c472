#include "commands.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>

#include "CLI11.hpp"
#include "json.hpp"
#include "maskfocus/checkpoint.hpp"
#include "maskfocus/config.hpp"
#include "maskfocus/css.hpp"
#include "maskfocus/error.hpp"
#include "maskfocus/eval.hpp"
#include "maskfocus/io.hpp"
#include "maskfocus/pretrain.hpp"
#include "maskfocus/rl.hpp"
#include "maskfocus/sampler.hpp"
#include "maskfocus/synthworld.hpp"

namespace maskfocus::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

int guarded(const char* name, const std::function<int()>& body) {
    try {
        return body();
    } catch (const Error& e) {
        std::cerr << name << ": " << e.what() << "\n";
        switch (e.code()) {
            case ErrorCode::Config:
            case ErrorCode::MalformedInput: return kExitConfig;
            case ErrorCode::NonFinite: return kExitNonFinite;
            default: return kExitFailure;
        }
    } catch (const std::exception& e) {
        std::cerr << name << ": " << e.what() << "\n";
        return kExitFailure;
    }
}

// Copies the config file byte for byte and records the effective settings.
void record_config(const fs::path& out_dir, const std::string& config_path, const RunConfig& cfg) {
    fs::create_directories(out_dir);
    io::write_file(out_dir / "config.json", io::read_file(config_path));
    io::write_file(out_dir / "resolved_config.json", serialize_config(cfg));
}

// World settings for a checkpoint: from the config when given, otherwise
// recovered from the model's sizes.
world::WorldConfig world_for(const model::ModelConfig& m, const std::optional<std::string>& config_path) {
    world::WorldConfig w;
    if (config_path) {
        w = load_config(*config_path).world;
    } else {
        w.height = m.grid_height;
        w.width = m.grid_width;
        w.vocab_size = m.vocab_size;
        w.prompt_len = m.prompt_len;
        w.max_count = m.prompt_vocab - (1 + world::kNumTasks + m.vocab_size + 4);
    }
    if (w.height != m.grid_height || w.width != m.grid_width || w.vocab_size != m.vocab_size ||
        w.prompt_len != m.prompt_len || w.prompt_vocab_size() != m.prompt_vocab) {
        fail(ErrorCode::Config, "world settings do not match the checkpoint's model sizes");
    }
    world::validate(w);
    return w;
}

model::LoadedCheckpoint load_checked(const std::string& dir) {
    if (!fs::exists(fs::path(dir) / "manifest.json")) fail(ErrorCode::Config, "no checkpoint at " + dir);
    return model::load_checkpoint(dir);
}

void save(const fs::path& dir, const model::ModelParams<float>& params, std::uint64_t seed, std::int64_t step,
          const std::string& tag, std::map<std::string, double> metrics = {}) {
    model::CheckpointMeta meta;
    meta.model = params.config();
    meta.seed = seed;
    meta.step = step;
    meta.tag = tag;
    meta.metrics = std::move(metrics);
    model::save_checkpoint(dir, params, meta);
}

std::string fmt(double v) { return io::format_double(v); }

}  // namespace

int cmd_pretrain(const PretrainArgs& args) {
    return guarded("pretrain", [&] {
        const RunConfig cfg = load_config(args.config);
        const fs::path out = args.out ? fs::path(*args.out) : fs::path(cfg.output_dir);
        record_config(out, args.config, cfg);

        std::ofstream log(out / "pretrain_log.csv", std::ios::trunc);
        if (!log) fail(ErrorCode::Io, "cannot write pretrain_log.csv");
        log << "step,ce,lr,grad_norm,wall_ms\n";
        const auto on_log = [&](const pretrain::LogRow& r) {
            log << r.step << ',' << fmt(r.ce) << ',' << fmt(r.lr) << ',' << fmt(r.grad_norm) << ','
                << fmt(r.wall_ms) << '\n';
            log.flush();
            std::cout << "pretrain step " << r.step << " ce " << r.ce << "\n";
        };

        const auto init = model::ModelParams<float>::initialized(cfg.model, cfg.init_seed());
        const auto res = pretrain::pretrain_loop(cfg.world, init, cfg.pretrain, on_log);
        save(out / "checkpoint", res.params, cfg.seed, res.steps_done, "base",
             {{"initial_ce", res.initial_ce}, {"final_ce", res.final_ce}});
        if (res.aborted) {
            std::cerr << "pretrain: aborted at step " << res.steps_done << ": " << res.abort_reason << "\n";
            return kExitNonFinite;
        }
        std::cout << "pretrain done: " << res.steps_done << " steps, final ce " << res.final_ce << "\n";
        return kExitOk;
    });
}

int cmd_rl_train(const RlTrainArgs& args) {
    return guarded("rl-train", [&] {
        RunConfig cfg = load_config(args.config);
        if (args.step_select) cfg.rl.step_select = css::parse_step_select(*args.step_select);
        if (args.sampling) cfg.sampler.routing.mode = sampler::parse_sampling_mode(*args.sampling);
        if (args.cfg_scale) cfg.rl.cfg_scale = *args.cfg_scale;
        if (args.mask_mode) cfg.rl.mask_mode = rl::parse_mask_mode(*args.mask_mode);
        if (args.iterations) cfg.rl.iterations = *args.iterations;
        validate(cfg);
        const fs::path out = args.out ? fs::path(*args.out) : fs::path(cfg.output_dir);
        record_config(out, args.config, cfg);

        auto base = load_checked(args.base);
        if (base.params.config().grid_size() != cfg.world.grid_size() ||
            base.params.config().vocab_size != cfg.world.vocab_size ||
            base.params.config().prompt_vocab != cfg.world.prompt_vocab_size()) {
            fail(ErrorCode::Config, "base checkpoint does not match the configured world");
        }

        rl::GrpoTrainer<float> trainer(cfg.world, cfg.sampler, cfg.rl, std::move(base.params));
        std::ofstream log(out / "rl_log.csv", std::ios::trunc);
        if (!log) fail(ErrorCode::Io, "cannot write rl_log.csv");
        log << "iteration,update,mean_reward,loss,kl,clip_frac,grad_norm,wall_ms\n";
        std::ofstream traj(out / "trajectories.jsonl", std::ios::trunc);
        std::map<int, long> step_hist;
        std::size_t logged = 0;
        int sample_offset = 0;

        const auto export_groups = [&] {
            for (const auto& g : trainer.last_groups()) {
                traj << css::trajectory_jsonl(g.trajectories, sample_offset);
                sample_offset += static_cast<int>(g.trajectories.size());
            }
            traj.flush();
        };

        for (int it = 0; it < cfg.rl.iterations; ++it) {
            rl::IterationMetrics m;
            try {
                m = trainer.train_iteration();
            } catch (const Error& e) {
                if (e.code() == ErrorCode::NonFinite) {
                    save(out / "checkpoints" / "aborted" / "theta", trainer.theta(), cfg.seed, trainer.iteration(),
                         "theta");
                }
                throw;
            }
            for (; logged < trainer.updates().size(); ++logged) {
                const auto& u = trainer.updates()[logged];
                log << u.iteration << ',' << u.update << ',' << fmt(u.mean_reward) << ',' << fmt(u.report.loss) << ','
                    << fmt(u.report.kl) << ',' << fmt(u.report.clip_fraction) << ',' << fmt(u.report.grad_norm) << ','
                    << fmt(u.wall_ms) << '\n';
            }
            log.flush();
            for (int s : m.selected_steps) ++step_hist[s];
            const bool last = it + 1 == cfg.rl.iterations;
            if (last || (args.export_every > 0 && it % args.export_every == 0)) export_groups();
            if (cfg.rl.checkpoint_every > 0 && (it + 1) % cfg.rl.checkpoint_every == 0 && !last) {
                char name[32];
                std::snprintf(name, sizeof name, "iter_%05d", it + 1);
                save(out / "checkpoints" / name / "theta", trainer.theta(), cfg.seed, it + 1, "theta");
            }
            if (!args.quiet && (it % 10 == 0 || last)) {
                std::cout << "iteration " << it << " reward " << m.mean_reward << " loss " << m.loss << " kl " << m.kl
                          << " clip " << m.clip_fraction << "\n";
            }
        }

        std::string hist = "step,count\n";
        for (const auto& [s, c] : step_hist) hist += std::to_string(s) + ',' + std::to_string(c) + '\n';
        io::write_file(out / "selected_steps.csv", hist);
        const fs::path final_dir = out / "checkpoints" / "final";
        const std::int64_t updates = static_cast<std::int64_t>(trainer.updates().size());
        save(final_dir / "theta", trainer.theta(), cfg.seed, updates, "theta");
        save(final_dir / "old", trainer.old(), cfg.seed, updates, "old");
        save(final_dir / "ref", trainer.ref(), cfg.seed, 0, "ref");
        return kExitOk;
    });
}

int cmd_sample(const SampleArgs& args) {
    return guarded("sample", [&] {
        if (args.n < 1) fail(ErrorCode::Config, "--n must be >= 1");
        const auto ck = load_checked(args.checkpoint);
        const world::WorldConfig w = world_for(ck.params.config(), args.config);
        sampler::SamplerConfig scfg = args.config ? load_config(*args.config).sampler : sampler::SamplerConfig{};
        scfg.routing.mode = sampler::parse_sampling_mode(args.sampling);
        if (args.steps) scfg.steps = *args.steps;
        if (args.cfg_scale) scfg.cfg_scale = *args.cfg_scale;
        try {
            sampler::validate(scfg, w.grid_size());
        } catch (const Error& e) {
            fail(ErrorCode::Config, e.what());
        }

        const std::string prompt_text = !args.prompt.empty() && args.prompt[0] == '@'
                                            ? io::read_file(args.prompt.substr(1))
                                            : args.prompt;
        const world::PromptSpec spec = world::spec_from_json(prompt_text);
        std::vector<int> prompt;
        try {
            prompt = world::encode_prompt(w, spec);
        } catch (const Error& e) {
            fail(ErrorCode::MalformedInput, e.what());
        }

        const auto trajectories = sampler::decode(ck.params, prompt, args.n, scfg, args.seed);
        const fs::path out(args.out);
        fs::create_directories(out);
        json summary = json::array();
        for (const auto& t : trajectories) {
            char name[32];
            std::snprintf(name, sizeof name, "sample_%03d.ppm", t.id);
            world::write_ppm((out / name).string(), t.final_grid);
            if (args.dump_intermediate) {
                for (const auto& st : t.steps) {
                    std::snprintf(name, sizeof name, "sample_%03d_step_%02d.ppm", t.id, st.step);
                    world::write_ppm((out / name).string(), st.estimate);
                }
            }
            summary.push_back({{"sample", t.id},
                               {"reward_shaped", world::reward(t.final_grid, spec, world::RewardMode::Shaped)},
                               {"reward_strict", world::reward(t.final_grid, spec, world::RewardMode::Strict)},
                               {"tokens", t.final_grid.tokens}});
        }
        io::write_file(out / "trajectories.jsonl", css::trajectory_jsonl(trajectories));
        io::write_file(out / "samples.json",
                       json{{"spec", json::parse(world::spec_to_json(spec))}, {"seed", args.seed}, {"samples", summary}}
                               .dump(2) +
                           "\n");
        return kExitOk;
    });
}

int cmd_analyze(const AnalyzeArgs& args) {
    return guarded("analyze", [&] {
        if (args.k < 1) fail(ErrorCode::Config, "--k must be >= 1");
        std::string text;
        try {
            text = io::read_file(args.trajectories);
        } catch (const Error& e) {
            fail(ErrorCode::MalformedInput, e.what());
        }
        const auto rows = css::analyze(css::parse_trajectory_jsonl(text), args.k);
        io::write_file(args.out, css::analysis_csv(rows));
        return kExitOk;
    });
}

int cmd_eval(const EvalArgs& args) {
    return guarded("eval", [&] {
        const auto ck = load_checked(args.checkpoint);
        const world::WorldConfig w = world_for(ck.params.config(), args.config);
        sampler::SamplerConfig scfg = args.config ? load_config(*args.config).sampler : sampler::SamplerConfig{};
        eval::EvalConfig ecfg;
        ecfg.n_per_task = args.n_per_task;
        ecfg.seed = args.seed;
        if (args.suite != "all") {
            try {
                ecfg.tasks = {world::parse_task(args.suite)};
            } catch (const Error& e) {
                fail(ErrorCode::Config, e.what());
            }
        }
        eval::validate(ecfg);
        const auto summary = eval::evaluate(w, ecfg, eval::model_producer(ck.params, w, scfg));
        const fs::path out(args.out);
        fs::create_directories(out);
        io::write_file(out / "eval.csv", eval::summary_csv(summary));
        io::write_file(out / "eval.json", eval::summary_json(summary));
        std::cout << "overall " << summary.overall << "\n";
        return kExitOk;
    });
}

int run(int argc, const char* const* argv) {
    CLI::App app{"Masked generative model RL laboratory on a synthetic token-grid world"};
    app.require_subcommand(1);

    PretrainArgs pre;
    auto* p = app.add_subcommand("pretrain", "Masked-token pretraining of a base model");
    p->add_option("--config", pre.config, "Run config (JSON)")->required();
    p->add_option("--out", pre.out, "Output directory (default: output_dir from the config)");

    RlTrainArgs rl;
    auto* r = app.add_subcommand("rl-train", "GRPO post-training from a base checkpoint");
    r->add_option("--config", rl.config, "Run config (JSON)")->required();
    r->add_option("--base", rl.base, "Base checkpoint directory")->required();
    r->add_option("--out", rl.out, "Output directory");
    r->add_option("--step-select", rl.step_select, "critical | random-early | window | earliest");
    r->add_option("--sampling", rl.sampling, "dr | standard | entropy-all");
    r->add_option("--cfg-scale", rl.cfg_scale, "Guidance scale for rollouts and likelihoods");
    r->add_option("--mask-mode", rl.mask_mode, "shuffle | trajectory");
    r->add_option("--iterations", rl.iterations, "Override rl.iterations");
    r->add_option("--export-every", rl.export_every, "Export rollouts every N iterations (0: last only)");
    r->add_flag("--quiet", rl.quiet, "No progress lines");

    SampleArgs sa;
    auto* s = app.add_subcommand("sample", "Decode images for one prompt");
    s->add_option("--checkpoint", sa.checkpoint, "Checkpoint directory")->required();
    s->add_option("--prompt", sa.prompt, "Prompt JSON {task, params} or @file")->required();
    s->add_option("--n", sa.n, "Number of samples");
    s->add_option("--seed", sa.seed, "Sampling seed");
    s->add_option("--out", sa.out, "Output directory");
    s->add_option("--config", sa.config, "Run config supplying world and sampler settings");
    s->add_option("--sampling", sa.sampling, "dr | standard | entropy-all");
    s->add_option("--steps", sa.steps, "Decoding steps");
    s->add_option("--cfg-scale", sa.cfg_scale, "Guidance scale");
    s->add_flag("--dump-intermediate", sa.dump_intermediate, "Also write every intermediate estimate as PPM");

    AnalyzeArgs an;
    auto* a = app.add_subcommand("analyze", "Similarity, information gain and selected steps per sample");
    a->add_option("--trajectories", an.trajectories, "Trajectory JSON-lines export")->required();
    a->add_option("--out", an.out, "Output CSV");
    a->add_option("--k", an.k, "Critical steps per sample");

    EvalArgs ev;
    auto* e = app.add_subcommand("eval", "Strict per-task evaluation of a checkpoint");
    e->add_option("--checkpoint", ev.checkpoint, "Checkpoint directory")->required();
    e->add_option("--suite", ev.suite, "all or one task name");
    e->add_option("--n-per-task", ev.n_per_task, "Prompts per task");
    e->add_option("--out", ev.out, "Output directory");
    e->add_option("--seed", ev.seed, "Evaluation seed");
    e->add_option("--config", ev.config, "Run config supplying world and sampler settings");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& err) {
        const int code = app.exit(err);
        return code == 0 ? kExitOk : kExitConfig;
    }
    if (p->parsed()) return cmd_pretrain(pre);
    if (r->parsed()) return cmd_rl_train(rl);
    if (s->parsed()) return cmd_sample(sa);
    if (a->parsed()) return cmd_analyze(an);
    if (e->parsed()) return cmd_eval(ev);
    return kExitConfig;
}

}  // namespace maskfocus::cli
