#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "commands.hpp"
#include "json.hpp"
#include "maskfocus/checkpoint.hpp"
#include "maskfocus/config.hpp"
#include "maskfocus/error.hpp"
#include "maskfocus/eval.hpp"
#include "maskfocus/io.hpp"
#include "support.hpp"

using namespace maskfocus;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const char* kTinyConfig = R"({
  "seed": 3,
  "model": {"layers": 1, "width": 16, "heads": 2},
  "sampler": {"steps": 6},
  "pretrain": {"steps": 6, "batch_size": 2, "warmup_steps": 2, "log_every": 3},
  "rl": {"group_size": 4, "critical_steps": 2, "iterations": 2, "prompts_per_iteration": 1,
         "minibatches_per_collection": 2, "tasks": ["Counting"]},
  "eval": {"n_per_task": 4}
})";

fs::path scratch(const std::string& name) {
    const auto dir = fs::temp_directory_path() / ("mf_cli_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

fs::path write_config(const fs::path& dir, const std::string& text) {
    const auto path = dir / "config.json";
    io::write_file(path, text);
    return path;
}

// Pretrained tiny checkpoint shared by the tests below.
const fs::path& base_checkpoint() {
    static const fs::path dir = [] {
        const auto d = scratch("base");
        cli::PretrainArgs a{write_config(d, kTinyConfig).string(), (d / "run").string()};
        if (cli::cmd_pretrain(a) != 0) throw std::runtime_error("pretrain failed");
        return d / "run" / "checkpoint";
    }();
    return dir;
}

std::string without_column(const std::string& csv, const std::string& column) {
    std::istringstream in(csv);
    std::string line, out;
    int drop = -1;
    bool header = true;
    while (std::getline(in, line)) {
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        if (header) {
            for (std::size_t i = 0; i < cells.size(); ++i) {
                if (cells[i] == column) drop = static_cast<int>(i);
            }
            header = false;
        }
        for (std::size_t i = 0; i < cells.size(); ++i) {
            if (static_cast<int>(i) != drop) out += cells[i] + ",";
        }
        out += "\n";
    }
    return out;
}

int run_cli(std::vector<std::string> args) {
    args.insert(args.begin(), "maskfocus");
    std::vector<const char*> argv;
    for (auto& a : args) argv.push_back(a.c_str());
    return cli::run(static_cast<int>(argv.size()), argv.data());
}

}  // namespace

TEST(Config, RoundTripDefaultsAndOverrides) {
    const RunConfig def = parse_config("{}");
    EXPECT_EQ(parse_config(serialize_config(def)), def);
    const RunConfig tiny = parse_config(kTinyConfig);
    EXPECT_EQ(tiny.model.width, 16);
    EXPECT_EQ(tiny.rl.tasks, std::vector<world::Task>{world::Task::Counting});
    EXPECT_EQ(parse_config(serialize_config(tiny)), tiny);
    EXPECT_EQ(tiny.model.prompt_vocab, tiny.world.prompt_vocab_size());
    EXPECT_NE(tiny.rl.seed, tiny.pretrain.seed);
}

TEST(Config, ShippedConfigsLoad) {
    int n = 0;
    for (const auto& e : fs::directory_iterator(fs::path(MASKFOCUS_SOURCE_DIR) / "configs")) {
        if (e.path().extension() != ".json") continue;
        SCOPED_TRACE(e.path().string());
        EXPECT_NO_THROW(validate(load_config(e.path())));
        ++n;
    }
    EXPECT_GE(n, 3);
    EXPECT_EQ(load_config(fs::path(MASKFOCUS_SOURCE_DIR) / "configs" / "default.json"), parse_config("{}"));
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
    for (const char* text : {R"({"bogus": 1})", R"({"rl": {"lr": 1}})", R"({"sampler": {"steps": "x"}})",
                             R"({"sampler": {"mode": "greedy"}})", R"({"rl": {"group_size": 7}})",
                             R"({"rl": {"tasks": ["Nope"]}})", "not json", "[1]"}) {
        try {
            parse_config(text);
            ADD_FAILURE() << text;
        } catch (const Error& e) {
            EXPECT_EQ(e.code(), ErrorCode::Config) << text;
        }
    }
}

TEST(Eval, OracleScoresOne) {
    eval::EvalConfig cfg;
    cfg.n_per_task = 20;
    const auto s = eval::evaluate(world::WorldConfig{}, cfg, eval::oracle_producer(world::WorldConfig{}));
    ASSERT_EQ(s.tasks.size(), 5u);
    for (const auto& t : s.tasks) EXPECT_EQ(t.mean, 1.0) << world::to_string(t.task);
    EXPECT_EQ(s.overall, 1.0);
}

TEST(Eval, UniformModelSitsAtTheChanceFloor) {
    const world::WorldConfig w;
    // Zero output projection: every position is uniform over the codebook.
    auto p = model::ModelParams<float>::initialized(mft::small_model(), 1);
    p.tensor(p.layout().w_out).setZero();
    p.tensor(p.layout().b_out).setZero();
    eval::EvalConfig cfg;
    cfg.n_per_task = 300;
    cfg.seed = 4;
    const auto s = eval::evaluate(w, cfg, eval::model_producer(p, w, sampler::SamplerConfig{}));
    // Monte-Carlo chance floor over independently drawn uniform grids.
    Rng rng(123);
    for (const auto& t : s.tasks) {
        const auto specs = world::enumerate_specs(w, t.task);
        double hits = 0;
        const int mc = 20000;
        for (int i = 0; i < mc; ++i) {
            const auto g = mft::random_grid(8, 8, 8, rng);
            hits += world::reward(g, specs[rng.below(specs.size())], world::RewardMode::Strict);
        }
        const double floor = hits / mc;
        const double se = std::sqrt(std::max(floor * (1 - floor), 0.01) / t.n);
        EXPECT_NEAR(t.mean, floor, 4 * se + 0.01) << world::to_string(t.task);
    }
}

TEST(Eval, SummaryJsonHasEveryTask) {
    eval::EvalConfig cfg;
    cfg.n_per_task = 2;
    const auto s = eval::evaluate(world::WorldConfig{}, cfg, eval::oracle_producer(world::WorldConfig{}));
    const auto j = json::parse(eval::summary_json(s));
    std::set<std::string> names;
    for (const auto& t : j.at("tasks")) names.insert(t.at("task").get<std::string>());
    EXPECT_EQ(names, (std::set<std::string>{"SingleObject", "TwoObject", "Counting", "ColorAttr", "Position"}));
    EXPECT_EQ(j.at("overall").get<double>(), 1.0);
    EXPECT_EQ(eval::summary_csv(s).rfind("task,n,mean\n", 0), 0u);
}

TEST(Cli, MissingConfigExitsTwo) {
    EXPECT_EQ(cli::cmd_pretrain({"/nonexistent/config.json", std::nullopt}), 2);
    EXPECT_EQ(run_cli({"pretrain", "--config", "/nonexistent/config.json"}), 2);
    EXPECT_NE(run_cli({"no-such-command"}), 0);
}

TEST(Cli, PretrainWritesReloadableCheckpointAndIsReproducible) {
    const auto& ckpt = base_checkpoint();
    const auto loaded = model::load_checkpoint(ckpt);
    const RunConfig cfg = parse_config(kTinyConfig);
    EXPECT_EQ(loaded.meta.model, cfg.model);
    EXPECT_EQ(loaded.meta.step, 6);
    EXPECT_EQ(loaded.meta.tag, "base");
    const auto run_dir = ckpt.parent_path();
    EXPECT_EQ(io::read_file(run_dir / "config.json"), kTinyConfig);
    EXPECT_TRUE(fs::exists(run_dir / "pretrain_log.csv"));

    const auto d = scratch("pretrain_rerun");
    ASSERT_EQ(cli::cmd_pretrain({write_config(d, kTinyConfig).string(), (d / "run").string()}), 0);
    EXPECT_EQ(io::read_file(d / "run" / "checkpoint" / "params.bin"), io::read_file(ckpt / "params.bin"));
}

TEST(Cli, PretrainDivergenceExitsThree) {
    const auto d = scratch("pretrain_nan");
    std::string text = kTinyConfig;
    text.replace(text.find("\"warmup_steps\": 2"), 17,
                 "\"warmup_steps\": 0, \"learning_rate\": 1e36, \"min_lr_ratio\": 1.0");
    EXPECT_EQ(cli::cmd_pretrain({write_config(d, text).string(), (d / "run").string()}), 3);
    EXPECT_TRUE(fs::exists(d / "run" / "checkpoint" / "params.bin"));
}

TEST(Cli, RlTrainIsReproducibleAndHonorsSwitches) {
    const auto d = scratch("rl");
    const auto config = write_config(d, kTinyConfig).string();
    auto args = [&](const std::string& out) {
        cli::RlTrainArgs a;
        a.config = config;
        a.base = base_checkpoint().string();
        a.out = (d / out).string();
        a.quiet = true;
        return a;
    };
    ASSERT_EQ(cli::cmd_rl_train(args("a")), 0);
    ASSERT_EQ(cli::cmd_rl_train(args("b")), 0);
    const auto log_a = io::read_file(d / "a" / "rl_log.csv");
    EXPECT_EQ(log_a.rfind("iteration,update,mean_reward,loss,kl,clip_frac,grad_norm,wall_ms\n", 0), 0u);
    EXPECT_EQ(without_column(log_a, "wall_ms"), without_column(io::read_file(d / "b" / "rl_log.csv"), "wall_ms"));
    for (const char* tag : {"theta", "old", "ref"}) {
        EXPECT_EQ(io::read_file(d / "a" / "checkpoints" / "final" / tag / "params.bin"),
                  io::read_file(d / "b" / "checkpoints" / "final" / tag / "params.bin"));
    }
    EXPECT_EQ(io::read_file(d / "a" / "checkpoints" / "final" / "ref" / "params.bin"),
              io::read_file(base_checkpoint() / "params.bin"));

    auto early = args("early");
    early.step_select = "random-early";
    ASSERT_EQ(cli::cmd_rl_train(early), 0);
    auto standard = args("standard");
    standard.sampling = "standard";
    ASSERT_EQ(cli::cmd_rl_train(standard), 0);
    auto traj = args("traj");
    traj.mask_mode = "trajectory";
    traj.cfg_scale = 0.0;
    ASSERT_EQ(cli::cmd_rl_train(traj), 0);

    // random-early only draws steps in the first 40% (<= 3 of 6); critical picks are data driven.
    const auto hist_early = io::read_file(d / "early" / "selected_steps.csv");
    EXPECT_NE(hist_early, io::read_file(d / "a" / "selected_steps.csv"));
    std::istringstream in(hist_early);
    std::string line;
    std::getline(in, line);
    EXPECT_EQ(line, "step,count");
    while (std::getline(in, line)) {
        const int step = std::stoi(line.substr(0, line.find(',')));
        const int count = std::stoi(line.substr(line.find(',') + 1));
        if (step > 3) EXPECT_EQ(count, 0);
    }
    const auto jsonl = io::read_file(d / "standard" / "trajectories.jsonl");
    EXPECT_EQ(jsonl.find("\"explore\""), std::string::npos);
    EXPECT_NE(io::read_file(d / "a" / "trajectories.jsonl").find("\"explore\""), std::string::npos);
    const auto resolved = json::parse(io::read_file(d / "traj" / "resolved_config.json"));
    EXPECT_EQ(resolved["rl"]["mask_mode"], "trajectory");
    EXPECT_EQ(resolved["rl"]["cfg_scale"], 0.0);
}

TEST(Cli, RlTrainRejectsBadSwitchesAndMissingBase) {
    const auto d = scratch("rl_bad");
    cli::RlTrainArgs a;
    a.config = write_config(d, kTinyConfig).string();
    a.base = base_checkpoint().string();
    a.out = (d / "x").string();
    a.step_select = "sometimes";
    EXPECT_EQ(cli::cmd_rl_train(a), 2);
    a.step_select.reset();
    a.base = (d / "missing").string();
    EXPECT_EQ(cli::cmd_rl_train(a), 2);
}

TEST(Cli, SampleWritesImagesDeterministically) {
    const auto d = scratch("sample");
    const std::string prompt = R"({"task": "Counting", "params": {"color": 2, "count": 3}})";
    for (const char* out : {"a", "b"}) {
        ASSERT_EQ(run_cli({"sample", "--checkpoint", base_checkpoint().string(), "--prompt", prompt, "--n", "4",
                           "--seed", "5", "--steps", "6", "--out", (d / out).string()}),
                  0);
    }
    int images = 0;
    for (const auto& e : fs::directory_iterator(d / "a")) images += e.path().extension() == ".ppm";
    EXPECT_EQ(images, 4);
    for (int i = 0; i < 4; ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "sample_%03d.ppm", i);
        const auto bytes = io::read_file(d / "a" / name);
        EXPECT_EQ(bytes, io::read_file(d / "b" / name));
        EXPECT_EQ(bytes.rfind("P6\n", 0), 0u);
    }
    const auto samples = json::parse(io::read_file(d / "a" / "samples.json"));
    EXPECT_FALSE(samples.empty());
    EXPECT_EQ(run_cli({"sample", "--checkpoint", base_checkpoint().string(), "--prompt", "{bad", "--out",
                       (d / "c").string()}),
              2);
}

TEST(Cli, AnalyzeMatchesSelection) {
    const auto d = scratch("analyze");
    const std::string prompt = R"({"task": "Position", "params": {"color": 1, "quadrant": "SE"}})";
    ASSERT_EQ(run_cli({"sample", "--checkpoint", base_checkpoint().string(), "--prompt", prompt, "--n", "3",
                       "--sampling", "dr", "--out", (d / "s").string()}),
              0);
    const auto jsonl = d / "s" / "trajectories.jsonl";
    ASSERT_EQ(run_cli({"analyze", "--trajectories", jsonl.string(), "--out", (d / "a.csv").string(), "--k", "3"}), 0);
    const auto steps = css::parse_trajectory_jsonl(io::read_file(jsonl));
    const auto rows = css::analyze(steps, 3);
    EXPECT_EQ(io::read_file(d / "a.csv"), css::analysis_csv(rows));

    std::map<int, std::vector<double>> series;
    for (const auto& s : steps) series[s.sample].push_back(s.similarity);
    for (auto& [sample, s] : series) {
        EXPECT_NEAR(s.back(), 1.0, 1e-9);
        const auto chosen = css::select_critical(css::information_gain(s), 3);
        for (const auto& r : rows) {
            if (r.sample != sample) continue;
            EXPECT_EQ(r.selected, std::count(chosen.begin(), chosen.end(), r.step) == 1);
            if (r.has_gain) {
                EXPECT_NEAR(r.info_gain, std::abs(s[static_cast<std::size_t>(r.step)] - s[static_cast<std::size_t>(r.step) - 1]),
                            1e-15);
            }
        }
    }
    io::write_file(d / "bad.jsonl", "{\"step\": 1}\n");
    EXPECT_EQ(run_cli({"analyze", "--trajectories", (d / "bad.jsonl").string(), "--out", (d / "b.csv").string()}), 2);
}

TEST(Cli, EvalWritesSummaries) {
    const auto d = scratch("eval");
    ASSERT_EQ(run_cli({"eval", "--checkpoint", base_checkpoint().string(), "--n-per-task", "3", "--out",
                       (d / "e").string()}),
              0);
    const auto j = json::parse(io::read_file(d / "e" / "eval.json"));
    EXPECT_EQ(j.at("tasks").size(), 5u);
    EXPECT_TRUE(fs::exists(d / "e" / "eval.csv"));
    ASSERT_EQ(run_cli({"eval", "--checkpoint", base_checkpoint().string(), "--suite", "Counting", "--n-per-task",
                       "3", "--out", (d / "c").string()}),
              0);
    EXPECT_EQ(json::parse(io::read_file(d / "c" / "eval.json")).at("tasks").size(), 1u);
    EXPECT_EQ(run_cli({"eval", "--checkpoint", base_checkpoint().string(), "--suite", "Juggling", "--out",
                       (d / "x").string()}),
              2);
}
