// Acceptance run: one PASS/FAIL line per criterion.
//
//   maskfocus_acceptance --work-dir DIR [--only 1,2,7] [--eval-n 1000]
//
// Criteria 7-10 train real models under DIR and take most of the runtime.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "commands.hpp"
#include "maskfocus/checkpoint.hpp"
#include "maskfocus/config.hpp"
#include "maskfocus/error.hpp"
#include "maskfocus/eval.hpp"
#include "maskfocus/io.hpp"
#include "maskfocus/pretrain.hpp"
#include "support.hpp"

using namespace maskfocus;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = true;
    std::ostringstream detail;

    void check(bool ok, const std::string& what) {
        if (!ok) {
            pass = false;
            detail << " [failed: " << what << "]";
        }
    }
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

double cpu_seconds() { return static_cast<double>(std::clock()) / CLOCKS_PER_SEC; }

// ---- 1: gradients -------------------------------------------------------

rl::TrainConfig tiny_train_config() {
    rl::TrainConfig cfg;
    cfg.group_size = 4;
    cfg.critical_steps = 2;
    cfg.cfg_scale = 2.0;
    cfg.kl_beta = 0.05;
    return cfg;
}

void gradients(Outcome& out) {
    const double cpu0 = cpu_seconds();
    const auto theta0 = model::ModelParams<double>::initialized(mft::tiny_model(), 5);
    out.check(theta0.size() <= 5000, "model has more than 5k parameters");
    Rng rng(101);
    const int directions = 20;

    const auto w = mft::tiny_world();
    const auto ex = pretrain::make_example(w, {world::Task::Counting, 1, 0, 2, world::Quadrant::NW}, rng, 0.0);
    model::ModelParams<double> g(theta0.config());
    pretrain::ce_loss(theta0, ex, &g);
    const std::vector<double> ce_grad(g.values().begin(), g.values().end());
    double ce_worst = 0;
    for (int k = 0; k < directions; ++k) {
        const auto d = mft::random_direction(theta0.size(), rng);
        const auto c =
            mft::directional_check(theta0, ce_grad, d, [&](const auto& q) { return pretrain::ce_loss(q, ex); });
        ce_worst = std::max(ce_worst, c.rel_error);
    }

    const auto old = model::ModelParams<double>::initialized(mft::tiny_model(), 1);
    const auto ref = mft::perturbed(old, 0.03, 2);
    const auto theta = mft::perturbed(old, 0.03, 3);
    const auto cfg = tiny_train_config();
    const rl::SnapshotIds ids{2, 0};
    const auto batch = mft::tiny_batch(old, ref, cfg, 11, ids);
    model::ModelParams<double> gg(theta.config());
    rl::grpo_loss(batch, theta, cfg, ids, &gg);
    const std::vector<double> grpo_grad(gg.values().begin(), gg.values().end());
    double grpo_worst = 0;
    for (int k = 0; k < directions; ++k) {
        const auto d = mft::random_direction(theta.size(), rng);
        const auto c = mft::directional_check(theta, grpo_grad, d,
                                              [&](const auto& q) { return rl::grpo_loss(batch, q, cfg, ids).loss; });
        grpo_worst = std::max(grpo_worst, c.rel_error);
    }
    const double cpu = cpu_seconds() - cpu0;
    out.detail << theta0.size() << " params, " << directions << " directions; ce max rel " << ce_worst
               << ", grpo max rel " << grpo_worst << ", " << cpu << " s CPU";
    out.check(ce_worst < 1e-5, "ce_loss rel error >= 1e-5");
    out.check(grpo_worst < 1e-4, "grpo_loss rel error >= 1e-4");
    out.check(cpu < 120, "slower than 2 min");
}

// ---- 2: advantages ------------------------------------------------------

void advantages(Outcome& out) {
    Rng rng(202);
    double worst_mean = 0, worst_std = 0;
    int groups = 0;
    while (groups < 1000) {
        std::vector<double> r(2 + rng.below(15));
        for (auto& x : r) x = rng.uniform01() < 0.2 ? std::round(rng.uniform01()) : rng.uniform01();
        if (std::all_of(r.begin(), r.end(), [&](double x) { return x == r[0]; })) continue;
        const auto a = rl::compute_advantages(r);
        const double mean = std::accumulate(a.begin(), a.end(), 0.0) / static_cast<double>(a.size());
        double var = 0;
        for (double x : a) var += (x - mean) * (x - mean);
        worst_mean = std::max(worst_mean, std::abs(mean));
        worst_std = std::max(worst_std, std::abs(std::sqrt(var / static_cast<double>(a.size())) - 1.0));
        ++groups;
    }
    out.check(worst_mean < 1e-9, "|mean| >= 1e-9");
    out.check(worst_std <= 1e-6, "std off by more than 1e-6");

    bool zeros = true;
    for (int i = 0; i < 200; ++i) {
        const double v = rng.uniform01();
        for (double x : rl::compute_advantages(std::vector<double>(2 + rng.below(15), v))) zeros &= x == 0.0;
    }
    out.check(zeros, "all-equal group gave a non-zero advantage");

    // Groups of 8 with rewards on a 1/8 grid keep every intermediate exact.
    int shift_mismatch = 0;
    for (int i = 0; i < 1000; ++i) {
        std::vector<double> r(8);
        for (auto& x : r) x = static_cast<double>(rng.below(9)) / 8.0;
        auto s = r;
        const double c = (static_cast<double>(rng.below(17)) - 8.0) / 8.0;
        for (auto& x : s) x += c;
        shift_mismatch += rl::compute_advantages(r) != rl::compute_advantages(s);
    }
    out.check(shift_mismatch == 0, "shifted rewards changed the advantages");
    out.detail << groups << " groups; max |mean| " << worst_mean << ", max |std-1| " << worst_std
               << "; shift mismatches " << shift_mismatch << "/1000";
}

// ---- 3: factorization ---------------------------------------------------

void factorization(Outcome& out) {
    const world::WorldConfig w;
    const auto p = model::ModelParams<double>::initialized(mft::small_model(), 303);
    const auto opts = rl::TrainConfig{}.policy();
    const auto specs = world::enumerate_specs(w);
    Rng rng(303);
    double worst = 0;
    for (int trial = 0; trial < 100; ++trial) {
        model::MaskedCompletion c;
        c.prompt = world::encode_prompt(w, specs[rng.below(specs.size())]);
        c.grid = mft::random_grid(w.height, w.width, w.vocab_size, rng);
        const double frac = rng.uniform01();
        for (auto& m : c.grid.mask) m = rng.uniform01() < frac;
        if (c.grid.masked_count() == 0) c.grid.mask[rng.below(64)] = 1;
        const auto lik = model::masked_log_likelihood(p, c, opts);
        const auto cond = model::forward(p, c.prompt, c.grid, true);
        const auto unc = model::forward(p, c.prompt, c.grid, false);
        const model::Mat<double> logits =
            (cond.logits + opts.cfg_scale * (cond.logits - unc.logits)) / opts.temperature;
        double sum = 0;
        for (int pos = 0; pos < c.grid.size(); ++pos) {
            if (!c.grid.masked(pos)) continue;
            const auto row = logits.row(pos);
            const double mx = row.maxCoeff();
            sum += row(c.grid.tokens[static_cast<std::size_t>(pos)]) - mx - std::log((row.array() - mx).exp().sum());
        }
        worst = std::max(worst, std::abs(lik.total - sum));
    }
    out.detail << "100 completions, max |total - sum of conditionals| " << worst;
    out.check(worst < 1e-9, "factorization error >= 1e-9");
}

// ---- 4: sampler ---------------------------------------------------------

void sampler_suite(Outcome& out) {
    const auto t0 = std::chrono::steady_clock::now();
    const world::WorldConfig w;
    const auto p = model::ModelParams<double>::initialized(mft::small_model(), 404);
    const auto specs = world::enumerate_specs(w);
    sampler::SamplerConfig cfg;
    const auto counts = sampler::mask_counts(w.height * w.width, cfg.steps);
    const int n = w.height * w.width;
    int bad_count = 0, bad_nesting = 0, bad_immutable = 0, bad_final = 0, bad_temp = 0, bad_partition = 0,
        bad_order = 0, trajectories = 0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        const int g = 2 + static_cast<int>(seed % 7);
        const auto prompt = world::encode_prompt(w, specs[(seed * 37) % specs.size()]);
        const auto group = sampler::rollout_group(p, prompt, g, cfg, seed);
        for (const auto& tr : group) {
            ++trajectories;
            std::vector<int> committed(static_cast<std::size_t>(n), -1);
            for (int t = 1; t <= cfg.steps; ++t) {
                const auto& st = tr.steps[static_cast<std::size_t>(t) - 1];
                int masked = 0;
                for (int i = 0; i < n; ++i) {
                    if (st.mask_before[i]) {
                        ++masked;
                        bad_nesting += committed[i] != -1;
                    } else {
                        bad_immutable += committed[i] == -1 || st.estimate.tokens[i] != committed[i];
                    }
                }
                bad_count += masked != counts[static_cast<std::size_t>(t) - 1];
                if (t > 1) {
                    const auto& prev = tr.steps[static_cast<std::size_t>(t) - 2].mask_before;
                    int prev_masked = 0;
                    for (int i = 0; i < n; ++i) {
                        bad_nesting += st.mask_before[i] && !prev[i];
                        prev_masked += prev[i];
                    }
                    bad_nesting += masked >= prev_masked;
                }
                for (std::size_t j = 0; j < st.committed_positions.size(); ++j) {
                    committed[static_cast<std::size_t>(st.committed_positions[j])] = st.committed_tokens[j];
                }
                if (st.branch == sampler::Branch::Explore) {
                    for (double temp : st.temperatures) {
                        bad_temp += !(temp > cfg.routing.theta_floor &&
                                      temp <= cfg.routing.t_max + cfg.routing.theta_floor);
                    }
                }
            }
            for (int i = 0; i < n; ++i) bad_final += tr.final_grid.tokens[i] != committed[i];
            bad_final += !tr.final_grid.fully_unmasked();
        }
        for (int t = 0; t < cfg.steps; ++t) {
            int exploit = 0, explore = 0;
            double exploit_min = INFINITY, explore_max = -INFINITY;
            for (const auto& tr : group) {
                const auto& st = tr.steps[static_cast<std::size_t>(t)];
                if (st.branch == sampler::Branch::Exploit) {
                    ++exploit;
                    exploit_min = std::min(exploit_min, st.sample_entropy);
                } else if (st.branch == sampler::Branch::Explore) {
                    ++explore;
                    explore_max = std::max(explore_max, st.sample_entropy);
                }
            }
            bad_partition += exploit != (g + 1) / 2 || explore != g / 2;
            bad_order += exploit_min < explore_max;
        }
    }
    const double secs = seconds_since(t0);
    out.detail << "100 seeds, " << trajectories << " trajectories, " << secs << " s";
    out.check(bad_count == 0, "|M_t| != mask_count(t)");
    out.check(bad_nesting == 0, "masks not strictly nested");
    out.check(bad_immutable == 0, "committed token changed");
    out.check(bad_final == 0, "final grid not fully committed");
    out.check(bad_temp == 0, "explore temperature out of range");
    out.check(bad_partition == 0, "routing partition is not ceil/floor");
    out.check(bad_order == 0, "an explore sample out-ranks an exploit sample");
    out.check(secs < 60, "slower than 1 min");
}

// ---- 5: critical step selection ----------------------------------------

void css_oracle(Outcome& out) {
    Rng rng(505);
    int mismatches = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        const int n = 1 + static_cast<int>(rng.below(20));
        std::vector<double> v(static_cast<std::size_t>(n));
        for (auto& x : v) x = static_cast<double>(rng.below(5)) * 0.125;
        const int k = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(n)));
        mismatches += css::select_critical(v, k) != mft::brute_force_select(v, k);
    }
    const world::WorldConfig w;
    const auto p = model::ModelParams<double>::initialized(mft::small_model(), 505);
    const auto specs = world::enumerate_specs(w);
    double worst = 0;
    int trajectories = 0;
    for (std::uint64_t seed = 0; seed < 25; ++seed) {
        const auto prompt = world::encode_prompt(w, specs[(seed * 53) % specs.size()]);
        for (const auto& tr : sampler::rollout_group(p, prompt, 8, sampler::SamplerConfig{}, seed)) {
            worst = std::max(worst, std::abs(css::similarity_series(tr).back() - 1.0));
            ++trajectories;
        }
    }
    out.detail << "oracle mismatches " << mismatches << "/1000; max |S_T - 1| " << worst << " over " << trajectories
               << " trajectories";
    out.check(mismatches == 0, "select_critical disagrees with the sort oracle");
    out.check(worst <= 1e-9, "S_T differs from 1");
}

// ---- 6: GRPO identities -------------------------------------------------

void grpo_identities(Outcome& out) {
    const auto base = model::ModelParams<float>::initialized(mft::small_model(), 606);
    rl::TrainConfig cfg;
    cfg.prompts_per_iteration = 2;
    cfg.minibatches_per_collection = 3;
    cfg.learning_rate = 1e-2;
    cfg.seed = 606;
    rl::GrpoTrainer<float> tr(world::WorldConfig{}, sampler::SamplerConfig{}, cfg, base);
    for (int i = 0; i < 4; ++i) tr.train_iteration();
    int first_not_one = 0, negative_kl = 0;
    const auto& ups = tr.updates();
    for (std::size_t u = 0; u < ups.size(); ++u) {
        const auto& r = ups[u].report;
        if (u % 3 == 0) first_not_one += r.min_ratio != 1.0 || r.max_ratio != 1.0;
        negative_kl += !(r.kl >= 0.0);
    }
    out.check(first_not_one == 0, "a first mini-batch ratio differs from 1");
    out.check(negative_kl == 0, "negative KL at a mini-batch");
    out.check(ups.front().report.kl == 0.0, "KL non-zero with theta == ref");

    Rng rng(606);
    int negative_pairs = 0;
    for (int i = 0; i < 1000; ++i) {
        std::vector<double> x(1 + rng.below(10)), y(x.size());
        for (auto& v : x) v = -5 * rng.uniform01();
        for (auto& v : y) v = -5 * rng.uniform01();
        negative_pairs += rl::kl_estimate<double>(x, y) < 0.0;
        negative_pairs += rl::kl_estimate<double>(x, x) != 0.0;
    }
    out.check(negative_pairs == 0, "k3 estimate negative, or non-zero at equality");

    // The three clip examples.
    const auto p = model::ModelParams<double>::initialized(mft::tiny_model(), 606);
    const auto tcfg = tiny_train_config();
    const auto batch = mft::tiny_batch(p, p, tcfg, 9, {5, 0});
    const auto rep = rl::grpo_loss(batch, p, tcfg, {5, 0});
    double expect = 0;
    for (const auto& e : batch.entries) expect += e.advantage * e.completion.grid.masked_count();
    expect = -expect / rep.tokens;
    out.check(rep.min_ratio == 1.0 && rep.max_ratio == 1.0 && rep.clip_fraction == 0.0 && rep.kl == 0.0,
              "theta == old is not on-policy");
    out.check(std::abs(rep.policy_loss - expect) <= 1e-12 * std::max(1.0, std::abs(expect)),
              "on-policy surrogate is not A per token");
    out.check(rl::token_surrogate(1.3, 1.0, 0.2) == 1.2, "clip at A = +1");
    out.check(rl::token_surrogate(1.3, -1.0, 0.2) == -1.3, "unclipped side at A = -1");
    out.detail << ups.size() << " updates over 4 iterations; 1000 k3 pairs; clip examples 1.0/1.2/-1.3";
}

// ---- 7-10: training runs -------------------------------------------------

struct Runs {
    fs::path dir;
    int eval_n = 1000;
    std::uint64_t eval_seed = 99;
    int rl_updates = 1500;
    double pretrain_s = -1;
    std::map<std::string, double> score;  // "<variant>/<seed>" -> strict Counting reward
    std::map<std::string, double> rl_seconds;

    fs::path base() {
        const auto ckpt = dir / "base" / "checkpoint";
        if (pretrain_s < 0) {
            const auto cfg = dir / "base.json";
            io::write_file(cfg, R"({
  "seed": 1,
  "pretrain": {"steps": 3000, "batch_size": 32, "warmup_steps": 200, "learning_rate": 0.001, "log_every": 500}
})");
            const auto t0 = std::chrono::steady_clock::now();
            if (cli::cmd_pretrain({cfg.string(), (dir / "base").string()}) != 0) fail(ErrorCode::Io, "pretrain failed");
            pretrain_s = seconds_since(t0);
        }
        return ckpt;
    }

    double evaluate(const fs::path& ckpt) const {
        RunConfig rc;
        rc.resolve();
        const auto loaded = model::load_checkpoint(ckpt);
        eval::EvalConfig ec;
        ec.n_per_task = eval_n;
        ec.tasks = {world::Task::Counting};
        ec.seed = eval_seed;
        return eval::evaluate(rc.world, ec, eval::model_producer(loaded.params, rc.world, rc.sampler)).overall;
    }

    fs::path rl_config(std::uint64_t seed) const {
        const auto path = dir / ("rl_seed" + std::to_string(seed) + ".json");
        std::ostringstream s;
        s << R"({"seed": )" << seed << R"(, "rl": {"tasks": ["Counting"], "reward_mode": "shaped", "iterations": )"
          << rl_updates << R"(, "prompts_per_iteration": 1, "minibatches_per_collection": 1, "learning_rate": 6e-5}})";
        io::write_file(path, s.str());
        return path;
    }

    double run(const std::string& select, const std::string& sampling, std::uint64_t seed) {
        const std::string key = select + "-" + sampling + "/" + std::to_string(seed);
        if (auto it = score.find(key); it != score.end()) return it->second;
        cli::RlTrainArgs a;
        a.config = rl_config(seed).string();
        a.base = base().string();
        a.out = (dir / ("rl_" + select + "_" + sampling + "_" + std::to_string(seed))).string();
        a.step_select = select;
        a.sampling = sampling;
        a.quiet = true;
        const auto t0 = std::chrono::steady_clock::now();
        if (cli::cmd_rl_train(a) != 0) fail(ErrorCode::Io, "rl-train failed for " + key);
        rl_seconds[key] = seconds_since(t0);
        const double s = evaluate(fs::path(*a.out) / "checkpoints" / "final" / "theta");
        std::cout << "  " << key << ": " << s << " (" << rl_seconds[key] / 60 << " min)" << std::endl;
        return score[key] = s;
    }
};

void end_to_end(Runs& runs, Outcome& out) {
    const auto ckpt = runs.base();
    const double before = runs.evaluate(ckpt);
    const double after = runs.run("critical", "dr", 1);
    const double minutes = (runs.pretrain_s + runs.rl_seconds.at("critical-dr/1")) / 60;
    out.detail << "strict Counting " << before << " -> " << after << " (+" << after - before << ") after "
               << runs.rl_updates << " updates, n=" << runs.eval_n << "; pretrain + RL " << minutes << " min";
    out.check(after - before >= 0.15, "lift below 0.15");
    out.check(minutes < 60, "slower than 60 min");
}

double mean_over_seeds(Runs& runs, const std::string& select, const std::string& sampling) {
    double s = 0;
    for (std::uint64_t seed : {1, 2, 3}) s += runs.run(select, sampling, seed);
    return s / 3;
}

void step_ablation(Runs& runs, Outcome& out) {
    const double critical = mean_over_seeds(runs, "critical", "dr");
    const double window = mean_over_seeds(runs, "window", "dr");
    const double earliest = mean_over_seeds(runs, "earliest", "dr");
    out.detail << "mean over 3 seeds: critical " << critical << ", window " << window << ", earliest " << earliest;
    out.check(window - critical <= 0.03, "window beats critical by more than 0.03");
    out.check(earliest - window <= 0.03, "earliest beats window by more than 0.03");
}

void sampling_ablation(Runs& runs, Outcome& out) {
    const double dr = mean_over_seeds(runs, "critical", "dr");
    const double standard = mean_over_seeds(runs, "critical", "standard");
    out.detail << "mean over 3 seeds: dr " << dr << ", standard " << standard;
    out.check(standard - dr <= 0.03, "standard beats dr by more than 0.03");
}

std::string drop_column(const std::string& csv, const std::string& column) {
    std::istringstream in(csv);
    std::string line, result;
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
            if (static_cast<int>(i) != drop) result += cells[i] + ",";
        }
        result += "\n";
    }
    return result;
}

void determinism(Runs& runs, Outcome& out) {
    const auto cfg = runs.dir / "determinism.json";
    io::write_file(cfg, R"({"seed": 10, "rl": {"iterations": 20, "prompts_per_iteration": 2,
                           "minibatches_per_collection": 2, "checkpoint_every": 10}})");
    std::vector<fs::path> dirs;
    for (const char* name : {"det_a", "det_b"}) {
        cli::RlTrainArgs a;
        a.config = cfg.string();
        a.base = runs.base().string();
        a.out = (runs.dir / name).string();
        a.quiet = true;
        if (cli::cmd_rl_train(a) != 0) fail(ErrorCode::Io, "rl-train failed");
        dirs.emplace_back(*a.out);
    }
    const auto log_a = io::read_file(dirs[0] / "rl_log.csv");
    out.check(drop_column(log_a, "wall_ms") == drop_column(io::read_file(dirs[1] / "rl_log.csv"), "wall_ms"),
              "reward curves differ");
    out.check(io::read_file(dirs[0] / "selected_steps.csv") == io::read_file(dirs[1] / "selected_steps.csv"),
              "selected steps differ");
    int files = 0, differing = 0;
    for (const auto& e : fs::recursive_directory_iterator(dirs[0] / "checkpoints")) {
        if (!e.is_regular_file()) continue;
        const auto other = dirs[1] / fs::relative(e.path(), dirs[0]);
        ++files;
        differing += !fs::exists(other) || io::read_file(e.path()) != io::read_file(other);
    }
    out.check(files > 0, "no checkpoint files written");
    out.check(differing == 0, "checkpoint bytes differ");
    out.detail << "two 20-iteration runs; " << std::count(log_a.begin(), log_a.end(), '\n') - 1
               << " log rows and " << files << " checkpoint files compared, " << differing << " differ";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"maskfocus acceptance run"};
    std::string work_dir = "acceptance_runs";
    std::vector<int> only;
    Runs runs;
    app.add_option("--work-dir", work_dir, "directory for training runs (emptied first)");
    app.add_option("--only", only, "criteria to run")->delimiter(',');
    app.add_option("--eval-n", runs.eval_n, "evaluation prompts per checkpoint");
    app.add_option("--rl-updates", runs.rl_updates, "GRPO updates per training run");
    CLI11_PARSE(app, argc, argv);

    runs.dir = fs::absolute(work_dir);
    fs::remove_all(runs.dir);
    fs::create_directories(runs.dir);

    const std::vector<std::pair<const char*, std::function<void(Outcome&)>>> criteria = {
        {"gradient correctness", gradients},
        {"advantage normalization", advantages},
        {"likelihood factorization", factorization},
        {"sampler schedule", sampler_suite},
        {"critical step oracle", css_oracle},
        {"GRPO identities", grpo_identities},
        {"end-to-end RL lift", [&](Outcome& o) { end_to_end(runs, o); }},
        {"step-selection ablation", [&](Outcome& o) { step_ablation(runs, o); }},
        {"sampling ablation", [&](Outcome& o) { sampling_ablation(runs, o); }},
        {"determinism", [&](Outcome& o) { determinism(runs, o); }},
    };
    const std::set<int> selected(only.begin(), only.end());
    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const int id = static_cast<int>(i) + 1;
        if (!selected.empty() && !selected.count(id)) continue;
        Outcome o;
        const auto t0 = std::chrono::steady_clock::now();
        try {
            criteria[i].second(o);
        } catch (const std::exception& e) {
            o.pass = false;
            o.detail << " [error: " << e.what() << "]";
        }
        failed += !o.pass;
        std::cout << (o.pass ? "PASS" : "FAIL") << "  " << id << " " << criteria[i].first << ": " << o.detail.str()
                  << " (" << seconds_since(t0) << " s)" << std::endl;
    }
    std::cout << (failed ? "FAILED " : "ALL PASSED ") << failed << " failing" << std::endl;
    return failed ? 1 : 0;
}
