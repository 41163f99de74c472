#include "maskfocus/css.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "json.hpp"
#include "maskfocus/error.hpp"
#include "maskfocus/io.hpp"
#include "maskfocus/synthworld.hpp"

namespace maskfocus::css {

using nlohmann::json;

std::vector<double> similarity_series(const sampler::Trajectory& traj) {
    if (traj.steps.empty()) fail(ErrorCode::IncompleteTrajectory, "trajectory has no steps");
    if (traj.final_embedding.empty()) fail(ErrorCode::IncompleteTrajectory, "missing final embedding");
    std::vector<double> s;
    s.reserve(traj.steps.size());
    for (std::size_t i = 0; i < traj.steps.size(); ++i) {
        const auto& step = traj.steps[i];
        if (step.step != static_cast<int>(i) + 1) fail(ErrorCode::IncompleteTrajectory, "steps are not contiguous");
        if (step.embedding.size() != traj.final_embedding.size()) {
            fail(ErrorCode::IncompleteTrajectory, "missing embedding at step " + std::to_string(step.step));
        }
        s.push_back(world::cosine_similarity(step.embedding, traj.final_embedding));
    }
    return s;
}

std::vector<double> information_gain(std::span<const double> similarity) {
    if (similarity.size() < 2) fail(ErrorCode::TooShort, "need at least two similarity values");
    std::vector<double> v(similarity.size() - 1);
    for (std::size_t t = 0; t + 1 < similarity.size(); ++t) v[t] = std::abs(similarity[t + 1] - similarity[t]);
    return v;
}

std::vector<int> select_critical(std::span<const double> gain, int k) {
    if (k < 1 || k > static_cast<int>(gain.size())) {
        fail(ErrorCode::KOutOfRange, "K=" + std::to_string(k) + " outside [1, " + std::to_string(gain.size()) + "]");
    }
    std::vector<int> order(gain.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return gain[static_cast<std::size_t>(a)] > gain[static_cast<std::size_t>(b)];
    });
    std::vector<int> steps(order.begin(), order.begin() + k);
    for (int& s : steps) ++s;
    std::sort(steps.begin(), steps.end());
    return steps;
}

std::string_view to_string(StepSelect mode) {
    switch (mode) {
        case StepSelect::Critical: return "critical";
        case StepSelect::RandomEarly: return "random-early";
        case StepSelect::FixedWindow: return "window";
        case StepSelect::EarliestOnly: return "earliest";
    }
    return "?";
}

StepSelect parse_step_select(std::string_view name) {
    if (name == "critical") return StepSelect::Critical;
    if (name == "random-early") return StepSelect::RandomEarly;
    if (name == "window") return StepSelect::FixedWindow;
    if (name == "earliest") return StepSelect::EarliestOnly;
    fail(ErrorCode::Config, "unknown step selection '" + std::string(name) + "'");
}

std::vector<int> select_steps(StepSelect mode, std::span<const double> gain, int k, Rng& rng) {
    const int last = static_cast<int>(gain.size());  // T - 1
    if (k < 1 || k > last) fail(ErrorCode::KOutOfRange, "K outside [1, T-1]");
    const int T = last + 1;
    std::vector<int> steps;
    switch (mode) {
        case StepSelect::Critical: return select_critical(gain, k);
        case StepSelect::RandomEarly: {
            const int early = std::clamp(static_cast<int>(std::ceil(0.4 * T)), k, last);
            std::vector<int> pool(static_cast<std::size_t>(early));
            std::iota(pool.begin(), pool.end(), 1);
            rng.shuffle(pool);
            steps.assign(pool.begin(), pool.begin() + k);
            break;
        }
        case StepSelect::FixedWindow: {
            std::set<int> used;
            for (int j = 0; j < k; ++j) {
                int s = std::min(1 + static_cast<int>(std::lround(j * 0.2 * T)), last);
                while (used.count(s)) s = s < last ? s + 1 : 1;
                used.insert(s);
            }
            steps.assign(used.begin(), used.end());
            break;
        }
        case StepSelect::EarliestOnly:
            steps.resize(static_cast<std::size_t>(k));
            std::iota(steps.begin(), steps.end(), 1);
            break;
    }
    std::sort(steps.begin(), steps.end());
    return steps;
}

std::vector<CriticalStepRecord> build_records(const std::vector<sampler::Trajectory>& group, int k, StepSelect mode,
                                              std::uint64_t seed) {
    std::vector<CriticalStepRecord> out;
    out.reserve(group.size() * static_cast<std::size_t>(std::max(k, 0)));
    for (const auto& traj : group) {
        const auto s = similarity_series(traj);
        const auto v = information_gain(s);
        Rng rng(derive_seed(seed, static_cast<std::uint64_t>(traj.id)));
        for (int step : select_steps(mode, v, k, rng)) {
            CriticalStepRecord rec;
            rec.trajectory_id = traj.id;
            rec.step = step;
            rec.mask = traj.steps[static_cast<std::size_t>(step) - 1].mask_before;
            rec.info_gain = v[static_cast<std::size_t>(step) - 1];
            rec.final_grid = traj.final_grid;
            rec.prompt = traj.prompt;
            out.push_back(std::move(rec));
        }
    }
    return out;
}

std::string trajectory_jsonl(const std::vector<sampler::Trajectory>& trajectories, int sample_offset) {
    std::string out;
    for (const auto& traj : trajectories) {
        const auto s = similarity_series(traj);
        for (std::size_t i = 0; i < traj.steps.size(); ++i) {
            const auto& st = traj.steps[i];
            json line = {{"step", st.step},
                         {"sample", traj.id + sample_offset},
                         {"branch", std::string(sampler::to_string(st.branch))},
                         {"entropy", st.sample_entropy},
                         {"n_masked", st.masked_positions.size()},
                         {"committed_positions", st.committed_positions},
                         {"S_t", s[i]}};
            out += line.dump();
            out += '\n';
        }
    }
    return out;
}

std::vector<ExportedStep> parse_trajectory_jsonl(std::string_view text) {
    std::vector<ExportedStep> out;
    std::istringstream in{std::string(text)};
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            const json j = json::parse(line);
            ExportedStep e;
            e.sample = j.at("sample").get<int>();
            e.step = j.at("step").get<int>();
            e.branch = j.at("branch").get<std::string>();
            e.entropy = j.at("entropy").get<double>();
            e.n_masked = j.at("n_masked").get<int>();
            e.committed_positions = j.at("committed_positions").get<std::vector<int>>();
            e.similarity = j.at("S_t").get<double>();
            out.push_back(std::move(e));
        } catch (const json::exception& ex) {
            fail(ErrorCode::MalformedInput, "line " + std::to_string(lineno) + ": " + ex.what());
        }
    }
    if (out.empty()) fail(ErrorCode::MalformedInput, "no trajectory records");
    return out;
}

std::vector<AnalysisRow> analyze(const std::vector<ExportedStep>& steps, int k) {
    std::map<int, std::vector<const ExportedStep*>> by_sample;
    for (const auto& s : steps) by_sample[s.sample].push_back(&s);

    std::vector<AnalysisRow> rows;
    for (auto& [sample, list] : by_sample) {
        std::sort(list.begin(), list.end(), [](auto* a, auto* b) { return a->step < b->step; });
        for (std::size_t i = 0; i < list.size(); ++i) {
            if (list[i]->step != static_cast<int>(i) + 1) {
                fail(ErrorCode::MalformedInput, "sample " + std::to_string(sample) + " has missing or repeated steps");
            }
        }
        std::vector<double> s;
        for (auto* e : list) s.push_back(e->similarity);
        const auto v = information_gain(s);
        const auto chosen = select_critical(v, std::min<int>(k, static_cast<int>(v.size())));
        for (std::size_t i = 0; i < list.size(); ++i) {
            AnalysisRow r;
            r.sample = sample;
            r.step = list[i]->step;
            r.similarity = s[i];
            r.has_gain = i < v.size();
            r.info_gain = r.has_gain ? v[i] : 0.0;
            r.entropy = list[i]->entropy;
            r.branch = list[i]->branch;
            r.selected = std::binary_search(chosen.begin(), chosen.end(), r.step);
            rows.push_back(std::move(r));
        }
    }
    return rows;
}

std::string analysis_csv(const std::vector<AnalysisRow>& rows) {
    std::string out = "sample,step,S_t,V_t,entropy,branch,selected\n";
    for (const auto& r : rows) {
        out += std::to_string(r.sample) + ',' + std::to_string(r.step) + ',' + io::format_double(r.similarity) + ',' +
               (r.has_gain ? io::format_double(r.info_gain) : std::string()) + ',' + io::format_double(r.entropy) +
               ',' + r.branch + ',' + (r.selected ? "1" : "0") + '\n';
    }
    return out;
}

}  // namespace maskfocus::css
