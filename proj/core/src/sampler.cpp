#include "maskfocus/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "maskfocus/error.hpp"
#include "maskfocus/parallel.hpp"

namespace maskfocus::sampler {

double schedule(double u) { return std::cos(std::numbers::pi / 2.0 * u); }

std::vector<int> mask_counts(int grid_size, int steps) {
    if (steps < 1) fail(ErrorCode::InvalidArgument, "steps must be >= 1");
    if (grid_size < steps) fail(ErrorCode::InvalidArgument, "grid_size must be >= steps");
    std::vector<int> m(static_cast<std::size_t>(steps) + 1);
    m[0] = grid_size;
    for (int t = 1; t < steps; ++t) {
        const int raw = static_cast<int>(std::floor(grid_size * schedule(static_cast<double>(t) / steps)));
        // At least one commit now, and enough positions left for one per later step.
        m[static_cast<std::size_t>(t)] = std::clamp(raw, steps - t, m[static_cast<std::size_t>(t) - 1] - 1);
    }
    m[static_cast<std::size_t>(steps)] = 0;
    return m;
}

int mask_count(int t, int grid_size, int steps) {
    if (t < 0 || t > steps) fail(ErrorCode::InvalidArgument, "step index out of range");
    return mask_counts(grid_size, steps)[static_cast<std::size_t>(t)];
}

double token_entropy(std::span<const double> dist) {
    if (dist.empty()) fail(ErrorCode::InvalidDistribution, "empty distribution");
    double sum = 0.0;
    for (double p : dist) {
        if (!std::isfinite(p) || p < 0.0) fail(ErrorCode::InvalidDistribution, "negative or non-finite probability");
        sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-6) fail(ErrorCode::InvalidDistribution, "probabilities do not sum to 1");
    double h = 0.0;
    for (double p : dist) {
        if (p > 0.0) h -= p * std::log(p);
    }
    return std::clamp(h, 0.0, std::log(static_cast<double>(dist.size())));
}

std::string_view to_string(SamplingMode mode) {
    switch (mode) {
        case SamplingMode::DynamicRouting: return "dr";
        case SamplingMode::Standard: return "standard";
        case SamplingMode::EntropyAll: return "entropy-all";
    }
    return "?";
}

SamplingMode parse_sampling_mode(std::string_view name) {
    if (name == "dr") return SamplingMode::DynamicRouting;
    if (name == "standard") return SamplingMode::Standard;
    if (name == "entropy-all") return SamplingMode::EntropyAll;
    fail(ErrorCode::Config, "unknown sampling mode '" + std::string(name) + "'");
}

std::string_view to_string(Branch branch) {
    switch (branch) {
        case Branch::Standard: return "standard";
        case Branch::Exploit: return "exploit";
        case Branch::Explore: return "explore";
    }
    return "?";
}

Branch parse_branch(std::string_view name) {
    if (name == "standard") return Branch::Standard;
    if (name == "exploit") return Branch::Exploit;
    if (name == "explore") return Branch::Explore;
    fail(ErrorCode::MalformedInput, "unknown branch '" + std::string(name) + "'");
}

void validate(const RoutingConfig& cfg) {
    if (!(cfg.t_max > 0)) fail(ErrorCode::Config, "routing.t_max must be > 0");
    if (!(cfg.alpha > 0)) fail(ErrorCode::Config, "routing.alpha must be > 0");
    if (!(cfg.theta_floor >= 0)) fail(ErrorCode::Config, "routing.theta_floor must be >= 0");
}

double dynamic_temperature(double entropy, const RoutingConfig& cfg) {
    if (!(entropy >= 0)) fail(ErrorCode::InvalidArgument, "entropy must be >= 0");
    return cfg.t_max * std::exp(-entropy / cfg.alpha) + cfg.theta_floor;
}

void validate(const SamplerConfig& cfg, int grid_size) {
    if (cfg.steps < 2) fail(ErrorCode::Config, "sampler.steps must be >= 2");
    if (cfg.steps > grid_size) fail(ErrorCode::Config, "sampler.steps must not exceed the grid size");
    if (!(cfg.cfg_scale >= 0)) fail(ErrorCode::Config, "sampler.cfg_scale must be >= 0");
    if (!(cfg.base_temperature >= 0)) fail(ErrorCode::Config, "sampler.base_temperature must be >= 0");
    if (!(cfg.gumbel_scale >= 0)) fail(ErrorCode::Config, "sampler.gumbel_scale must be >= 0");
    validate(cfg.routing);
}

namespace {

constexpr double kGreedyTemperature = 1e-8;

int argmax_row(const model::Mat<double>& logits, int row) {
    int best = 0;
    for (int v = 1; v < logits.cols(); ++v) {
        if (logits(row, v) > logits(row, best)) best = v;
    }
    return best;
}

std::vector<double> softmax(const model::Mat<double>& logits, int row, double temperature) {
    const auto r = logits.row(row);
    const double mx = r.maxCoeff();
    std::vector<double> p(static_cast<std::size_t>(r.size()));
    double sum = 0.0;
    for (Eigen::Index v = 0; v < r.size(); ++v) {
        p[static_cast<std::size_t>(v)] = std::exp((r(v) - mx) / temperature);
        sum += p[static_cast<std::size_t>(v)];
    }
    for (double& x : p) x /= sum;
    return p;
}

int draw(const model::Mat<double>& logits, int row, double temperature, Rng& rng) {
    if (temperature < kGreedyTemperature) return argmax_row(logits, row);
    const auto p = softmax(logits, row, temperature);
    const double u = rng.uniform01();
    double cum = 0.0;
    int last_positive = 0;
    for (std::size_t v = 0; v < p.size(); ++v) {
        if (p[v] <= 0.0) continue;
        cum += p[v];
        last_positive = static_cast<int>(v);
        if (u < cum) return static_cast<int>(v);
    }
    return last_positive;
}

template <class T>
model::Mat<double> to_double(const model::Mat<T>& m) {
    return m.template cast<double>();
}

}  // namespace

template <class T>
PreparedStep prepare_step(const model::ModelParams<T>& params, std::span<const int> prompt, const TokenGrid& state,
                          const SamplerConfig& cfg) {
    const model::PolicyOptions opts{cfg.cfg_scale, true, 1.0};
    model::LogitsGrid<T> cond = model::forward(params, prompt, state, true);
    PreparedStep out;
    if (opts.uses_uncond()) {
        const model::LogitsGrid<T> uncond = model::forward(params, prompt, state, false);
        out.logits = to_double(model::guided_logits(cond, uncond, cfg.cfg_scale).logits);
    } else {
        out.logits = to_double(cond.logits);
    }
    if (!out.logits.allFinite()) fail(ErrorCode::NonFinite, "non-finite logits during sampling");
    const model::Mat<double> entropy_logits = cfg.guided_entropy ? out.logits : to_double(cond.logits);

    out.entropy.assign(static_cast<std::size_t>(state.size()), 0.0);
    double total = 0.0;
    int masked = 0;
    for (int p = 0; p < state.size(); ++p) {
        if (!state.masked(p)) continue;
        const auto dist = softmax(entropy_logits, p, 1.0);
        out.entropy[static_cast<std::size_t>(p)] = token_entropy(dist);
        total += out.entropy[static_cast<std::size_t>(p)];
        ++masked;
    }
    out.sample_entropy = masked > 0 ? total / masked : 0.0;
    return out;
}

double sample_entropy(const PreparedStep& prepared, const TokenGrid& state) {
    double total = 0.0;
    int masked = 0;
    for (int p = 0; p < state.size(); ++p) {
        if (!state.masked(p)) continue;
        total += prepared.entropy[static_cast<std::size_t>(p)];
        ++masked;
    }
    if (masked == 0) fail(ErrorCode::EmptyMask, "no masked positions");
    return total / masked;
}

TokenGrid intermediate_estimate(const TokenGrid& state, const model::Mat<double>& logits) {
    if (logits.rows() != state.size()) fail(ErrorCode::ShapeMismatch, "logits rows != grid size");
    TokenGrid out = state;
    for (int p = 0; p < state.size(); ++p) {
        if (!state.masked(p)) continue;
        out.tokens[static_cast<std::size_t>(p)] = argmax_row(logits, p);
        out.mask[static_cast<std::size_t>(p)] = 0;
    }
    return out;
}

StepRecord sample_step(const PreparedStep& prepared, TokenGrid& state, Branch branch, int step,
                       const SamplerConfig& cfg, int vocab_size, Rng& rng) {
    const int N = state.size();
    const auto counts = mask_counts(N, cfg.steps);
    if (step < 1 || step > cfg.steps) fail(ErrorCode::InvalidArgument, "step out of range");
    StepRecord rec;
    rec.step = step;
    rec.mask_before = state.mask;
    rec.masked_positions = state.masked_positions();
    if (rec.masked_positions.empty()) fail(ErrorCode::EmptyMask, "no masked positions left");
    if (static_cast<int>(rec.masked_positions.size()) != counts[static_cast<std::size_t>(step) - 1]) {
        fail(ErrorCode::InvalidArgument, "state does not match the mask schedule for this step");
    }
    const int commit = counts[static_cast<std::size_t>(step) - 1] - counts[static_cast<std::size_t>(step)];

    const std::size_t M = rec.masked_positions.size();
    std::vector<int> drawn(M);
    std::vector<double> confidence(M);
    rec.entropies.resize(M);
    rec.temperatures.resize(M);
    for (std::size_t j = 0; j < M; ++j) {
        const int p = rec.masked_positions[j];
        const double h = prepared.entropy[static_cast<std::size_t>(p)];
        const double temp = branch == Branch::Explore ? dynamic_temperature(h, cfg.routing) : cfg.base_temperature;
        const int tok = draw(prepared.logits, p, temp, rng);
        const auto p1 = softmax(prepared.logits, p, 1.0);
        double conf = p1[static_cast<std::size_t>(tok)];
        if (cfg.gumbel_confidence) {
            const double anneal = 1.0 - static_cast<double>(step) / cfg.steps;
            conf = std::log(conf) + cfg.gumbel_scale * anneal * rng.gumbel();
        }
        rec.entropies[j] = h;
        rec.temperatures[j] = temp;
        drawn[j] = tok;
        confidence[j] = conf;
    }
    rec.sample_entropy = std::accumulate(rec.entropies.begin(), rec.entropies.end(), 0.0) / static_cast<double>(M);
    rec.branch = branch;

    // Highest confidence first; ties go to the lower position (stable on ascending positions).
    std::vector<std::size_t> order(M);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return confidence[a] > confidence[b]; });
    order.resize(static_cast<std::size_t>(commit));
    std::sort(order.begin(), order.end());
    for (std::size_t j : order) {
        const int p = rec.masked_positions[j];
        state.tokens[static_cast<std::size_t>(p)] = drawn[j];
        state.mask[static_cast<std::size_t>(p)] = 0;
        rec.committed_positions.push_back(p);
        rec.committed_tokens.push_back(drawn[j]);
    }
    rec.estimate = intermediate_estimate(state, prepared.logits);
    rec.embedding = world::embed(rec.estimate, vocab_size);
    return rec;
}

template <class T>
StepRecord sample_step(const model::ModelParams<T>& params, std::span<const int> prompt, TokenGrid& state,
                       Branch branch, int step, const SamplerConfig& cfg, Rng& rng) {
    const PreparedStep prepared = prepare_step(params, prompt, state, cfg);
    return sample_step(prepared, state, branch, step, cfg, params.config().vocab_size, rng);
}

template <class T>
std::vector<Trajectory> decode(const model::ModelParams<T>& params, std::span<const int> prompt, int count,
                               const SamplerConfig& cfg, std::uint64_t group_seed) {
    const model::ModelConfig& mc = params.config();
    validate(cfg, mc.grid_size());
    if (count < 1) fail(ErrorCode::InvalidArgument, "sample count must be >= 1");
    const std::size_t G = static_cast<std::size_t>(count);

    std::vector<TokenGrid> states(G, TokenGrid(mc.grid_height, mc.grid_width, 0));
    for (auto& s : states) std::fill(s.mask.begin(), s.mask.end(), std::uint8_t{1});
    std::vector<Rng> rngs;
    rngs.reserve(G);
    std::vector<Trajectory> traj(G);
    for (std::size_t i = 0; i < G; ++i) {
        rngs.emplace_back(derive_seed(group_seed, i));
        traj[i].id = static_cast<int>(i);
        traj[i].prompt.assign(prompt.begin(), prompt.end());
        traj[i].steps.reserve(static_cast<std::size_t>(cfg.steps));
    }

    std::vector<PreparedStep> prepared(G);
    std::vector<Branch> branches(G);
    for (int t = 1; t <= cfg.steps; ++t) {
        parallel_for(G, [&](std::size_t i) { prepared[i] = prepare_step(params, prompt, states[i], cfg); });

        switch (cfg.routing.mode) {
            case SamplingMode::Standard: std::fill(branches.begin(), branches.end(), Branch::Standard); break;
            case SamplingMode::EntropyAll: std::fill(branches.begin(), branches.end(), Branch::Explore); break;
            case SamplingMode::DynamicRouting: {
                std::vector<std::size_t> order(G);
                std::iota(order.begin(), order.end(), std::size_t{0});
                std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
                    return prepared[a].sample_entropy > prepared[b].sample_entropy;
                });
                const std::size_t exploit = (G + 1) / 2;
                for (std::size_t r = 0; r < G; ++r) branches[order[r]] = r < exploit ? Branch::Exploit : Branch::Explore;
                break;
            }
        }

        parallel_for(G, [&](std::size_t i) {
            traj[i].steps.push_back(sample_step(prepared[i], states[i], branches[i], t, cfg, mc.vocab_size, rngs[i]));
        });
    }
    for (std::size_t i = 0; i < G; ++i) {
        traj[i].final_grid = std::move(states[i]);
        traj[i].final_embedding = world::embed(traj[i].final_grid, mc.vocab_size);
    }
    return traj;
}

template <class T>
std::vector<Trajectory> rollout_group(const model::ModelParams<T>& params, std::span<const int> prompt, int group_size,
                                      const SamplerConfig& cfg, std::uint64_t group_seed) {
    if (group_size < 2) fail(ErrorCode::GroupTooSmall, "group size must be >= 2");
    return decode(params, prompt, group_size, cfg, group_seed);
}

#define MASKFOCUS_INSTANTIATE_SAMPLER(T)                                                                        \
    template PreparedStep prepare_step<T>(const model::ModelParams<T>&, std::span<const int>, const TokenGrid&, \
                                          const SamplerConfig&);                                                \
    template StepRecord sample_step<T>(const model::ModelParams<T>&, std::span<const int>, TokenGrid&, Branch,  \
                                       int, const SamplerConfig&, Rng&);                                        \
    template std::vector<Trajectory> decode<T>(const model::ModelParams<T>&, std::span<const int>, int,         \
                                               const SamplerConfig&, std::uint64_t);                            \
    template std::vector<Trajectory> rollout_group<T>(const model::ModelParams<T>&, std::span<const int>, int,  \
                                                      const SamplerConfig&, std::uint64_t);

MASKFOCUS_INSTANTIATE_SAMPLER(float)
MASKFOCUS_INSTANTIATE_SAMPLER(double)

#undef MASKFOCUS_INSTANTIATE_SAMPLER

}  // namespace maskfocus::sampler
