#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <vector>

#include "maskfocus/css.hpp"
#include "maskfocus/grid.hpp"
#include "maskfocus/model.hpp"
#include "maskfocus/rl.hpp"
#include "maskfocus/rng.hpp"
#include "maskfocus/sampler.hpp"
#include "maskfocus/synthworld.hpp"

namespace mft {

using namespace maskfocus;

// 3x3 grid, 3 colors: small enough for finite differences in double.
inline world::WorldConfig tiny_world() {
    world::WorldConfig w;
    w.height = 3;
    w.width = 3;
    w.vocab_size = 3;
    w.prompt_len = 5;
    w.max_count = 2;
    w.max_object_side = 2;
    return w;
}

inline model::ModelConfig model_for(const world::WorldConfig& w, int layers, int width, int heads) {
    model::ModelConfig m;
    m.vocab_size = w.vocab_size;
    m.grid_height = w.height;
    m.grid_width = w.width;
    m.prompt_len = w.prompt_len;
    m.prompt_vocab = w.prompt_vocab_size();
    m.layers = layers;
    m.width = width;
    m.heads = heads;
    m.ffn_mult = 2;
    m.init_std = 0.3;
    return m;
}

inline model::ModelConfig tiny_model() { return model_for(tiny_world(), 2, 8, 2); }

// Default-sized world with a narrow network, for sampler and trainer tests.
inline model::ModelConfig small_model() { return model_for(world::WorldConfig{}, 1, 16, 2); }

inline std::vector<double> random_direction(std::size_t n, Rng& rng) {
    std::vector<double> d(n);
    double norm = 0;
    for (auto& v : d) {
        v = rng.normal();
        norm += v * v;
    }
    norm = std::sqrt(norm);
    for (auto& v : d) v /= norm;
    return d;
}

struct DirectionalCheck {
    double analytic = 0;
    double numeric = 0;
    double rel_error = 0;
};

// Central difference of f along d versus <grad, d>.
inline DirectionalCheck directional_check(const model::ModelParams<double>& p, const std::vector<double>& grad,
                                          const std::vector<double>& d,
                                          const std::function<double(const model::ModelParams<double>&)>& f,
                                          double h = 1e-5) {
    model::ModelParams<double> plus = p, minus = p;
    auto pv = plus.values();
    auto mv = minus.values();
    for (std::size_t i = 0; i < d.size(); ++i) {
        pv[i] += h * d[i];
        mv[i] -= h * d[i];
    }
    DirectionalCheck c;
    c.numeric = (f(plus) - f(minus)) / (2 * h);
    for (std::size_t i = 0; i < d.size(); ++i) c.analytic += grad[i] * d[i];
    const double scale = std::max({std::abs(c.numeric), std::abs(c.analytic), 1e-8});
    c.rel_error = std::abs(c.numeric - c.analytic) / scale;
    return c;
}

// Union-find over 4-neighbour pairs, written independently of the library's labeling.
inline int union_find_components(const TokenGrid& g, int color) {
    std::vector<int> parent(static_cast<std::size_t>(g.size()));
    std::iota(parent.begin(), parent.end(), 0);
    std::function<int(int)> find = [&](int x) { return parent[x] == x ? x : parent[x] = find(parent[x]); };
    auto unite = [&](int a, int b) { parent[find(a)] = find(b); };
    for (int r = 0; r < g.height; ++r) {
        for (int c = 0; c < g.width; ++c) {
            const int k = r * g.width + c;
            if (g.tokens[k] != color) continue;
            if (c + 1 < g.width && g.tokens[k + 1] == color) unite(k, k + 1);
            if (r + 1 < g.height && g.tokens[k + g.width] == color) unite(k, k + g.width);
        }
    }
    int n = 0;
    for (int k = 0; k < g.size(); ++k) n += g.tokens[k] == color && find(k) == k;
    return n;
}

inline TokenGrid random_grid(int h, int w, int vocab, Rng& rng) {
    TokenGrid g(h, w);
    for (auto& t : g.tokens) t = static_cast<int>(rng.below(static_cast<std::uint64_t>(vocab)));
    return g;
}

// Sort all (V_t, t) descending by V then ascending t, keep K, return sorted steps.
inline std::vector<int> brute_force_select(const std::vector<double>& v, int k) {
    std::vector<std::pair<double, int>> pairs;
    for (std::size_t i = 0; i < v.size(); ++i) pairs.push_back({v[i], static_cast<int>(i) + 1});
    std::sort(pairs.begin(), pairs.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    });
    std::vector<int> out;
    for (int i = 0; i < k; ++i) out.push_back(pairs[static_cast<std::size_t>(i)].second);
    std::sort(out.begin(), out.end());
    return out;
}

// A GRPO batch for one tiny-world group, log-probs cached under (old, ref).
inline rl::GRPOBatch<double> tiny_batch(const model::ModelParams<double>& old, const model::ModelParams<double>& ref,
                                        const rl::TrainConfig& cfg, std::uint64_t seed, rl::SnapshotIds ids) {
    const auto w = tiny_world();
    sampler::SamplerConfig sc;
    sc.steps = 4;
    sc.cfg_scale = cfg.cfg_scale;
    world::PromptSpec spec{world::Task::Counting, 1, 0, 2, world::Quadrant::NW};
    auto group = rl::rollout_and_score(old, w, spec, sc, cfg, seed);
    auto records = css::build_records(group.trajectories, cfg.critical_steps);
    rl::GRPOBatch<double> batch;
    batch.entries = rl::make_entries<double>(group, records, cfg.mask_mode, derive_seed(seed, 1), 0);
    rl::cache_log_probs(batch, old, ref, ids, cfg.policy());
    // Rewards of a random model are often all equal; force a spread of advantages.
    for (std::size_t i = 0; i < batch.entries.size(); ++i) {
        batch.entries[i].advantage = (i % 3 == 0) ? 1.3 : (i % 3 == 1 ? -0.7 : 0.4);
    }
    return batch;
}

inline model::ModelParams<double> perturbed(const model::ModelParams<double>& p, double scale, std::uint64_t seed) {
    auto out = p;
    Rng rng(seed);
    for (auto& v : out.values()) v += scale * rng.normal();
    return out;
}

}  // namespace mft
