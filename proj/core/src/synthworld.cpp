#include "maskfocus/synthworld.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>

#include "json.hpp"
#include "maskfocus/error.hpp"
#include "maskfocus/rng.hpp"

namespace maskfocus::world {

using nlohmann::json;

namespace {

constexpr std::array<std::string_view, kNumTasks> kTaskNames = {"SingleObject", "TwoObject", "Counting",
                                                                "ColorAttr", "Position"};
constexpr std::array<std::string_view, 4> kQuadrantNames = {"NW", "NE", "SW", "SE"};

// Prompt-token layout offsets.
int task_token(Task t) { return 1 + static_cast<int>(t); }
int color_token(int c) { return 1 + kNumTasks + c; }
int count_token(const WorldConfig& cfg, int n) { return 1 + kNumTasks + cfg.vocab_size + (n - 1); }
int quadrant_token(const WorldConfig& cfg, Quadrant q) {
    return 1 + kNumTasks + cfg.vocab_size + cfg.max_count + static_cast<int>(q);
}

bool uses_color2(Task t) { return t == Task::TwoObject || t == Task::ColorAttr; }

struct Rect {
    int row, col, h, w;
};

// Occupancy with a one-cell halo so that separately placed objects never
// share an edge (each object stays its own 4-connected component).
class Canvas {
public:
    Canvas(int h, int w) : h_(h), w_(w), blocked_(static_cast<std::size_t>(h * w), 0) {}

    bool fits(const Rect& r) const {
        if (r.row < 0 || r.col < 0 || r.row + r.h > h_ || r.col + r.w > w_) return false;
        for (int i = r.row; i < r.row + r.h; ++i) {
            for (int j = r.col; j < r.col + r.w; ++j) {
                if (blocked_[static_cast<std::size_t>(i * w_ + j)]) return false;
            }
        }
        return true;
    }

    void place(const Rect& r) {
        for (int i = std::max(0, r.row - 1); i < std::min(h_, r.row + r.h + 1); ++i) {
            for (int j = std::max(0, r.col - 1); j < std::min(w_, r.col + r.w + 1); ++j) {
                const bool corner = (i < r.row || i >= r.row + r.h) && (j < r.col || j >= r.col + r.w);
                if (!corner) blocked_[static_cast<std::size_t>(i * w_ + j)] = 1;
            }
        }
    }

private:
    int h_, w_;
    std::vector<std::uint8_t> blocked_;
};

enum class SizeClass { Any, Large, Small };

struct ObjectReq {
    int color;
    SizeClass size;
    int row_lo, row_hi, col_lo, col_hi;  // allowed region, half-open
};

bool size_ok(SizeClass s, int h, int w) {
    switch (s) {
        case SizeClass::Any: return true;
        case SizeClass::Large: return h * w >= 4;
        case SizeClass::Small: return h * w <= 2;
    }
    return false;
}

std::vector<ObjectReq> requirements(const WorldConfig& cfg, const PromptSpec& spec) {
    const int H = cfg.height, W = cfg.width;
    std::vector<ObjectReq> reqs;
    switch (spec.task) {
        case Task::SingleObject:
            reqs.push_back({spec.color, SizeClass::Any, 0, H, 0, W});
            break;
        case Task::TwoObject:
            reqs.push_back({spec.color, SizeClass::Any, 0, H, 0, W});
            reqs.push_back({spec.color2, SizeClass::Any, 0, H, 0, W});
            break;
        case Task::Counting:
            for (int i = 0; i < spec.count; ++i) reqs.push_back({spec.color, SizeClass::Any, 0, H, 0, W});
            break;
        case Task::ColorAttr:
            reqs.push_back({spec.color, SizeClass::Large, 0, H, 0, W});
            reqs.push_back({spec.color2, SizeClass::Small, 0, H, 0, W});
            break;
        case Task::Position: {
            const bool north = spec.quadrant == Quadrant::NW || spec.quadrant == Quadrant::NE;
            const bool west = spec.quadrant == Quadrant::NW || spec.quadrant == Quadrant::SW;
            // Strict halves: for odd sizes the middle row/column is excluded.
            const int rlo = north ? 0 : (H + 1) / 2, rhi = north ? H / 2 : H;
            const int clo = west ? 0 : (W + 1) / 2, chi = west ? W / 2 : W;
            reqs.push_back({spec.color, SizeClass::Any, rlo, rhi, clo, chi});
            break;
        }
    }
    return reqs;
}

bool try_layout(const WorldConfig& cfg, const std::vector<ObjectReq>& reqs, Rng& rng, TokenGrid& out) {
    Canvas canvas(cfg.height, cfg.width);
    TokenGrid grid(cfg.height, cfg.width, 0);
    const int side = cfg.max_object_side;
    for (const auto& req : reqs) {
        bool placed = false;
        for (int attempt = 0; attempt < 100 && !placed; ++attempt) {
            const int h = rng.uniform_int(1, side);
            const int w = rng.uniform_int(1, side);
            if (!size_ok(req.size, h, w)) continue;
            if (req.row_hi - req.row_lo < h || req.col_hi - req.col_lo < w) continue;
            const Rect r{rng.uniform_int(req.row_lo, req.row_hi - h), rng.uniform_int(req.col_lo, req.col_hi - w), h,
                         w};
            if (!canvas.fits(r)) continue;
            canvas.place(r);
            for (int i = r.row; i < r.row + r.h; ++i) {
                for (int j = r.col; j < r.col + r.w; ++j) grid.tokens[static_cast<std::size_t>(i * cfg.width + j)] = req.color;
            }
            placed = true;
        }
        if (!placed) return false;
    }
    out = std::move(grid);
    return true;
}

// Checkerboard cells are pairwise non-adjacent; any n of them realize n components.
TokenGrid checkerboard_layout(const WorldConfig& cfg, int color, int n, Rng& rng) {
    std::vector<int> cells;
    for (int i = 0; i < cfg.height; ++i) {
        for (int j = 0; j < cfg.width; ++j) {
            if ((i + j) % 2 == 0) cells.push_back(i * cfg.width + j);
        }
    }
    rng.shuffle(cells);
    TokenGrid grid(cfg.height, cfg.width, 0);
    for (int k = 0; k < n; ++k) grid.tokens[static_cast<std::size_t>(cells[static_cast<std::size_t>(k)])] = color;
    return grid;
}

void require_unmasked(const TokenGrid& grid) {
    if (!grid.fully_unmasked()) fail(ErrorCode::MaskedInput, "grid has masked positions");
}

}  // namespace

std::string_view to_string(Task task) { return kTaskNames[static_cast<std::size_t>(task)]; }
std::string_view to_string(Quadrant q) { return kQuadrantNames[static_cast<std::size_t>(q)]; }

Task parse_task(std::string_view name) {
    for (int i = 0; i < kNumTasks; ++i) {
        if (kTaskNames[static_cast<std::size_t>(i)] == name) return static_cast<Task>(i);
    }
    fail(ErrorCode::MalformedInput, "unknown task '" + std::string(name) + "'");
}

Quadrant parse_quadrant(std::string_view name) {
    for (int i = 0; i < 4; ++i) {
        if (kQuadrantNames[static_cast<std::size_t>(i)] == name) return static_cast<Quadrant>(i);
    }
    fail(ErrorCode::MalformedInput, "unknown quadrant '" + std::string(name) + "'");
}

void validate(const WorldConfig& cfg) {
    if (cfg.height < 2 || cfg.width < 2) fail(ErrorCode::Config, "grid must be at least 2x2");
    if (cfg.vocab_size < 3) fail(ErrorCode::Config, "vocab_size must be >= 3");
    if (cfg.prompt_len < 5) fail(ErrorCode::Config, "prompt_len must be >= 5");
    if (cfg.max_count < 1) fail(ErrorCode::Config, "max_count must be >= 1");
    if (cfg.max_object_side < 1) fail(ErrorCode::Config, "max_object_side must be >= 1");
}

void validate(const WorldConfig& cfg, const PromptSpec& spec) {
    auto color_ok = [&](int c) { return c >= 1 && c < cfg.vocab_size; };
    if (!color_ok(spec.color)) fail(ErrorCode::InvalidArgument, "target color out of range");
    if (uses_color2(spec.task)) {
        if (!color_ok(spec.color2)) fail(ErrorCode::InvalidArgument, "second color out of range");
        if (spec.color2 == spec.color) fail(ErrorCode::InvalidArgument, "colors must differ");
    }
    if (spec.task == Task::Counting && spec.count < 1) fail(ErrorCode::InvalidArgument, "count must be >= 1");
}

std::vector<int> encode_prompt(const WorldConfig& cfg, const PromptSpec& spec) {
    validate(cfg, spec);
    if (spec.task == Task::Counting && spec.count > cfg.max_count) {
        fail(ErrorCode::InvalidArgument, "count exceeds max_count");
    }
    std::vector<int> tokens(static_cast<std::size_t>(cfg.prompt_len), 0);
    tokens[0] = task_token(spec.task);
    tokens[1] = color_token(spec.color);
    if (uses_color2(spec.task)) tokens[2] = color_token(spec.color2);
    if (spec.task == Task::Counting) tokens[3] = count_token(cfg, spec.count);
    if (spec.task == Task::Position) tokens[4] = quadrant_token(cfg, spec.quadrant);
    return tokens;
}

PromptSpec decode_prompt(const WorldConfig& cfg, const std::vector<int>& tokens) {
    if (static_cast<int>(tokens.size()) != cfg.prompt_len) fail(ErrorCode::MalformedInput, "prompt length");
    PromptSpec spec;
    const int t = tokens[0] - 1;
    if (t < 0 || t >= kNumTasks) fail(ErrorCode::MalformedInput, "bad task token");
    spec.task = static_cast<Task>(t);
    spec.color = tokens[1] - color_token(0);
    spec.color2 = uses_color2(spec.task) ? tokens[2] - color_token(0) : 0;
    spec.count = spec.task == Task::Counting ? tokens[3] - count_token(cfg, 1) + 1 : 0;
    if (spec.task == Task::Position) {
        const int q = tokens[4] - quadrant_token(cfg, Quadrant::NW);
        if (q < 0 || q > 3) fail(ErrorCode::MalformedInput, "bad quadrant token");
        spec.quadrant = static_cast<Quadrant>(q);
    }
    // Round-trip guarantees every slot, including PAD slots, was canonical.
    if (encode_prompt(cfg, spec) != tokens) fail(ErrorCode::MalformedInput, "non-canonical prompt tokens");
    return spec;
}

std::vector<PromptSpec> enumerate_specs(const WorldConfig& cfg, std::optional<Task> task) {
    std::vector<PromptSpec> out;
    auto want = [&](Task t) { return !task || *task == t; };
    const int V = cfg.vocab_size;
    for (Task t : kAllTasks) {
        if (!want(t)) continue;
        for (int c = 1; c < V; ++c) {
            switch (t) {
                case Task::SingleObject: out.push_back({t, c, 0, 0, Quadrant::NW}); break;
                case Task::TwoObject:
                case Task::ColorAttr:
                    for (int c2 = 1; c2 < V; ++c2) {
                        if (c2 != c) out.push_back({t, c, c2, 0, Quadrant::NW});
                    }
                    break;
                case Task::Counting:
                    for (int n = 1; n <= cfg.max_count; ++n) out.push_back({t, c, 0, n, Quadrant::NW});
                    break;
                case Task::Position:
                    for (int q = 0; q < 4; ++q) out.push_back({t, c, 0, 0, static_cast<Quadrant>(q)});
                    break;
            }
        }
    }
    return out;
}

int max_separated_objects(int height, int width) { return (height * width + 1) / 2; }

TokenGrid generate_scene(const WorldConfig& cfg, const PromptSpec& spec, std::uint64_t seed) {
    validate(cfg, spec);
    if (spec.task == Task::Counting && spec.count > max_separated_objects(cfg.height, cfg.width)) {
        fail(ErrorCode::UnsatisfiableSpec, "cannot fit " + std::to_string(spec.count) + " separate objects");
    }
    std::uint64_t key = static_cast<std::uint64_t>(spec.task);
    for (int v : {spec.color, spec.color2, spec.count, static_cast<int>(spec.quadrant)}) {
        key = key * 1000003u + static_cast<std::uint64_t>(v);
    }
    Rng rng(derive_seed(seed, key));
    const auto reqs = requirements(cfg, spec);
    TokenGrid grid;
    for (int trial = 0; trial < 64; ++trial) {
        if (try_layout(cfg, reqs, rng, grid)) return grid;
    }
    if (spec.task == Task::Counting) return checkerboard_layout(cfg, spec.color, spec.count, rng);
    fail(ErrorCode::UnsatisfiableSpec, "no layout found for " + std::string(to_string(spec.task)));
}

Embedding embed_unnormalized(const TokenGrid& grid, int vocab_size) {
    require_unmasked(grid);
    const std::size_t V = static_cast<std::size_t>(vocab_size);
    Embedding e(3 * V, 0.0);
    std::vector<double> rows(V, 0.0), cols(V, 0.0), counts(V, 0.0);
    for (int i = 0; i < grid.height; ++i) {
        for (int j = 0; j < grid.width; ++j) {
            const int tok = grid.at(i, j);
            if (tok < 0 || tok >= vocab_size) fail(ErrorCode::InvalidArgument, "token outside codebook");
            const auto c = static_cast<std::size_t>(tok);
            counts[c] += 1.0;
            rows[c] += (i + 0.5) / grid.height;
            cols[c] += (j + 0.5) / grid.width;
        }
    }
    const double n = grid.size();
    for (std::size_t c = 0; c < V; ++c) {
        e[c] = counts[c] / n;
        if (counts[c] > 0) {
            e[V + 2 * c] = rows[c] / counts[c];
            e[V + 2 * c + 1] = cols[c] / counts[c];
        }
    }
    return e;
}

Embedding embed(const TokenGrid& grid, int vocab_size) {
    Embedding e = embed_unnormalized(grid, vocab_size);
    double norm = 0.0;
    for (double v : e) norm += v * v;
    norm = std::sqrt(norm);
    for (double& v : e) v /= norm;
    return e;
}

double cosine_similarity(const Embedding& a, const Embedding& b) {
    if (a.size() != b.size()) fail(ErrorCode::ShapeMismatch, "embedding dimensions differ");
    double dot = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0 || nb == 0) return 0.0;
    return std::clamp(dot / std::sqrt(na * nb), -1.0, 1.0);
}

std::vector<int> component_areas(const TokenGrid& grid, int color) {
    require_unmasked(grid);
    const int H = grid.height, W = grid.width;
    std::vector<std::uint8_t> seen(static_cast<std::size_t>(H * W), 0);
    std::vector<int> areas;
    std::vector<int> stack;
    for (int start = 0; start < H * W; ++start) {
        if (seen[static_cast<std::size_t>(start)] || grid.tokens[static_cast<std::size_t>(start)] != color) continue;
        int area = 0;
        stack.assign(1, start);
        seen[static_cast<std::size_t>(start)] = 1;
        while (!stack.empty()) {
            const int p = stack.back();
            stack.pop_back();
            ++area;
            const int r = p / W, c = p % W;
            const int nbrs[4][2] = {{r - 1, c}, {r + 1, c}, {r, c - 1}, {r, c + 1}};
            for (const auto& nb : nbrs) {
                if (nb[0] < 0 || nb[0] >= H || nb[1] < 0 || nb[1] >= W) continue;
                const int q = nb[0] * W + nb[1];
                if (!seen[static_cast<std::size_t>(q)] && grid.tokens[static_cast<std::size_t>(q)] == color) {
                    seen[static_cast<std::size_t>(q)] = 1;
                    stack.push_back(q);
                }
            }
        }
        areas.push_back(area);
    }
    return areas;
}

int count_components(const TokenGrid& grid, int color) {
    return static_cast<int>(component_areas(grid, color).size());
}

double reward(const TokenGrid& grid, const PromptSpec& spec, RewardMode mode) {
    require_unmasked(grid);
    const bool strict = mode == RewardMode::Strict;
    switch (spec.task) {
        case Task::SingleObject:
            return count_components(grid, spec.color) >= 1 ? 1.0 : 0.0;
        case Task::TwoObject: {
            const int present = (count_components(grid, spec.color) >= 1) + (count_components(grid, spec.color2) >= 1);
            if (strict) return present == 2 ? 1.0 : 0.0;
            return 0.5 * present;
        }
        case Task::Counting: {
            const int count = count_components(grid, spec.color);
            if (strict) return count == spec.count ? 1.0 : 0.0;
            return std::max(0.0, 1.0 - std::abs(count - spec.count) / static_cast<double>(spec.count));
        }
        case Task::ColorAttr: {
            const auto big = component_areas(grid, spec.color);
            const auto small = component_areas(grid, spec.color2);
            const bool big_ok = std::any_of(big.begin(), big.end(), [](int a) { return a >= 4; });
            const bool small_ok =
                !small.empty() && std::all_of(small.begin(), small.end(), [](int a) { return a <= 2; });
            const int satisfied = big_ok + small_ok;
            if (strict) return satisfied == 2 ? 1.0 : 0.0;
            return 0.5 * satisfied;
        }
        case Task::Position: {
            double rsum = 0, csum = 0;
            int n = 0;
            for (int i = 0; i < grid.height; ++i) {
                for (int j = 0; j < grid.width; ++j) {
                    if (grid.at(i, j) != spec.color) continue;
                    rsum += (i + 0.5) / grid.height;
                    csum += (j + 0.5) / grid.width;
                    ++n;
                }
            }
            if (n == 0) return 0.0;
            const double r = rsum / n, c = csum / n;
            bool inside = false;
            switch (spec.quadrant) {
                case Quadrant::NW: inside = r < 0.5 && c < 0.5; break;
                case Quadrant::NE: inside = r < 0.5 && c > 0.5; break;
                case Quadrant::SW: inside = r > 0.5 && c < 0.5; break;
                case Quadrant::SE: inside = r > 0.5 && c > 0.5; break;
            }
            return inside ? 1.0 : 0.0;
        }
    }
    return 0.0;
}

namespace {

json spec_params(const PromptSpec& spec) {
    json p;
    p["color"] = spec.color;
    if (uses_color2(spec.task)) p["color2"] = spec.color2;
    if (spec.task == Task::Counting) p["count"] = spec.count;
    if (spec.task == Task::Position) p["quadrant"] = std::string(to_string(spec.quadrant));
    return p;
}

PromptSpec spec_from(const json& j) {
    try {
        PromptSpec spec;
        spec.task = parse_task(j.at("task").get<std::string>());
        const json& p = j.at("params");
        for (auto it = p.begin(); it != p.end(); ++it) {
            const std::string& k = it.key();
            if (k != "color" && k != "color2" && k != "count" && k != "quadrant") {
                fail(ErrorCode::MalformedInput, "unknown param '" + k + "'");
            }
        }
        spec.color = p.at("color").get<int>();
        if (uses_color2(spec.task)) spec.color2 = p.at("color2").get<int>();
        if (spec.task == Task::Counting) spec.count = p.at("count").get<int>();
        if (spec.task == Task::Position) spec.quadrant = parse_quadrant(p.at("quadrant").get<std::string>());
        return spec;
    } catch (const json::exception& e) {
        fail(ErrorCode::MalformedInput, e.what());
    }
}

}  // namespace

std::string spec_to_json(const PromptSpec& spec) {
    json j;
    j["task"] = std::string(to_string(spec.task));
    j["params"] = spec_params(spec);
    return j.dump();
}

PromptSpec spec_from_json(std::string_view text) {
    try {
        return spec_from(json::parse(text));
    } catch (const json::exception& e) {
        fail(ErrorCode::MalformedInput, e.what());
    }
}

std::string to_json(const SceneRecord& record) {
    json j;
    j["task"] = std::string(to_string(record.spec.task));
    j["params"] = spec_params(record.spec);
    j["seed"] = record.seed;
    return j.dump();
}

SceneRecord scene_from_json(std::string_view text) {
    try {
        const json j = json::parse(text);
        return SceneRecord{spec_from(j), j.at("seed").get<std::uint64_t>()};
    } catch (const json::exception& e) {
        fail(ErrorCode::MalformedInput, e.what());
    }
}

std::string to_ppm(const TokenGrid& grid, int scale) {
    static constexpr std::array<std::array<unsigned char, 3>, 16> palette = {{
        {235, 235, 235}, {220, 40, 40},  {40, 170, 60},   {40, 80, 220},  {240, 200, 30}, {190, 60, 190},
        {40, 190, 200},  {245, 130, 30}, {120, 80, 40},   {20, 20, 20},   {250, 150, 180}, {100, 100, 160},
        {160, 200, 90},  {90, 40, 110},  {200, 170, 120}, {60, 120, 120},
    }};
    static constexpr std::array<unsigned char, 3> masked = {128, 128, 128};
    const int W = grid.width * scale, H = grid.height * scale;
    std::string out = "P6\n" + std::to_string(W) + " " + std::to_string(H) + "\n255\n";
    out.reserve(out.size() + static_cast<std::size_t>(W * H * 3));
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            const int pos = (y / scale) * grid.width + x / scale;
            const auto& px = grid.masked(pos) ? masked
                                              : palette[static_cast<std::size_t>(grid.tokens[static_cast<std::size_t>(pos)]) % palette.size()];
            out.append(reinterpret_cast<const char*>(px.data()), 3);
        }
    }
    return out;
}

void write_ppm(const std::string& path, const TokenGrid& grid, int scale) {
    std::ofstream f(path, std::ios::binary);
    if (!f) fail(ErrorCode::Io, "cannot open " + path);
    const std::string data = to_ppm(grid, scale);
    f.write(data.data(), static_cast<std::streamsize>(data.size()));
}

}  // namespace maskfocus::world
