#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "maskfocus/grid.hpp"

// Procedural token-grid domain: structured prompts, scene generation,
// a handcrafted embedding and programmatic rewards.
namespace maskfocus::world {

enum class Task { SingleObject, TwoObject, Counting, ColorAttr, Position };
enum class Quadrant { NW, NE, SW, SE };
enum class RewardMode { Shaped, Strict };

inline constexpr int kNumTasks = 5;
inline constexpr Task kAllTasks[kNumTasks] = {Task::SingleObject, Task::TwoObject, Task::Counting,
                                              Task::ColorAttr, Task::Position};

std::string_view to_string(Task task);
std::string_view to_string(Quadrant q);
Task parse_task(std::string_view name);
Quadrant parse_quadrant(std::string_view name);

struct WorldConfig {
    int height = 8;
    int width = 8;
    int vocab_size = 8;  // |V|; color 0 is the background
    int prompt_len = 6;  // P
    int max_count = 4;   // largest n for Counting prompts
    int max_object_side = 3;

    int grid_size() const { return height * width; }
    // PAD, 5 task tokens, |V| color tokens, max_count numerals, 4 quadrants.
    int prompt_vocab_size() const { return 1 + kNumTasks + vocab_size + max_count + 4; }
    friend bool operator==(const WorldConfig&, const WorldConfig&) = default;
};

void validate(const WorldConfig& cfg);

// color is the primary target. color2 is the second object (TwoObject) or the
// small-role color (ColorAttr, where color takes the large role).
struct PromptSpec {
    Task task = Task::SingleObject;
    int color = 1;
    int color2 = 0;
    int count = 0;
    Quadrant quadrant = Quadrant::NW;

    friend bool operator==(const PromptSpec&, const PromptSpec&) = default;
};

void validate(const WorldConfig& cfg, const PromptSpec& spec);

std::vector<int> encode_prompt(const WorldConfig& cfg, const PromptSpec& spec);
PromptSpec decode_prompt(const WorldConfig& cfg, const std::vector<int>& tokens);

// Every valid spec, optionally restricted to one task, in a fixed order.
std::vector<PromptSpec> enumerate_specs(const WorldConfig& cfg, std::optional<Task> task = std::nullopt);

// Largest number of pairwise non-4-adjacent single cells on an h x w grid.
int max_separated_objects(int height, int width);

TokenGrid generate_scene(const WorldConfig& cfg, const PromptSpec& spec, std::uint64_t seed);

using Embedding = std::vector<double>;

// [normalized histogram (|V|) | per-color centroid (row, col) pairs (2|V|)], L2-normalized.
Embedding embed(const TokenGrid& grid, int vocab_size);
// Same layout before the final L2 normalization.
Embedding embed_unnormalized(const TokenGrid& grid, int vocab_size);

double cosine_similarity(const Embedding& a, const Embedding& b);

int count_components(const TokenGrid& grid, int color);
// Areas of the 4-connected components of `color`, in scan order of first cell.
std::vector<int> component_areas(const TokenGrid& grid, int color);

double reward(const TokenGrid& grid, const PromptSpec& spec, RewardMode mode = RewardMode::Shaped);

// {task, params, seed} record.
struct SceneRecord {
    PromptSpec spec;
    std::uint64_t seed = 0;
    friend bool operator==(const SceneRecord&, const SceneRecord&) = default;
};
std::string to_json(const SceneRecord& record);
SceneRecord scene_from_json(std::string_view text);
std::string spec_to_json(const PromptSpec& spec);
PromptSpec spec_from_json(std::string_view text);

// Binary PPM (P6), one `scale` x `scale` pixel block per token.
std::string to_ppm(const TokenGrid& grid, int scale = 16);
void write_ppm(const std::string& path, const TokenGrid& grid, int scale = 16);

}  // namespace maskfocus::world
