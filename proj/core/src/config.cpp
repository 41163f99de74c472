#include "maskfocus/config.hpp"

#include <set>

#include "json.hpp"
#include "maskfocus/error.hpp"
#include "maskfocus/io.hpp"

namespace maskfocus {

using nlohmann::json;

namespace {

enum SeedStream : std::uint64_t { kInit = 1, kPretrain, kRl, kSampler, kEval };

// Reads known keys of one JSON object and rejects the rest.
class Section {
public:
    Section(const json& root, std::string name) : name_(std::move(name)) {
        if (!root.contains(name_)) return;
        obj_ = &root.at(name_);
        if (!obj_->is_object()) fail(ErrorCode::Config, "'" + name_ + "' must be an object");
    }

    template <class T>
    void get(const char* key, T& out) {
        seen_.insert(key);
        if (!obj_ || !obj_->contains(key)) return;
        try {
            out = obj_->at(key).get<T>();
        } catch (const json::exception&) {
            fail(ErrorCode::Config, name_ + "." + key + " has the wrong type");
        }
    }

    template <class E, class Parse>
    void get_enum(const char* key, E& out, Parse parse) {
        std::string text;
        bool present = obj_ && obj_->contains(key);
        get(key, text);
        if (!present) return;
        try {
            out = parse(text);
        } catch (const Error& e) {
            fail(ErrorCode::Config, name_ + "." + key + ": " + e.what());
        }
    }

    void get_tasks(const char* key, std::vector<world::Task>& out) {
        std::vector<std::string> names;
        bool present = obj_ && obj_->contains(key);
        get(key, names);
        if (!present) return;
        out.clear();
        for (const auto& n : names) {
            try {
                out.push_back(world::parse_task(n));
            } catch (const Error& e) {
                fail(ErrorCode::Config, name_ + "." + key + ": " + e.what());
            }
        }
    }

    void finish() const {
        if (!obj_) return;
        for (const auto& item : obj_->items()) {
            if (!seen_.count(item.key())) fail(ErrorCode::Config, "unknown key " + name_ + "." + item.key());
        }
    }

private:
    std::string name_;
    const json* obj_ = nullptr;
    std::set<std::string> seen_;
};

json task_names(const std::vector<world::Task>& tasks) {
    json out = json::array();
    for (auto t : tasks) out.push_back(std::string(world::to_string(t)));
    return out;
}

world::RewardMode parse_reward_mode(std::string_view s) {
    if (s == "shaped") return world::RewardMode::Shaped;
    if (s == "strict") return world::RewardMode::Strict;
    fail(ErrorCode::Config, "unknown reward mode '" + std::string(s) + "'");
}

}  // namespace

void RunConfig::resolve() {
    model.vocab_size = world.vocab_size;
    model.grid_height = world.height;
    model.grid_width = world.width;
    model.prompt_len = world.prompt_len;
    model.prompt_vocab = world.prompt_vocab_size();
    pretrain.seed = derive_seed(seed, kPretrain);
    rl.seed = derive_seed(seed, kRl);
    sampler.seed = derive_seed(seed, kSampler);
    eval.seed = derive_seed(seed, kEval);
}

std::uint64_t RunConfig::init_seed() const { return derive_seed(seed, kInit); }

RunConfig parse_config(std::string_view text) {
    json root;
    try {
        root = json::parse(text);
    } catch (const json::exception& e) {
        fail(ErrorCode::Config, std::string("config is not valid JSON: ") + e.what());
    }
    if (!root.is_object()) fail(ErrorCode::Config, "config must be a JSON object");
    static const std::set<std::string> top = {"world", "model", "sampler", "routing", "rl",
                                              "pretrain", "eval", "seed", "output_dir"};
    for (const auto& item : root.items()) {
        if (!top.count(item.key())) fail(ErrorCode::Config, "unknown key " + item.key());
    }

    RunConfig c;
    try {
        if (root.contains("seed")) c.seed = root.at("seed").get<std::uint64_t>();
        if (root.contains("output_dir")) c.output_dir = root.at("output_dir").get<std::string>();
    } catch (const json::exception&) {
        fail(ErrorCode::Config, "seed must be a non-negative integer and output_dir a string");
    }

    Section w(root, "world");
    w.get("height", c.world.height);
    w.get("width", c.world.width);
    w.get("vocab_size", c.world.vocab_size);
    w.get("prompt_len", c.world.prompt_len);
    w.get("max_count", c.world.max_count);
    w.get("max_object_side", c.world.max_object_side);
    w.finish();

    Section m(root, "model");
    m.get("layers", c.model.layers);
    m.get("width", c.model.width);
    m.get("heads", c.model.heads);
    m.get("ffn_mult", c.model.ffn_mult);
    m.get("init_std", c.model.init_std);
    m.finish();

    Section s(root, "sampler");
    s.get("steps", c.sampler.steps);
    s.get("cfg_scale", c.sampler.cfg_scale);
    s.get("base_temperature", c.sampler.base_temperature);
    s.get_enum("mode", c.sampler.routing.mode, sampler::parse_sampling_mode);
    s.get("guided_entropy", c.sampler.guided_entropy);
    s.get("gumbel_confidence", c.sampler.gumbel_confidence);
    s.get("gumbel_scale", c.sampler.gumbel_scale);
    s.finish();

    Section r(root, "routing");
    r.get("t_max", c.sampler.routing.t_max);
    r.get("alpha", c.sampler.routing.alpha);
    r.get("theta_floor", c.sampler.routing.theta_floor);
    r.finish();

    Section l(root, "rl");
    l.get("group_size", c.rl.group_size);
    l.get("critical_steps", c.rl.critical_steps);
    l.get("clip_eps", c.rl.clip_eps);
    l.get("kl_beta", c.rl.kl_beta);
    l.get("learning_rate", c.rl.learning_rate);
    l.get("clip_norm", c.rl.clip_norm);
    l.get("prompts_per_iteration", c.rl.prompts_per_iteration);
    l.get("minibatches_per_collection", c.rl.minibatches_per_collection);
    l.get("iterations", c.rl.iterations);
    l.get("cfg_scale", c.rl.cfg_scale);
    l.get("guided_likelihood", c.rl.guided_likelihood);
    l.get_enum("step_select", c.rl.step_select, css::parse_step_select);
    l.get_enum("mask_mode", c.rl.mask_mode, rl::parse_mask_mode);
    l.get_enum("reward_mode", c.rl.reward_mode, parse_reward_mode);
    l.get_tasks("tasks", c.rl.tasks);
    l.get("checkpoint_every", c.rl.checkpoint_every);
    l.finish();

    Section p(root, "pretrain");
    p.get("steps", c.pretrain.steps);
    p.get("batch_size", c.pretrain.batch_size);
    p.get("learning_rate", c.pretrain.learning_rate);
    p.get("warmup_steps", c.pretrain.warmup_steps);
    p.get("min_lr_ratio", c.pretrain.min_lr_ratio);
    p.get("dropout", c.pretrain.dropout);
    p.get("clip_norm", c.pretrain.clip_norm);
    p.get("log_every", c.pretrain.log_every);
    p.get_tasks("tasks", c.pretrain.tasks);
    p.finish();

    Section e(root, "eval");
    e.get("n_per_task", c.eval.n_per_task);
    e.get_tasks("tasks", c.eval.tasks);
    e.finish();

    c.resolve();
    validate(c);
    return c;
}

RunConfig load_config(const std::filesystem::path& path) {
    std::string text;
    try {
        text = io::read_file(path);
    } catch (const Error& e) {
        fail(ErrorCode::Config, std::string("cannot read config: ") + e.what());
    }
    return parse_config(text);
}

std::string serialize_config(const RunConfig& c) {
    json root;
    root["seed"] = c.seed;
    root["output_dir"] = c.output_dir;
    root["world"] = {{"height", c.world.height},       {"width", c.world.width},
                     {"vocab_size", c.world.vocab_size}, {"prompt_len", c.world.prompt_len},
                     {"max_count", c.world.max_count},   {"max_object_side", c.world.max_object_side}};
    root["model"] = {{"layers", c.model.layers},
                     {"width", c.model.width},
                     {"heads", c.model.heads},
                     {"ffn_mult", c.model.ffn_mult},
                     {"init_std", c.model.init_std}};
    root["sampler"] = {{"steps", c.sampler.steps},
                       {"cfg_scale", c.sampler.cfg_scale},
                       {"base_temperature", c.sampler.base_temperature},
                       {"mode", std::string(sampler::to_string(c.sampler.routing.mode))},
                       {"guided_entropy", c.sampler.guided_entropy},
                       {"gumbel_confidence", c.sampler.gumbel_confidence},
                       {"gumbel_scale", c.sampler.gumbel_scale}};
    root["routing"] = {{"t_max", c.sampler.routing.t_max},
                       {"alpha", c.sampler.routing.alpha},
                       {"theta_floor", c.sampler.routing.theta_floor}};
    root["rl"] = {{"group_size", c.rl.group_size},
                  {"critical_steps", c.rl.critical_steps},
                  {"clip_eps", c.rl.clip_eps},
                  {"kl_beta", c.rl.kl_beta},
                  {"learning_rate", c.rl.learning_rate},
                  {"clip_norm", c.rl.clip_norm},
                  {"prompts_per_iteration", c.rl.prompts_per_iteration},
                  {"minibatches_per_collection", c.rl.minibatches_per_collection},
                  {"iterations", c.rl.iterations},
                  {"cfg_scale", c.rl.cfg_scale},
                  {"guided_likelihood", c.rl.guided_likelihood},
                  {"step_select", std::string(css::to_string(c.rl.step_select))},
                  {"mask_mode", std::string(rl::to_string(c.rl.mask_mode))},
                  {"reward_mode", c.rl.reward_mode == world::RewardMode::Shaped ? "shaped" : "strict"},
                  {"tasks", task_names(c.rl.tasks)},
                  {"checkpoint_every", c.rl.checkpoint_every}};
    root["pretrain"] = {{"steps", c.pretrain.steps},
                        {"batch_size", c.pretrain.batch_size},
                        {"learning_rate", c.pretrain.learning_rate},
                        {"warmup_steps", c.pretrain.warmup_steps},
                        {"min_lr_ratio", c.pretrain.min_lr_ratio},
                        {"dropout", c.pretrain.dropout},
                        {"clip_norm", c.pretrain.clip_norm},
                        {"log_every", c.pretrain.log_every},
                        {"tasks", task_names(c.pretrain.tasks)}};
    root["eval"] = {{"n_per_task", c.eval.n_per_task}, {"tasks", task_names(c.eval.tasks)}};
    return root.dump(2) + '\n';
}

void validate(const RunConfig& c) {
    try {
        world::validate(c.world);
        model::validate(c.model);
        sampler::validate(c.sampler, c.world.grid_size());
        rl::validate(c.rl, c.sampler);
        pretrain::validate(c.pretrain);
        eval::validate(c.eval);
    } catch (const Error& e) {
        if (e.code() == ErrorCode::Config) throw;
        fail(ErrorCode::Config, e.what());
    }
}

}  // namespace maskfocus
