#include "maskfocus/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "maskfocus/error.hpp"

namespace maskfocus::model {

using nlohmann::json;

namespace {

constexpr const char* kFormat = "maskfocus-checkpoint";
constexpr int kVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

json model_to_json(const ModelConfig& m) {
    return json{{"vocab_size", m.vocab_size}, {"grid_height", m.grid_height}, {"grid_width", m.grid_width},
                {"prompt_len", m.prompt_len}, {"prompt_vocab", m.prompt_vocab}, {"layers", m.layers},
                {"width", m.width},           {"heads", m.heads},             {"ffn_mult", m.ffn_mult},
                {"init_std", m.init_std}};
}

ModelConfig model_from_json(const json& j) {
    ModelConfig m;
    m.vocab_size = j.at("vocab_size").get<int>();
    m.grid_height = j.at("grid_height").get<int>();
    m.grid_width = j.at("grid_width").get<int>();
    m.prompt_len = j.at("prompt_len").get<int>();
    m.prompt_vocab = j.at("prompt_vocab").get<int>();
    m.layers = j.at("layers").get<int>();
    m.width = j.at("width").get<int>();
    m.heads = j.at("heads").get<int>();
    m.ffn_mult = j.at("ffn_mult").get<int>();
    m.init_std = j.at("init_std").get<double>();
    return m;
}

}  // namespace

std::string manifest_json(const ModelParams<float>& params, const CheckpointMeta& meta) {
    json tensors = json::array();
    for (const auto& t : params.layout().tensors()) {
        tensors.push_back({{"name", t.name}, {"shape", {t.rows, t.cols}}});
    }
    json j{{"format", kFormat},
           {"version", kVersion},
           {"tag", meta.tag},
           {"model", model_to_json(params.config())},
           {"seed", meta.seed},
           {"step", meta.step},
           {"param_count", params.size()},
           {"dtype", "float32-le"},
           {"blob", "params.bin"},
           {"metrics", meta.metrics},
           {"tensors", tensors}};
    return j.dump(2);
}

void save_checkpoint(const std::filesystem::path& dir, const ModelParams<float>& params, const CheckpointMeta& meta) {
    std::filesystem::create_directories(dir);
    {
        std::ofstream f(dir / "manifest.json");
        if (!f) fail(ErrorCode::Io, "cannot write " + (dir / "manifest.json").string());
        f << manifest_json(params, meta) << "\n";
    }
    std::ofstream blob(dir / "params.bin", std::ios::binary);
    if (!blob) fail(ErrorCode::Io, "cannot write " + (dir / "params.bin").string());
    const auto values = params.values();
    blob.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size_bytes()));
    if (!blob) fail(ErrorCode::Io, "short write to params.bin");
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& dir) {
    std::ifstream mf(dir / "manifest.json");
    if (!mf) fail(ErrorCode::Config, "checkpoint manifest not found in " + dir.string());
    json j;
    try {
        j = json::parse(mf);
    } catch (const json::exception& e) {
        fail(ErrorCode::MalformedInput, std::string("manifest: ") + e.what());
    }
    LoadedCheckpoint out;
    try {
        if (j.at("format").get<std::string>() != kFormat) fail(ErrorCode::MalformedInput, "not a checkpoint");
        if (j.at("version").get<int>() != kVersion) fail(ErrorCode::MalformedInput, "unsupported version");
        out.meta.model = model_from_json(j.at("model"));
        out.meta.seed = j.at("seed").get<std::uint64_t>();
        out.meta.step = j.at("step").get<std::int64_t>();
        out.meta.tag = j.at("tag").get<std::string>();
        out.meta.metrics = j.value("metrics", std::map<std::string, double>{});
        out.params = ModelParams<float>(out.meta.model);

        const auto& tensors = j.at("tensors");
        const auto& expected = out.params.layout().tensors();
        if (tensors.size() != expected.size()) fail(ErrorCode::ShapeMismatch, "tensor count differs");
        for (std::size_t i = 0; i < expected.size(); ++i) {
            const auto& t = tensors[i];
            const auto shape = t.at("shape").get<std::vector<int>>();
            if (t.at("name").get<std::string>() != expected[i].name || shape.size() != 2 ||
                shape[0] != expected[i].rows || shape[1] != expected[i].cols) {
                fail(ErrorCode::ShapeMismatch, "tensor " + expected[i].name + " does not match the architecture");
            }
        }
        if (j.at("param_count").get<std::size_t>() != out.params.size()) {
            fail(ErrorCode::ShapeMismatch, "param_count does not match the architecture");
        }
    } catch (const json::exception& e) {
        fail(ErrorCode::MalformedInput, std::string("manifest: ") + e.what());
    }

    std::ifstream blob(dir / "params.bin", std::ios::binary | std::ios::ate);
    if (!blob) fail(ErrorCode::Config, "params.bin not found in " + dir.string());
    const auto bytes = static_cast<std::size_t>(blob.tellg());
    auto values = out.params.values();
    if (bytes != values.size_bytes()) fail(ErrorCode::ShapeMismatch, "params.bin size does not match manifest");
    blob.seekg(0);
    blob.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(bytes));
    if (!blob) fail(ErrorCode::Io, "short read from params.bin");
    return out;
}

}  // namespace maskfocus::model
