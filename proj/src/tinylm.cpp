#include "sgrpo/tinylm.hpp"

#include <cstring>
#include <fstream>

#include <json.hpp>

namespace sgrpo {

namespace {

using nlohmann::json;

constexpr char kMagic[8] = {'S', 'G', 'R', 'P', 'O', 'C', 'K', '1'};

json config_to_json(const ModelConfig& c) {
    return json{{"vocab_size", c.vocab_size}, {"d_model", c.d_model},
                {"n_layers", c.n_layers},     {"n_heads", c.n_heads},
                {"d_ff", c.d_ff},             {"max_seq_len", c.max_seq_len},
                {"seed", c.seed}};
}

ModelConfig config_from_json(const json& j) {
    ModelConfig c;
    c.vocab_size = j.at("vocab_size").get<int>();
    c.d_model = j.at("d_model").get<int>();
    c.n_layers = j.at("n_layers").get<int>();
    c.n_heads = j.at("n_heads").get<int>();
    c.d_ff = j.at("d_ff").get<int>();
    c.max_seq_len = j.at("max_seq_len").get<int>();
    c.seed = j.at("seed").get<uint64_t>();
    return c;
}

void write_file(const std::string& path, const json& header, std::span<const float> data) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open checkpoint for writing: " + path);
    std::string hs = header.dump();
    uint32_t hlen = static_cast<uint32_t>(hs.size());
    f.write(kMagic, sizeof(kMagic));
    f.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
    f.write(hs.data(), hlen);
    // parameters are stored little-endian float32; this build targets LE hosts
    f.write(reinterpret_cast<const char*>(data.data()), data.size() * sizeof(float));
    if (!f) throw std::runtime_error("checkpoint write failed: " + path);
}

std::pair<json, std::vector<float>> read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open checkpoint: " + path);
    char magic[8];
    f.read(magic, sizeof(magic));
    if (!f || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw std::runtime_error("bad checkpoint magic: " + path);
    uint32_t hlen = 0;
    f.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
    std::string hs(hlen, '\0');
    f.read(hs.data(), hlen);
    json header = json::parse(hs);
    size_t n = header.at("param_count").get<size_t>();
    std::vector<float> data(n);
    f.read(reinterpret_cast<char*>(data.data()), n * sizeof(float));
    if (!f) throw std::runtime_error("truncated checkpoint: " + path);
    return {std::move(header), std::move(data)};
}

}  // namespace

void save_checkpoint(const std::string& path, const Model& params) {
    json header{{"kind", "target"},
                {"config", config_to_json(params.config)},
                {"param_count", params.param_count()}};
    write_file(path, header, params.flat);
}

Model load_checkpoint(const std::string& path) {
    auto [header, data] = read_file(path);
    if (header.at("kind").get<std::string>() != "target")
        throw std::runtime_error("checkpoint kind mismatch (expected target): " + path);
    Model m = init_model<float>(config_from_json(header.at("config")));
    if (m.param_count() != data.size())
        throw std::runtime_error("checkpoint param count mismatch: " + path);
    m.flat = std::move(data);
    return m;
}

void save_draft_checkpoint(const std::string& path, const Draft& params) {
    json header{{"kind", "draft"},
                {"config", config_to_json(params.config)},
                {"draft_layers", params.n_layers},
                {"param_count", params.param_count()}};
    write_file(path, header, params.flat);
}

Draft load_draft_checkpoint(const std::string& path) {
    auto [header, data] = read_file(path);
    if (header.at("kind").get<std::string>() != "draft")
        throw std::runtime_error("checkpoint kind mismatch (expected draft): " + path);
    Draft d = init_draft<float>(config_from_json(header.at("config")),
                                header.at("draft_layers").get<int>());
    if (d.param_count() != data.size())
        throw std::runtime_error("checkpoint param count mismatch: " + path);
    d.flat = std::move(data);
    return d;
}

}  // namespace sgrpo
