#include "damageseg/checkpoint.hpp"

#include "damageseg/error.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace damageseg {

static_assert(std::endian::native == std::endian::little, "checkpoint payload assumes little endian");

namespace {
constexpr char kMagic[8] = {'D', 'S', 'E', 'G', 'C', 'K', 'P', 'T'};
}

ModelState capture_state(const SegmentationModel& model) {
    ModelState s;
    for (const auto& p : model.parameters()) s.tensors.emplace_back(p.name, p.var->value);
    for (const auto& b : model.buffers()) s.tensors.emplace_back(b.name, *b.tensor);
    return s;
}

void restore_state(SegmentationModel& model, const ModelState& state) {
    const auto& params = model.parameters();
    const auto& buffers = model.buffers();
    if (state.tensors.size() != params.size() + buffers.size()) {
        throw ConfigError("checkpoint holds " + std::to_string(state.tensors.size()) +
                          " tensors, model expects " + std::to_string(params.size() + buffers.size()));
    }
    auto check = [](const std::string& want, const nn::Tensor<float>& dst,
                    const std::pair<std::string, nn::Tensor<float>>& src) {
        if (src.first != want || !(src.second.shape == dst.shape)) {
            throw ConfigError("checkpoint tensor '" + src.first + "' " + src.second.shape.str() +
                              " does not match model tensor '" + want + "' " + dst.shape.str());
        }
    };
    std::size_t i = 0;
    for (const auto& p : params) {
        check(p.name, p.var->value, state.tensors[i]);
        p.var->value = state.tensors[i++].second;
    }
    for (const auto& b : buffers) {
        check(b.name, *b.tensor, state.tensors[i]);
        *b.tensor = state.tensors[i++].second;
    }
}

nlohmann::json model_config_to_json(const ModelConfig& c) {
    return {{"mode", to_string(c.mode)},
            {"encoder", c.encoder},
            {"decoder", to_string(c.decoder)},
            {"decoder_width", c.decoder_width},
            {"num_classes", c.num_classes}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
    ModelConfig c;
    try {
        c.mode = parse_fusion_mode(j.at("mode").get<std::string>());
        c.encoder = j.at("encoder").get<std::string>();
        c.decoder = parse_decoder_kind(j.at("decoder").get<std::string>());
        c.decoder_width = j.at("decoder_width").get<int>();
        c.num_classes = j.value("num_classes", 5);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("model config: ") + e.what());
    }
    return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    nlohmann::json header;
    header["model"] = model_config_to_json(ckpt.model_config);
    header["train"] = ckpt.train_config;
    header["epoch"] = ckpt.epoch;
    header["validation"] = eval_to_json(ckpt.validation);
    nlohmann::json tensors = nlohmann::json::array();
    for (const auto& [name, t] : ckpt.state.tensors) {
        tensors.push_back({{"name", name}, {"shape", {t.shape.n, t.shape.c, t.shape.h, t.shape.w}}});
    }
    header["tensors"] = tensors;
    const std::string text = header.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write checkpoint " + path.string());
    out.write(kMagic, sizeof kMagic);
    const std::uint32_t version = kCheckpointVersion;
    const std::uint64_t len = text.size();
    out.write(reinterpret_cast<const char*>(&version), sizeof version);
    out.write(reinterpret_cast<const char*>(&len), sizeof len);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& [_, t] : ckpt.state.tensors) {
        out.write(reinterpret_cast<const char*>(t.data.data()),
                  static_cast<std::streamsize>(t.data.size() * sizeof(float)));
    }
    if (!out) throw IoError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint " + path.string());
    char magic[8];
    std::uint32_t version = 0;
    std::uint64_t len = 0;
    in.read(magic, sizeof magic);
    in.read(reinterpret_cast<char*>(&version), sizeof version);
    in.read(reinterpret_cast<char*>(&len), sizeof len);
    if (!in || std::memcmp(magic, kMagic, sizeof magic) != 0) {
        throw IoError(path.string() + " is not a checkpoint file");
    }
    if (version != kCheckpointVersion) {
        throw IoError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
    }
    std::string text(len, '\0');
    in.read(text.data(), static_cast<std::streamsize>(len));
    const auto header = nlohmann::json::parse(text);

    Checkpoint ckpt;
    ckpt.model_config = model_config_from_json(header.at("model"));
    ckpt.train_config = header.value("train", nlohmann::json::object());
    ckpt.epoch = header.at("epoch").get<int>();
    const auto& v = header.at("validation");
    ckpt.validation.f1_loc = v.at("f1_loc").get<double>();
    ckpt.validation.f1_per_class = v.at("f1_per_class").get<std::array<double, 4>>();
    ckpt.validation.f1_class = v.at("f1_class").get<double>();
    ckpt.validation.score = v.at("score").get<double>();
    const auto counts = v.at("pixel_counts").get<std::vector<std::array<std::int64_t, 5>>>();
    for (std::size_t t = 0; t < 5 && t < counts.size(); ++t) ckpt.validation.counts.m[t] = counts[t];

    for (const auto& t : header.at("tensors")) {
        const auto shape = t.at("shape").get<std::array<int, 4>>();
        nn::Tensor<float> tensor(nn::Shape{shape[0], shape[1], shape[2], shape[3]});
        in.read(reinterpret_cast<char*>(tensor.data.data()),
                static_cast<std::streamsize>(tensor.data.size() * sizeof(float)));
        ckpt.state.tensors.emplace_back(t.at("name").get<std::string>(), std::move(tensor));
    }
    if (!in) throw IoError(path.string() + ": truncated checkpoint payload");
    return ckpt;
}

SegmentationModel instantiate(const Checkpoint& ckpt) {
    SegmentationModel model = build_model(ckpt.model_config, 0);
    restore_state(model, ckpt.state);
    return model;
}

}  // namespace damageseg
