#include "damageseg/config.hpp"

#include "damageseg/error.hpp"

#include <fstream>

namespace damageseg {

using nlohmann::json;

json default_config_document() {
    const SyntheticConfig g;
    const TrainConfig t;
    const ModelConfig m;
    return {
        {"seed", 0},
        {"output", "runs/default"},
        {"data",
         {{"manifest", ""},
          {"synthetic",
           {{"count", 16},
            {"width", g.width},
            {"height", g.height},
            {"min_buildings", g.min_buildings},
            {"max_buildings", g.max_buildings},
            {"damage_mixture", g.damage_mixture},
            {"damage_counts", nullptr},
            {"min_size", g.min_size},
            {"max_size", g.max_size},
            {"max_orientation_deg", g.max_orientation_deg},
            {"min_gap", g.min_gap},
            {"jitter_shift_px", g.jitter_shift_px},
            {"jitter_rotation_deg", g.jitter_rotation_deg},
            {"brightness_drift", g.brightness_drift},
            {"contrast_drift", g.contrast_drift},
            {"roof_darkening", g.roof_darkening},
            {"roof_speckle", g.roof_speckle},
            {"disaster_id", g.disaster_id}}}}},
        {"split", {{"k", 4}, {"fold", 0}}},
        {"model",
         {{"mode", to_string(m.mode)},
          {"encoder", m.encoder},
          {"decoder", to_string(m.decoder)},
          {"decoder_width", m.decoder_width}}},
        {"train",
         {{"epochs", t.epochs},
          {"batch_size", t.batch_size},
          {"base_lr", t.base_lr},
          {"min_lr", t.min_lr},
          {"weight_decay", t.weight_decay},
          {"crop", t.crop},
          {"val_size", t.val_size},
          {"optimizer", t.optimizer},
          {"workers", t.workers},
          {"class_weights", t.class_weights.w},
          {"augmentation", {{"preset", "medium"}, {"overrides", json::object()}}}}},
        {"ensemble", {{"model_weights", json::array()}, {"class_weights", {1.0, 1.0, 1.0, 1.0, 1.0}}}},
    };
}

namespace {

bool is_free_form(const std::string& path) { return path == "train.augmentation.overrides"; }

void merge_at(json& base, const json& patch, const std::string& path) {
    if (!patch.is_object()) throw ConfigError("config section '" + path + "' must be an object");
    for (const auto& [key, value] : patch.items()) {
        const std::string here = path.empty() ? key : path + "." + key;
        if (is_free_form(path)) {
            base[key] = value;
            continue;
        }
        if (!base.contains(key)) throw ConfigError("unknown config key '" + here + "'");
        json& slot = base[key];
        if (slot.is_object() && !is_free_form(here)) {
            merge_at(slot, value, here);
        } else if (is_free_form(here)) {
            if (!value.is_object()) throw ConfigError("'" + here + "' must be an object");
            merge_at(slot, value, here);
        } else {
            slot = value;
        }
    }
}

template <class T>
T get(const json& doc, const char* section, const char* key) {
    try {
        return doc.at(section).at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config '") + section + "." + key + "': " + e.what());
    }
}

}  // namespace

void merge_config(json& base, const json& patch) { merge_at(base, patch, ""); }

void apply_override(json& doc, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) {
        throw ConfigError("override '" + assignment + "' is not of the form key=value");
    }
    const std::string key = assignment.substr(0, eq);
    const std::string text = assignment.substr(eq + 1);
    json value = json::parse(text, nullptr, false);
    if (value.is_discarded()) value = text;

    // Build a nested patch so merge_config performs the key checks. Augmentation
    // override names contain dots themselves and stay whole.
    json patch = value;
    std::size_t end = key.size();
    const std::string free_prefix = "train.augmentation.overrides.";
    if (key.rfind(free_prefix, 0) == 0 && key.size() > free_prefix.size()) {
        patch = json{{key.substr(free_prefix.size()), patch}};
        end = free_prefix.size() - 1;
    }
    while (true) {
        const auto dot = key.rfind('.', end - 1);
        const std::string part = key.substr(dot == std::string::npos ? 0 : dot + 1,
                                            end - (dot == std::string::npos ? 0 : dot + 1));
        if (part.empty()) throw ConfigError("override key '" + key + "' has an empty component");
        patch = json{{part, patch}};
        if (dot == std::string::npos) break;
        end = dot;
    }
    merge_config(doc, patch);
}

RunConfig resolve_config(const json& doc, const std::string& command) {
    RunConfig c;
    c.command = command;
    c.document = doc;
    try {
        c.seed = doc.at("seed").get<std::uint64_t>();
        c.output = doc.at("output").get<std::string>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config 'seed'/'output': ") + e.what());
    }

    const json& data = doc.at("data");
    c.manifest = data.at("manifest").get<std::string>();
    const json& s = data.at("synthetic");
    try {
        auto& g = c.synthetic.generator;
        c.synthetic.count = s.at("count").get<int>();
        g.width = s.at("width").get<int>();
        g.height = s.at("height").get<int>();
        g.min_buildings = s.at("min_buildings").get<int>();
        g.max_buildings = s.at("max_buildings").get<int>();
        g.damage_mixture = s.at("damage_mixture").get<std::array<double, 4>>();
        if (!s.at("damage_counts").is_null()) g.damage_counts = s.at("damage_counts").get<std::array<int, 4>>();
        g.min_size = s.at("min_size").get<int>();
        g.max_size = s.at("max_size").get<int>();
        g.max_orientation_deg = s.at("max_orientation_deg").get<double>();
        g.min_gap = s.at("min_gap").get<int>();
        g.jitter_shift_px = s.at("jitter_shift_px").get<double>();
        g.jitter_rotation_deg = s.at("jitter_rotation_deg").get<double>();
        g.brightness_drift = s.at("brightness_drift").get<double>();
        g.contrast_drift = s.at("contrast_drift").get<double>();
        g.roof_darkening = s.at("roof_darkening").get<std::array<double, 3>>();
        g.roof_speckle = s.at("roof_speckle").get<std::array<double, 3>>();
        g.disaster_id = s.at("disaster_id").get<std::string>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config 'data.synthetic': ") + e.what());
    }
    if (c.manifest.empty() && c.synthetic.count < 1) throw ConfigError("data.synthetic.count must be >= 1");

    c.folds = get<int>(doc, "split", "k");
    c.fold = get<int>(doc, "split", "fold");
    if (c.folds < 2) throw ConfigError("split.k must be >= 2");
    if (c.fold < 0 || c.fold >= c.folds) throw ConfigError("split.fold must lie in [0, split.k)");

    c.model.mode = parse_fusion_mode(get<std::string>(doc, "model", "mode"));
    c.model.encoder = get<std::string>(doc, "model", "encoder");
    c.model.decoder = parse_decoder_kind(get<std::string>(doc, "model", "decoder"));
    c.model.decoder_width = get<int>(doc, "model", "decoder_width");
    lookup_encoder(c.model.encoder);
    if (c.model.decoder_width < 1) throw ConfigError("model.decoder_width must be >= 1");

    auto& t = c.train;
    t.epochs = get<int>(doc, "train", "epochs");
    t.batch_size = get<int>(doc, "train", "batch_size");
    t.base_lr = get<double>(doc, "train", "base_lr");
    t.min_lr = get<double>(doc, "train", "min_lr");
    t.weight_decay = get<double>(doc, "train", "weight_decay");
    t.crop = get<int>(doc, "train", "crop");
    t.val_size = get<int>(doc, "train", "val_size");
    t.optimizer = get<std::string>(doc, "train", "optimizer");
    t.workers = get<int>(doc, "train", "workers");
    t.class_weights.w = get<std::array<double, 5>>(doc, "train", "class_weights");
    t.seed = c.seed;
    try {
        const json& aug = doc.at("train").at("augmentation");
        const auto overrides = aug.at("overrides").get<std::map<std::string, double>>();
        t.augmentation = build_policy(aug.at("preset").get<std::string>(), overrides);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config 'train.augmentation': ") + e.what());
    } catch (const ArgumentError& e) {
        throw ConfigError(e.what());
    } catch (const ValidationError& e) {
        throw ConfigError(e.what());
    }
    try {
        validate_class_weights(t.class_weights);
    } catch (const ArgumentError& e) {
        throw ConfigError(e.what());
    }
    validate_train_config(t);

    c.ensemble = ensemble_weights_from_json(doc.at("ensemble"));
    for (double w : c.ensemble.class_weights) {
        if (!(w > 0.0)) throw ConfigError("ensemble.class_weights must be positive");
    }
    return c;
}

RunConfig load_run_config(const std::optional<std::filesystem::path>& file, const std::vector<std::string>& overrides,
                          const std::string& command) {
    json doc = default_config_document();
    if (file) {
        std::ifstream in(*file);
        if (!in) throw ConfigError("cannot open config file " + file->string());
        json patch = json::parse(in, nullptr, false);
        if (patch.is_discarded()) throw ConfigError(file->string() + " is not valid JSON");
        merge_config(doc, patch);
        // A relative manifest path is taken relative to the config file.
        auto& manifest = doc["data"]["manifest"];
        if (manifest.is_string() && !manifest.get<std::string>().empty()) {
            std::filesystem::path p = manifest.get<std::string>();
            if (p.is_relative()) manifest = (file->parent_path() / p).lexically_normal().string();
        }
    }
    for (const auto& o : overrides) apply_override(doc, o);
    return resolve_config(doc, command);
}

std::filesystem::path write_config_snapshot(const RunConfig& config) {
    std::error_code ec;
    std::filesystem::create_directories(config.output, ec);
    const auto path = config.output / "resolved_config.json";
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << config.document.dump(2) << '\n';
    return path;
}

std::vector<SceneRecord> load_records(const RunConfig& config) {
    if (!config.manifest.empty()) return ingest_manifest(config.manifest);
    std::vector<SceneRecord> records;
    records.reserve(static_cast<std::size_t>(config.synthetic.count));
    for (int i = 0; i < config.synthetic.count; ++i) {
        records.push_back(generate_synthetic_scene(config.seed + static_cast<std::uint64_t>(i),
                                                   config.synthetic.generator)
                              .record);
    }
    return records;
}

}  // namespace damageseg
