// Command-line entry point: synth, ingest, split, train, predict, evaluate,
// ensemble, tune-weights, ablate and report.

#include "damageseg/ablation.hpp"
#include "damageseg/checkpoint.hpp"
#include "damageseg/config.hpp"
#include "damageseg/ensemble.hpp"
#include "damageseg/error.hpp"
#include "damageseg/overlay.hpp"
#include "damageseg/training.hpp"

#include <spdlog/spdlog.h>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>

#include "CLI11.hpp"

namespace fs = std::filesystem;
using namespace damageseg;
using nlohmann::json;

namespace {

struct CommonOptions {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
    std::optional<int> fold;
    std::vector<std::string> set;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
    cmd->add_option("--config", o.config, "JSON run configuration")->check(CLI::ExistingFile);
    cmd->add_option("--seed", o.seed, "Seed for generation, splitting and training");
    cmd->add_option("--out", o.out, "Output directory");
    cmd->add_option("--fold", o.fold, "Validation fold");
    cmd->add_option("--set", o.set, "Override a config key: key=value (repeatable)");
}

RunConfig resolve(const CommonOptions& o, const std::string& command) {
    std::vector<std::string> overrides;
    if (o.seed) overrides.push_back("seed=" + std::to_string(*o.seed));
    if (!o.out.empty()) overrides.push_back("output=" + json(o.out).dump());
    if (o.fold) overrides.push_back("split.fold=" + std::to_string(*o.fold));
    overrides.insert(overrides.end(), o.set.begin(), o.set.end());
    std::optional<fs::path> file;
    if (!o.config.empty()) file = o.config;
    RunConfig c = load_run_config(file, overrides, command);
    fs::create_directories(c.output);
    const auto snap = write_config_snapshot(c);
    spdlog::info("{}: resolved config written to {}", command, snap.string());
    return c;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

std::string metrics_csv(const std::vector<std::pair<std::string, EvalResult>>& rows) {
    std::string s = "name,f1_loc,f1_no_damage,f1_minor,f1_major,f1_destroyed,f1_class,score\n";
    char buf[256];
    for (const auto& [name, r] : rows) {
        std::snprintf(buf, sizeof buf, "%s,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g\n", name.c_str(), r.f1_loc,
                      r.f1_per_class[0], r.f1_per_class[1], r.f1_per_class[2], r.f1_per_class[3], r.f1_class,
                      r.score);
        s += buf;
    }
    return s;
}

void emit_metrics(const fs::path& dir, const std::string& name, const EvalResult& r) {
    write_json(dir / "metrics.json", eval_to_json(r));
    write_text(dir / "metrics.csv", metrics_csv({{name, r}}));
    const std::string table = format_results_table({{name, r}});
    write_text(dir / "metrics.txt", table);
    std::cout << table;
}

/// Scenes selected by --scope: every scene, or those of the configured validation fold.
std::vector<SceneRecord> scoped_records(const RunConfig& c, const std::string& scope) {
    auto records = load_records(c);
    if (scope == "all") return records;
    const FoldAssignment folds = split_folds(records, c.folds, c.seed);
    std::vector<SceneRecord> out;
    for (auto& r : records) {
        if (folds.fold_of.at(r.scene_id) == c.fold) out.push_back(std::move(r));
    }
    return out;
}

/// Largest centred 32-aligned window the models can process.
RasterPair model_view(const SceneRecord& r) {
    return validation_view(load_raster_pair(r), std::max(r.width, r.height));
}

// ---------------------------------------------------------------------------

int cmd_synth(const RunConfig& c) {
    const fs::path dir = c.output / "scenes";
    fs::create_directories(dir);
    std::vector<SceneRecord> written;
    for (int i = 0; i < c.synthetic.count; ++i) {
        auto s = generate_synthetic_scene(c.seed + static_cast<std::uint64_t>(i), c.synthetic.generator);
        const std::string id = s.record.scene_id;
        write_png(dir / (id + "_pre.png"), s.pair.pre);
        write_png(dir / (id + "_post.png"), s.pair.post);
        write_png(dir / (id + "_mask.png"), s.pair.mask);
        s.record.pre_image = fs::path("scenes") / (id + "_pre.png");
        s.record.post_image = fs::path("scenes") / (id + "_post.png");
        written.push_back(std::move(s.record));
    }
    write_manifest(c.output / "manifest.json", written);
    spdlog::info("synth: {} scenes, manifest {}", written.size(), (c.output / "manifest.json").string());
    return 0;
}

int cmd_ingest(const RunConfig& c) {
    const auto records = load_records(c);
    const fs::path dir = c.output / "masks";
    fs::create_directories(dir);
    DamageHistogram total;
    json scenes = json::array();
    for (const auto& r : records) {
        const auto h = damage_histogram(r);
        total += h;
        write_png(dir / (r.scene_id + ".png"), rasterize_annotations(r.annotations, r.width, r.height));
        scenes.push_back({{"scene_id", r.scene_id}, {"width", r.width}, {"height", r.height}, {"buildings", h.counts}});
    }
    write_json(c.output / "summary.json", {{"scenes", scenes}, {"buildings_per_class", total.counts}});
    std::printf("%zu scenes, buildings per class 1..4: %lld %lld %lld %lld\n", records.size(),
                static_cast<long long>(total.counts[0]), static_cast<long long>(total.counts[1]),
                static_cast<long long>(total.counts[2]), static_cast<long long>(total.counts[3]));
    return 0;
}

int cmd_split(const RunConfig& c) {
    const auto records = load_records(c);
    const FoldAssignment folds = split_folds(records, c.folds, c.seed);
    write_folds_csv(c.output / "folds.csv", folds);

    std::vector<DamageHistogram> per_fold(static_cast<std::size_t>(folds.k));
    std::vector<int> sizes(static_cast<std::size_t>(folds.k), 0);
    for (const auto& r : records) {
        const int f = folds.fold_of.at(r.scene_id);
        per_fold[f] += damage_histogram(r);
        ++sizes[f];
    }
    json summary = json::array();
    std::printf("%-6s %7s %10s %8s %8s %10s\n", "fold", "scenes", "no-damage", "minor", "major", "destroyed");
    for (int f = 0; f < folds.k; ++f) {
        const auto& h = per_fold[f].counts;
        summary.push_back({{"fold", f}, {"scenes", sizes[f]}, {"buildings", h}});
        std::printf("%-6d %7d %10lld %8lld %8lld %10lld\n", f, sizes[f], static_cast<long long>(h[0]),
                    static_cast<long long>(h[1]), static_cast<long long>(h[2]), static_cast<long long>(h[3]));
    }
    write_json(c.output / "folds_summary.json", summary);
    return 0;
}

int cmd_train(const RunConfig& c) {
    const auto records = load_records(c);
    const FoldAssignment folds = split_folds(records, c.folds, c.seed);
    write_folds_csv(c.output / "folds.csv", folds);

    std::ofstream log(c.output / "epochs.csv");
    if (!log) throw IoError("cannot write " + (c.output / "epochs.csv").string());
    log << "epoch,train_loss,lr,f1_loc,f1_class,score\n";
    TrainHooks hooks;
    hooks.on_epoch = [&](const EpochRecord& e) {
        char buf[256];
        std::snprintf(buf, sizeof buf, "%d,%.8g,%.8g,%.8g,%.8g,%.8g\n", e.epoch, e.train_loss, e.lr,
                      e.validation.f1_loc, e.validation.f1_class, e.validation.score);
        log << buf << std::flush;
        spdlog::info("epoch {}/{}: loss {:.4f}, validation score {:.4f}", e.epoch, c.train.epochs, e.train_loss,
                     e.validation.score);
    };
    const TrainResult r = train_fold(records, folds, c.fold, c.model, c.train, hooks);
    save_checkpoint(c.output / "checkpoint.ckpt", r.best);
    spdlog::info("train: best epoch {} with score {:.4f}", r.best.epoch, r.best.validation.score);
    emit_metrics(c.output, "fold " + std::to_string(c.fold) + " epoch " + std::to_string(r.best.epoch),
                 r.best.validation);
    return 0;
}

int cmd_predict(const RunConfig& c, const std::string& checkpoint, const std::string& scope) {
    Checkpoint ckpt = load_checkpoint(checkpoint);
    SegmentationModel model = instantiate(ckpt);
    const fs::path masks = c.output / "masks";
    const fs::path probs = c.output / "probs";
    fs::create_directories(masks);
    fs::create_directories(probs);
    const auto records = scoped_records(c, scope);
    for (const auto& r : records) {
        const RasterPair view = model_view(r);
        const auto p = predict_pair(model, view.pre, view.post);
        write_png(masks / (r.scene_id + ".png"), argmax_mask(p.probabilities));
        write_probability_map(probs / (r.scene_id + ".prob"), p.probabilities);
    }
    spdlog::info("predict: {} scenes written to {}", records.size(), c.output.string());
    return 0;
}

int cmd_evaluate(const RunConfig& c, const std::string& checkpoint, const std::string& pred_dir,
                 const std::string& scope) {
    if (checkpoint.empty() == pred_dir.empty()) {
        throw ArgumentError("evaluate needs exactly one of --checkpoint or --pred-dir");
    }
    const auto records = scoped_records(c, scope);
    if (records.empty()) throw ConfigError("no scenes selected for evaluation");
    std::optional<SegmentationModel> model;
    if (!checkpoint.empty()) model.emplace(instantiate(load_checkpoint(checkpoint)));
    ConfusionCounts pooled;
    for (const auto& r : records) {
        const RasterPair view = model_view(r);
        Mask pred;
        if (model) {
            pred = argmax_mask(predict_pair(*model, view.pre, view.post).probabilities);
        } else {
            pred = read_png_mask(fs::path(pred_dir) / (r.scene_id + ".png"));
        }
        pooled += confusion_counts(pred, view.mask);
    }
    emit_metrics(c.output, checkpoint.empty() ? fs::path(pred_dir).filename().string() : "model",
                 evaluate_counts(pooled));
    return 0;
}

/// One probability map per scene and input; inputs are checkpoints or directories of .prob files.
std::map<std::string, std::vector<ProbabilityMap>> gather_maps(const std::vector<std::string>& inputs,
                                                               const std::vector<SceneRecord>& records,
                                                               std::map<std::string, RasterPair>& views) {
    std::map<std::string, std::vector<ProbabilityMap>> maps;
    for (const auto& r : records) views.emplace(r.scene_id, model_view(r));
    for (const auto& in : inputs) {
        if (fs::is_directory(in)) {
            for (const auto& r : records) {
                const fs::path p = fs::path(in) / (r.scene_id + ".prob");
                if (!fs::exists(p)) continue;
                maps[r.scene_id].push_back(read_probability_map(p));
            }
        } else {
            SegmentationModel model = instantiate(load_checkpoint(in));
            for (const auto& r : records) {
                const auto& v = views.at(r.scene_id);
                maps[r.scene_id].push_back(predict_pair(model, v.pre, v.post).probabilities);
            }
        }
    }
    return maps;
}

int cmd_ensemble(const RunConfig& c, const std::vector<std::string>& inputs, const std::string& weights_file,
                 const std::string& scope) {
    EnsembleWeights weights = c.ensemble;
    if (!weights_file.empty()) {
        std::ifstream in(weights_file);
        if (!in) throw ConfigError("cannot open weights file " + weights_file);
        const json j = json::parse(in, nullptr, false);
        if (j.is_discarded()) throw ConfigError(weights_file + " is not valid JSON");
        weights = ensemble_weights_from_json(j);
    }
    const auto records = scoped_records(c, scope);
    std::map<std::string, RasterPair> views;
    const auto maps = gather_maps(inputs, records, views);
    const fs::path masks = c.output / "masks";
    fs::create_directories(masks);
    ConfusionCounts pooled;
    for (const auto& r : records) {
        const auto it = maps.find(r.scene_id);
        if (it == maps.end() || it->second.size() != inputs.size()) {
            throw ValidationError("scene '" + r.scene_id + "' lacks a prediction from some ensemble input");
        }
        std::vector<const ProbabilityMap*> ptrs;
        for (const auto& m : it->second) ptrs.push_back(&m);
        const Mask pred = ensemble_predict(ptrs, weights);
        write_png(masks / (r.scene_id + ".png"), pred);
        pooled += confusion_counts(pred, views.at(r.scene_id).mask);
    }
    write_json(c.output / "weights.json", ensemble_weights_to_json(weights));
    emit_metrics(c.output, "ensemble", evaluate_counts(pooled));
    return 0;
}

int cmd_tune(const RunConfig& c, const std::vector<std::string>& inputs) {
    const auto records = load_records(c);
    std::map<std::string, RasterPair> views;
    auto maps = gather_maps(inputs, records, views);
    OofPredictionSet oof;
    for (const auto& r : records) {
        OofScene s;
        s.scene_id = r.scene_id;
        s.truth = views.at(r.scene_id).mask;
        auto it = maps.find(r.scene_id);
        if (it != maps.end() && it->second.size() == inputs.size()) s.maps = std::move(it->second);
        oof.scenes.push_back(std::move(s));
    }
    TuneSettings settings;
    settings.model_weights = c.ensemble.model_weights;
    const TuneResult t = tune_class_weights(oof, settings);
    write_json(c.output / "weights.json", ensemble_weights_to_json(t.weights));
    write_json(c.output / "tuning.json", {{"baseline", eval_to_json(t.baseline)}, {"tuned", eval_to_json(t.tuned)}});
    std::cout << format_results_table({{"all-ones weights", t.baseline}, {"tuned weights", t.tuned}}, "Ensemble");
    std::printf("class weights:");
    for (double w : t.weights.class_weights) std::printf(" %.1f", w);
    std::printf("\n");
    return 0;
}

int cmd_ablate(const RunConfig& c, const std::string& axis) {
    const AblationReport report = run_ablation(c, parse_ablation_axis(axis));
    const std::string table = format_ablation_table(report);
    write_text(c.output / "ablation.txt", table);
    write_text(c.output / "ablation.csv", ablation_csv(report));
    std::cout << table;
    if (!report.all_ok()) {
        spdlog::error("ablate: at least one variant failed");
        return static_cast<int>(ExitCode::kRuntime);
    }
    return 0;
}

int cmd_report(const RunConfig& c, const std::string& pred_dir, const std::string& scope) {
    const auto records = scoped_records(c, scope);
    const fs::path dir = c.output / "overlays";
    fs::create_directories(dir);
    for (const auto& r : records) {
        const RasterPair pair = load_raster_pair(r);
        Mask mask = pair.mask;
        if (!pred_dir.empty()) {
            const RasterPair view = model_view(r);
            mask = read_png_mask(fs::path(pred_dir) / (r.scene_id + ".png"));
            render_overlay(view.pre, view.post, mask, dir / (r.scene_id + ".png"));
        } else {
            render_overlay(pair.pre, pair.post, mask, dir / (r.scene_id + ".png"));
        }
    }
    if (!records.empty()) {
        // Augmentation preview: the first scene and four draws of the training policy, one row each.
        const RasterPair pair = load_raster_pair(records.front());
        AugmentationPolicy policy = c.train.augmentation;
        policy.shared.crop = std::min({policy.shared.crop, pair.pre.width, pair.pre.height});
        std::vector<Image> rows;
        rows.push_back(compose_overlay(validation_view(pair, policy.shared.crop).pre,
                                       validation_view(pair, policy.shared.crop).post,
                                       validation_view(pair, policy.shared.crop).mask));
        json ops = json::array();
        for (std::uint64_t k = 0; k < 4; ++k) {
            const auto s = apply_paired(policy, pair, c.seed + k);
            ops.push_back(ops_to_json(s.applied_ops));
            if (s.pre.width != rows.front().width / 3 || s.pre.height != rows.front().height) continue;
            rows.push_back(compose_overlay(s.pre, s.post, s.mask));
        }
        Image grid(rows.front().width, rows.front().height * static_cast<int>(rows.size()));
        for (std::size_t i = 0; i < rows.size(); ++i) {
            std::copy(rows[i].pixels.begin(), rows[i].pixels.end(),
                      grid.pixels.begin() + static_cast<std::ptrdiff_t>(i * rows[i].pixels.size()));
        }
        write_png(c.output / "augmentation_grid.png", grid);
        write_json(c.output / "augmentation_ops.json", ops);
    }
    spdlog::info("report: {} overlays in {}", records.size(), dir.string());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Bi-temporal building damage segmentation"};
    app.require_subcommand(1);
    spdlog::set_pattern("[%H:%M:%S] %^%l%$ %v");

    CommonOptions common;
    std::string checkpoint;
    std::string pred_dir;
    std::string scope = "all";
    std::string axis;
    std::string weights_file;
    std::vector<std::string> inputs;

    auto* synth = app.add_subcommand("synth", "Generate synthetic scenes and a manifest");
    auto* ingest = app.add_subcommand("ingest", "Validate a manifest and rasterize its masks");
    auto* split = app.add_subcommand("split", "Assign scenes to stratified folds");
    auto* train = app.add_subcommand("train", "Train on all folds but one and keep the best checkpoint");
    auto* predict = app.add_subcommand("predict", "Write masks and probability maps for a checkpoint");
    auto* evaluate = app.add_subcommand("evaluate", "Score a checkpoint or a directory of masks");
    auto* ensemble = app.add_subcommand("ensemble", "Average several models' probabilities");
    auto* tune = app.add_subcommand("tune-weights", "Tune per-class multipliers on out-of-fold maps");
    auto* ablate = app.add_subcommand("ablate", "Train one model per variant of an axis");
    auto* report = app.add_subcommand("report", "Render overlays and an augmentation preview");

    for (auto* cmd : {synth, ingest, split, train, predict, evaluate, ensemble, tune, ablate, report}) {
        add_common(cmd, common);
    }
    for (auto* cmd : {predict, evaluate, ensemble, report}) {
        cmd->add_option("--scope", scope, "Scenes to process: all or fold")->check(CLI::IsMember({"all", "fold"}));
    }
    predict->add_option("--checkpoint", checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
    evaluate->add_option("--checkpoint", checkpoint, "Checkpoint file")->check(CLI::ExistingFile);
    evaluate->add_option("--pred-dir", pred_dir, "Directory of <scene_id>.png masks")->check(CLI::ExistingDirectory);
    ensemble->add_option("--inputs", inputs, "Checkpoints or directories of .prob files")->required();
    ensemble->add_option("--weights", weights_file, "JSON {model_weights, class_weights}")->check(CLI::ExistingFile);
    tune->add_option("--inputs", inputs, "Out-of-fold .prob directories or checkpoints")->required();
    ablate->add_option("--axis", axis, "fusion, augmentation, loss or encoder")->required();
    report->add_option("--pred-dir", pred_dir, "Predicted masks to overlay instead of the ground truth")
        ->check(CLI::ExistingDirectory);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : static_cast<int>(ExitCode::kUsage);
    }

    CLI::App* cmd = app.get_subcommands().front();
    const std::string name = cmd->get_name();
    try {
        const RunConfig c = resolve(common, name);
        if (name == "synth") return cmd_synth(c);
        if (name == "ingest") return cmd_ingest(c);
        if (name == "split") return cmd_split(c);
        if (name == "train") return cmd_train(c);
        if (name == "predict") return cmd_predict(c, checkpoint, scope);
        if (name == "evaluate") return cmd_evaluate(c, checkpoint, pred_dir, scope);
        if (name == "ensemble") return cmd_ensemble(c, inputs, weights_file, scope);
        if (name == "tune-weights") return cmd_tune(c, inputs);
        if (name == "ablate") return cmd_ablate(c, axis);
        if (name == "report") return cmd_report(c, pred_dir, scope);
    } catch (const Error& e) {
        spdlog::error("{}: {}", name, e.what());
        return static_cast<int>(exit_code_for(e));
    } catch (const std::exception& e) {
        spdlog::error("{}: {}", name, e.what());
        return static_cast<int>(ExitCode::kRuntime);
    }
    return static_cast<int>(ExitCode::kUsage);
}
