#include "damageseg/ablation.hpp"

#include "damageseg/error.hpp"

#include <spdlog/spdlog.h>

#include <iomanip>
#include <sstream>

namespace damageseg {

AblationAxis parse_ablation_axis(const std::string& name) {
    if (name == "fusion") return AblationAxis::kFusion;
    if (name == "augmentation") return AblationAxis::kAugmentation;
    if (name == "loss") return AblationAxis::kLoss;
    if (name == "encoder") return AblationAxis::kEncoder;
    throw ArgumentError("unknown ablation axis '" + name + "' (fusion, augmentation, loss, encoder)");
}

const char* to_string(AblationAxis axis) {
    switch (axis) {
        case AblationAxis::kFusion: return "fusion";
        case AblationAxis::kAugmentation: return "augmentation";
        case AblationAxis::kLoss: return "loss";
        case AblationAxis::kEncoder: return "encoder";
    }
    return "?";
}

bool AblationReport::all_ok() const {
    for (const auto& r : rows) {
        if (!r.ok) return false;
    }
    return true;
}

namespace {

struct Variant {
    std::string name;
    ModelConfig model;
    TrainConfig train;
};

std::vector<Variant> variants_for(const RunConfig& c, AblationAxis axis) {
    std::vector<Variant> out;
    auto base = [&](std::string name) { return Variant{std::move(name), c.model, c.train}; };
    switch (axis) {
        case AblationAxis::kFusion:
            for (FusionMode m : {FusionMode::kInputConcat, FusionMode::kSiameseConcat, FusionMode::kSiameseSubtract}) {
                Variant v = base(to_string(m));
                v.model.mode = m;
                out.push_back(std::move(v));
            }
            break;
        case AblationAxis::kAugmentation:
            for (const char* preset : {"none", "color", "medium", "hard"}) {
                Variant v = base(preset);
                v.train.augmentation = build_policy(preset);
                out.push_back(std::move(v));
            }
            break;
        case AblationAxis::kLoss: {
            Variant ce = base("CE");
            ce.train.class_weights = ClassWeights::uniform();
            out.push_back(std::move(ce));
            Variant wce = base("weighted CE");
            // A uniform configured weighting would make the two rows identical.
            if (c.train.class_weights.w == ClassWeights::uniform().w) wce.train.class_weights = ClassWeights{};
            out.push_back(std::move(wce));
            break;
        }
        case AblationAxis::kEncoder:
            for (const auto& name : registered_encoders()) {
                Variant v = base(name);
                v.model.encoder = name;
                out.push_back(std::move(v));
            }
            break;
    }
    return out;
}

}  // namespace

AblationReport run_ablation(const RunConfig& config, AblationAxis axis) {
    AblationReport report;
    report.axis = axis;

    const auto records = load_records(config);
    const FoldAssignment folds = split_folds(records, config.folds, config.seed);

    ConfusionCounts background;
    for (const auto& r : records) {
        if (folds.fold_of.at(r.scene_id) != config.fold) continue;
        const RasterPair view = validation_view(load_raster_pair(r), config.train.val_size);
        background += confusion_counts(Mask(view.mask.width, view.mask.height, 0), view.mask);
    }
    report.background_baseline = evaluate_counts(background);

    for (auto& v : variants_for(config, axis)) {
        AblationRow row;
        row.variant = v.name;
        try {
            spdlog::info("ablation {}: training variant '{}'", to_string(axis), v.name);
            const TrainResult r = train_fold(records, folds, config.fold, v.model, v.train);
            row.result = r.best.validation;
            row.ok = true;
        } catch (const std::exception& e) {
            row.error = e.what();
            spdlog::error("ablation variant '{}' failed: {}", v.name, e.what());
        }
        report.rows.push_back(std::move(row));
    }
    return report;
}

std::string format_ablation_table(const AblationReport& report) {
    std::size_t width = std::string("background only").size();
    for (const auto& r : report.rows) width = std::max(width, r.variant.size());
    std::ostringstream out;
    out << std::left << std::setw(static_cast<int>(width)) << to_string(report.axis) << "  " << std::right
        << std::setw(8) << "F1loc" << "  " << std::setw(8) << "F1class" << "  " << std::setw(8) << "Score" << '\n';
    auto line = [&](const std::string& name, const EvalResult& e) {
        out << std::left << std::setw(static_cast<int>(width)) << name << "  " << std::right << std::fixed
            << std::setprecision(4) << std::setw(8) << e.f1_loc << "  " << std::setw(8) << e.f1_class << "  "
            << std::setw(8) << e.score << '\n';
    };
    for (const auto& r : report.rows) {
        if (r.ok) {
            line(r.variant, r.result);
        } else {
            out << std::left << std::setw(static_cast<int>(width)) << r.variant << "  FAILED: " << r.error << '\n';
        }
    }
    line("background only", report.background_baseline);
    return out.str();
}

std::string ablation_csv(const AblationReport& report) {
    std::ostringstream out;
    out << "variant,status,f1_loc,f1_class,score\n" << std::setprecision(10);
    for (const auto& r : report.rows) {
        out << '"' << r.variant << "\"," << (r.ok ? "ok" : "failed") << ',';
        if (r.ok) {
            out << r.result.f1_loc << ',' << r.result.f1_class << ',' << r.result.score << '\n';
        } else {
            out << ",,\n";
        }
    }
    const auto& b = report.background_baseline;
    out << "\"background only\",baseline," << b.f1_loc << ',' << b.f1_class << ',' << b.score << '\n';
    return out.str();
}

}  // namespace damageseg
