#pragma once

#include "damageseg/config.hpp"
#include "damageseg/metrics.hpp"

#include <string>
#include <vector>

namespace damageseg {

enum class AblationAxis { kFusion, kAugmentation, kLoss, kEncoder };

AblationAxis parse_ablation_axis(const std::string& name);
const char* to_string(AblationAxis axis);

struct AblationRow {
    std::string variant;
    bool ok = false;
    std::string error;  ///< set when the run failed
    EvalResult result;
};

struct AblationReport {
    AblationAxis axis = AblationAxis::kFusion;
    std::vector<AblationRow> rows;
    /// Metrics of predicting background everywhere on the same validation fold.
    EvalResult background_baseline;
    bool all_ok() const;
};

/// One run per variant of `axis` with everything else held at the resolved
/// config: same scenes, fold, seed and augmentation.
AblationReport run_ablation(const RunConfig& config, AblationAxis axis);

std::string format_ablation_table(const AblationReport& report);
std::string ablation_csv(const AblationReport& report);

}  // namespace damageseg
