#include "damageseg/error.hpp"

namespace damageseg {

ExitCode exit_code_for(const std::exception& e) noexcept {
    if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const ArgumentError*>(&e)) {
        return ExitCode::kConfig;
    }
    if (dynamic_cast<const ValidationError*>(&e) || dynamic_cast<const IngestError*>(&e) ||
        dynamic_cast<const ShapeError*>(&e) || dynamic_cast<const GenerationError*>(&e) ||
        dynamic_cast<const IoError*>(&e)) {
        return ExitCode::kData;
    }
    return ExitCode::kRuntime;
}

}  // namespace damageseg
