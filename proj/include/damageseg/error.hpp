#pragma once

#include <stdexcept>
#include <string>

namespace damageseg {

/// Root of the library's exception hierarchy.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A caller passed an argument outside the operation's domain.
class ArgumentError : public Error {
public:
    using Error::Error;
};

/// Configuration document or registry lookup is invalid.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Input data violates a type invariant (labels out of range, bad polygons, ...).
class ValidationError : public Error {
public:
    using Error::Error;
};

/// Scene manifest is malformed (parse failure, duplicate ids).
class ManifestError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

/// A scene references data that cannot be loaded.
class IngestError : public Error {
public:
    using Error::Error;
};

/// Tensor or raster dimensions do not satisfy an operation's contract.
class ShapeError : public Error {
public:
    using Error::Error;
};

class FusionError : public ShapeError {
public:
    using ShapeError::ShapeError;
};

class GenerationError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

/// Training diverged or otherwise failed at runtime.
class TrainingError : public Error {
public:
    using Error::Error;
};

/// Process exit codes used by the command-line tool.
enum class ExitCode : int {
    kSuccess = 0,
    kUsage = 1,
    kConfig = 2,
    kData = 3,
    kRuntime = 4,
};

/// Maps an exception to the exit code family it belongs to.
ExitCode exit_code_for(const std::exception& e) noexcept;

}  // namespace damageseg
