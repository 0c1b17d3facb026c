#pragma once

#include <stdexcept>
#include <string>

namespace attnlab {

// Base for every error this library throws on purpose. The CLI maps
// subclasses to exit codes: usage/config/data problems -> 2, numeric
// failures -> 3.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Tensor/operation shape disagreement; message names the offending shapes.
struct ShapeError : Error {
    using Error::Error;
};

// Invalid model or training configuration.
struct ConfigError : Error {
    using Error::Error;
};

// Caller violated an interface contract (bad argument combination).
struct UsageError : Error {
    using Error::Error;
};

// NaN/Inf where finite values are required, or a diverged computation.
struct NumericError : Error {
    using Error::Error;
};

// Token id or index out of range.
struct IndexError : Error {
    using Error::Error;
};

// Corpus/task/cache file problems (empty, too short, malformed).
struct DataError : Error {
    using Error::Error;
};

// Sequence longer than the model context.
struct LengthError : Error {
    using Error::Error;
};

// Statistic requested from too few samples.
struct InsufficientDataError : Error {
    using Error::Error;
};

// Degenerate input where the operation has no defined result
// (all-masked softmax row, zero-variance estimator model).
struct DegenerateError : Error {
    using Error::Error;
};

// Checkpoint loading failures, kept distinct so callers can tell a
// truncated file from a wrong-format file from a config mismatch.
struct CheckpointError : Error {
    using Error::Error;
};
struct CheckpointCorruptError : CheckpointError {
    using CheckpointError::CheckpointError;
};
struct CheckpointMagicError : CheckpointError {
    using CheckpointError::CheckpointError;
};
struct CheckpointShapeError : CheckpointError {
    using CheckpointError::CheckpointError;
};

} // namespace attnlab
