#pragma once

#include <stdexcept>
#include <string>

namespace geodiff {

// Error taxonomy. The CLI maps these onto process exit codes:
// configuration problems -> 2, data/file problems -> 3, numeric divergence -> 4.

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Out-of-range argument (timestep past schedule end, band index past cube depth,
// class id past palette, ...). Treated as a configuration problem.
struct RangeError : ConfigError {
    using ConfigError::ConfigError;
};

// Tile origin not present in a plan, or plan misuse.
struct PlanError : ConfigError {
    using ConfigError::ConfigError;
};

struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Shape/alignment mismatch between tensors or paired arrays.
struct DimensionError : DataError {
    using DataError::DataError;
};

// Malformed or truncated file content; messages carry a byte offset where known.
struct FormatError : DataError {
    using DataError::DataError;
};

// Operation invoked out of order (e.g. backward without a cached forward).
struct StateError : DataError {
    using DataError::DataError;
};

// Scene assembly is missing a patch required by the tile plan.
struct AggregationError : DataError {
    using DataError::DataError;
};

// Training produced a non-finite loss.
struct DivergenceError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace geodiff
