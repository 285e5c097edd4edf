#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace headlab {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Shape/rank violations; the message names the offending shapes.
struct DimensionError : Error {
    using Error::Error;
};

// Invalid configuration values (head/encoder/training/experiment).
struct ConfigError : Error {
    using Error::Error;
};

// Scalar parameter outside its admissible range.
struct RangeError : Error {
    using Error::Error;
};

// Out-of-range class label or index.
struct IndexError : Error {
    using Error::Error;
};

// Malformed binary container (bad magic, bad version).
struct FormatError : Error {
    using Error::Error;
};

// Structurally valid input whose parts disagree (e.g. image/label counts).
struct ConsistencyError : Error {
    using Error::Error;
};

struct IoError : Error {
    using Error::Error;
};

// Iterative procedure failed to converge.
struct NumericError : Error {
    using Error::Error;
};

// Statistic undefined on the given input (e.g. constant ranks).
struct StatisticError : Error {
    using Error::Error;
};

// Stored digest does not match recomputed content.
struct IntegrityError : Error {
    using Error::Error;
};

// API contract violation (e.g. backward from a non-scalar output).
struct ContractError : Error {
    using Error::Error;
};

struct DivergenceError : Error {
    DivergenceError(std::size_t epoch, const std::string& what)
        : Error(what), epoch(epoch) {}
    std::size_t epoch;
};

}  // namespace headlab
