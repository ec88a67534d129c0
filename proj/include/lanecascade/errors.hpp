#pragma once

#include <stdexcept>
#include <string>

namespace lanecascade {

// Base type for all library errors.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct InvalidArgumentError : Error {
    using Error::Error;
};

// More boundary instances requested than the fixed instance budget allows.
struct InstanceBudgetError : Error {
    using Error::Error;
};

// An annotation record that cannot be parsed; the message names the record.
struct MalformedRecordError : Error {
    using Error::Error;
};

// A metric whose denominator is empty (no ground truth, no samples).
struct UndefinedMetricError : Error {
    using Error::Error;
};

struct ConfigError : Error {
    using Error::Error;
};

struct CheckpointError : Error {
    using Error::Error;
};

// Training loss became non-finite; the message names phase and epoch.
struct DivergenceError : Error {
    using Error::Error;
};

// Classifier training found no {descriptor, class} pairs to learn from.
struct EmptyAssociationError : Error {
    using Error::Error;
};

}  // namespace lanecascade
