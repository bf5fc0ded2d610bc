#pragma once

#include <stdexcept>
#include <string>

namespace taflab {

// Thrown when operand shapes are incompatible.
struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Thrown when a value is outside the operation's domain (bad label, bad axis,
// empty reduction, out-of-range N, ...).
struct DomainError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Thrown for invalid static configuration (non-exact conv output size,
// unknown config key, unknown corruption kind, ...).
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Thrown when an API contract is violated (e.g. backward on a non-scalar).
struct ContractError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Thrown on file I/O problems: missing files, corrupt checkpoints, bad magic.
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace taflab
