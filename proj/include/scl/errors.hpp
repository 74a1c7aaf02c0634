#pragma once

#include <stdexcept>
#include <string>

namespace scl {

// Shape or width mismatch between operands.
class DimensionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// A value outside its declared domain (attribute values, targets, indices).
class DomainError : public std::out_of_range {
public:
    using std::out_of_range::out_of_range;
};

// Violated call contract (non-scalar loss, wrong panel count, ...).
class ContractError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

// Malformed or unsupported file contents.
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Sampling constraints that cannot be satisfied.
class ConstraintError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Generator gave up after its rejection budget.
class GenerationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Training diverged or produced non-finite values.
class TrainingError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Invalid experiment or training configuration.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

}  // namespace scl
