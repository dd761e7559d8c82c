#pragma once

#include <stdexcept>
#include <string>

namespace ttsn {

/// Shapes of two operands disagree, or a tensor does not match a configuration.
class DimensionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Axis, index or label outside its valid range.
class IndexError : public std::out_of_range {
public:
    using std::out_of_range::out_of_range;
};

/// Invalid hyper-parameters or geometry, rejected before any compute.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// An API precondition was violated (e.g. backward from a non-scalar root).
class ContractError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// Input too small for the requested operation (e.g. reversing a single frame).
class DegenerateInputError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Training produced a NaN or infinite loss.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Base for on-disk container errors.
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class BadMagicError : public FormatError {
public:
    using FormatError::FormatError;
};

class VersionMismatchError : public FormatError {
public:
    using FormatError::FormatError;
};

class TruncatedFileError : public FormatError {
public:
    using FormatError::FormatError;
};

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace ttsn
