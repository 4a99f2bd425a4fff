#pragma once

#include <stdexcept>
#include <string>

namespace mvsr {

class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// NaN/Inf encountered, or an iterative solve that did not settle.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ConvergenceError : public NumericError {
public:
    using NumericError::NumericError;
};

class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class MagicMismatchError : public FormatError {
public:
    using FormatError::FormatError;
};

class TruncatedFileError : public FormatError {
public:
    using FormatError::FormatError;
};

class DuplicateNameError : public FormatError {
public:
    using FormatError::FormatError;
};

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Weights and configuration do not describe the same network.
class ModelMismatchError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace mvsr
