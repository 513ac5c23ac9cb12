#pragma once

#include <stdexcept>
#include <string>

namespace swintempo {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Bad arguments, violated invariants, inconsistent shapes or configs.
class ValidationError : public Error {
public:
    using Error::Error;
};

class ConfigError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

// Input that is well-typed but mathematically undefined (e.g. 0/0 sensitivity).
class UndefinedInputError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

// Malformed or truncated files.
class FormatError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

class CheckpointError : public Error {
public:
    using Error::Error;
};

class GenerationError : public Error {
public:
    using Error::Error;
};

class TrainingError : public Error {
public:
    using Error::Error;
};

}  // namespace swintempo
