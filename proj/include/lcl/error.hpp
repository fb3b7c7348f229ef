#pragma once

#include <stdexcept>
#include <string>

namespace lcl {

// Base of every error the library throws. Each subclass maps to one failure
// family so that callers (the CLI in particular) can translate them into exit
// codes without string matching.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Tensor extents or parameter shapes disagree.
class ShapeError : public Error {
public:
    using Error::Error;
};

// A documented precondition was violated by the caller.
class ContractError : public Error {
public:
    using Error::Error;
};

// Invalid configuration value or combination.
class ConfigError : public Error {
public:
    using Error::Error;
};

// Unreadable, malformed or insufficient input data.
class DataError : public Error {
public:
    using Error::Error;
};

// Benchmark manifest does not satisfy the evaluation protocol.
class ProtocolError : public DataError {
public:
    using DataError::DataError;
};

// Checkpoint cannot be read back.
class LoadError : public Error {
public:
    using Error::Error;
};

// Non-finite values or a failed numerical check.
class NumericError : public Error {
public:
    using Error::Error;
};

} // namespace lcl
