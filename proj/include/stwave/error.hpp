#pragma once

#include <stdexcept>
#include <string>

namespace stwave {

// Base for all library errors. Subtypes map onto the CLI exit codes:
// config/usage -> 1, numerical failure -> 2, IO -> 3.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

class NumericalFault : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class DataError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

// API misuse (non-scalar loss, operating on a sealed tape, stale ids).
class ContractError : public Error {
public:
    using Error::Error;
};

} // namespace stwave
