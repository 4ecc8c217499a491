#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace fear {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Input outside an operation's stated domain (bad id, step out of range, ...).
class DomainError : public Error {
public:
    using Error::Error;
};

// Tensor shapes incompatible with the requested operation.
class ShapeError : public Error {
public:
    using Error::Error;
};

// NaN/Inf produced where the contract promises finite values.
class NumericError : public Error {
public:
    using Error::Error;
};

// Malformed on-disk data.
class FormatError : public Error {
public:
    using Error::Error;
};

}  // namespace fear
