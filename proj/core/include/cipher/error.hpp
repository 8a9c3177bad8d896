#pragma once

#include <stdexcept>
#include <string>

namespace cipher {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Tensor shapes or resolutions disagree.
class ShapeError : public Error {
public:
    using Error::Error;
};

// A scalar argument lies outside its mathematical domain.
class DomainError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class CheckpointError : public Error {
public:
    using Error::Error;
};

// Input data is missing, malformed or insufficient.
class DataError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

}  // namespace cipher
