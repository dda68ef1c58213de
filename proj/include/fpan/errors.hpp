#pragma once

#include <stdexcept>
#include <string>

namespace fpan {

// Error taxonomy used across the library. The CLI maps UsageError/ConfigError
// to exit code 2 and everything else to exit code 1.

struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Tensor/layer shape mismatches (wrong channel count, incompatible dims).
struct ShapeError : Error {
    explicit ShapeError(const std::string& msg) : Error(msg) {}
};

// API misuse: backward on a non-scalar, missing gradients, bad kernel size.
struct UsageError : Error {
    explicit UsageError(const std::string& msg) : Error(msg) {}
};

// Invalid configuration values (unsupported scale, bad degradation spec).
struct ConfigError : Error {
    explicit ConfigError(const std::string& msg) : Error(msg) {}
};

// File I/O failures; message carries the path and, for binary formats,
// the byte offset where parsing stopped.
struct IoError : Error {
    explicit IoError(const std::string& msg) : Error(msg) {}
};

}  // namespace fpan
