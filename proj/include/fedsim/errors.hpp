#pragma once

#include <stdexcept>
#include <string>

namespace fedsim {

/// Bad argument to an operation (dimension mismatch, empty input, ...).
class InputError : public std::runtime_error {
public:
    explicit InputError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Invalid configuration value (violated invariant, out-of-range setting).
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Operation called out of sequence (mid-interval decision, missing agent update).
class ProtocolError : public std::runtime_error {
public:
    explicit ProtocolError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Malformed input file (bad magic, truncation, count mismatch).
class ParseError : public std::runtime_error {
public:
    explicit ParseError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Filesystem failure (unreadable/unwritable path).
class IoError : public std::runtime_error {
public:
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace fedsim
