#pragma once

// Failure taxonomy surfaced through CLI exit codes: 1 config, 2 I/O,
// 3 numerical, 4 checkpoint corruption, 5 checkpoint/config shape clash,
// 6 gradient-check failure.

#include <stdexcept>
#include <string>

namespace hbf {

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& m) : std::runtime_error(m) {}
};

struct IoError : std::runtime_error {
    explicit IoError(const std::string& m) : std::runtime_error(m) {}
};

struct NumericalError : std::runtime_error {
    explicit NumericalError(const std::string& m) : std::runtime_error(m) {}
};

struct CrcError : std::runtime_error {
    explicit CrcError(const std::string& m) : std::runtime_error(m) {}
};

struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& m) : std::runtime_error(m) {}
};

struct GradcheckError : std::runtime_error {
    explicit GradcheckError(const std::string& m) : std::runtime_error(m) {}
};

}  // namespace hbf
