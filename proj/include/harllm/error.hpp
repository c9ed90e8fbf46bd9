// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace harllm {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Incompatible tensor shapes; the message names both shapes.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// Invalid configuration value (even kernel, W not divisible by L, ...).
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Class index or label outside its declared range.
class IndexError : public Error {
public:
    using Error::Error;
};

/// NaN/Inf produced by a primitive or returned by a checked function.
class NumericError : public Error {
public:
    using Error::Error;
};

/// Malformed recording CSV. `line` is 1-based, 0 when not applicable.
class ParseError : public Error {
public:
    ParseError(const std::string& file, std::size_t line, const std::string& what)
        : Error(file + ":" + std::to_string(line) + ": " + what), file_(file), line_(line) {}

    const std::string& file() const noexcept { return file_; }
    std::size_t line() const noexcept { return line_; }

private:
    std::string file_;
    std::size_t line_;
};

/// Tensor-archive read/write failure; the message names the offending tensor.
class CheckpointError : public Error {
public:
    using Error::Error;
};

/// Metric requested on empty input.
class MetricError : public Error {
public:
    using Error::Error;
};

/// Non-finite gradient met during optimisation.
class TrainingAborted : public Error {
public:
    TrainingAborted(std::size_t step, const std::string& param, const std::string& what)
        : Error("training aborted at step " + std::to_string(step) + ", parameter '" + param +
                "': " + what),
          step_(step), param_(param) {}

    std::size_t step() const noexcept { return step_; }
    const std::string& parameter() const noexcept { return param_; }

private:
    std::size_t step_;
    std::string param_;
};

} // namespace harllm
