#pragma once

#include <stdexcept>
#include <string>

namespace caac {

/// Precondition violated by the caller (bad shape, out-of-range parameter).
class DomainError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Sequence exceeds the model's max_seq_len.
class LengthError : public std::length_error {
public:
    using std::length_error::length_error;
};

/// A non-finite value appeared in a computation.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid run configuration. `path` names the offending field ("vtc.beta").
class ConfigError : public std::runtime_error {
public:
    ConfigError(std::string path, const std::string& what)
        : std::runtime_error(path.empty() ? what : path + ": " + what), path_(std::move(path)) {}
    const std::string& path() const noexcept { return path_; }

private:
    std::string path_;
};

/// A required artifact (calibration file, trace file) is missing.
class MissingArtifactError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace caac
