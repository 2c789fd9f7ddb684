#pragma once

#include <stdexcept>
#include <string>

namespace ctwso {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A window setting or affine window parameter set is not usable (w <= 0, width <= 0, U <= 0).
class InvalidWindowError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    IoError(const std::string& path, const std::string& what)
        : Error(path + ": " + what), path_(path) {}

    const std::string& path() const noexcept { return path_; }

private:
    std::string path_;
};

/// Raised when a metric is undefined for its input (e.g. an ROC curve over a single class).
class UndefinedMetricError : public Error {
public:
    using Error::Error;
};

}  // namespace ctwso
