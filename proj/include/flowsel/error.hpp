#pragma once

#include <stdexcept>
#include <string>

namespace flowsel {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class EmptyDataset : public Error {
public:
    EmptyDataset() : Error("empty dataset") {}
};

class InvalidRecord : public Error {
public:
    explicit InvalidRecord(const std::string& id, const std::string& why = "non-finite value")
        : Error("invalid record '" + id + "': " + why), id_(id) {}
    const std::string& id() const noexcept { return id_; }

private:
    std::string id_;
};

class InvalidWeights : public Error {
public:
    using Error::Error;
};

class InvalidBudget : public Error {
public:
    using Error::Error;
};

class InvalidSubset : public Error {
public:
    using Error::Error;
};

class InvalidRatio : public Error {
public:
    explicit InvalidRatio(double alpha)
        : Error("sampling ratio must lie in (0, 1], got " + std::to_string(alpha)) {}
};

class InstanceTooLarge : public Error {
public:
    using Error::Error;
};

/// Malformed manifest input. Carries the 1-based line number.
class ManifestError : public Error {
public:
    ManifestError(std::size_t line, const std::string& what)
        : Error("manifest line " + std::to_string(line) + ": " + what), line_(line) {}
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

class StageOrderError : public Error {
public:
    using Error::Error;
};

class InvalidGrouping : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

}  // namespace flowsel
