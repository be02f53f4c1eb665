#pragma once

#include <stdexcept>
#include <string>

namespace unsir {

// Base for all library errors. Subclasses map onto CLI exit codes:
// ConfigError -> 1, everything else -> 2.
class Error : public std::runtime_error {
  public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Invalid or inconsistent configuration / parameters.
class ConfigError : public Error {
  public:
    explicit ConfigError(const std::string& msg) : Error(msg) {}
};

// Tensor shape disagreement; message names both shapes.
class ShapeError : public Error {
  public:
    explicit ShapeError(const std::string& msg) : Error(msg) {}
};

// Malformed on-disk data (IDX, CIFAR binary, checkpoint).
class FormatError : public Error {
  public:
    explicit FormatError(const std::string& msg) : Error(msg) {}
};

// API contract violated (missing grad, unfrozen model, non-scalar loss, ...).
class ContractError : public Error {
  public:
    explicit ContractError(const std::string& msg) : Error(msg) {}
};

// NaN/Inf surfaced during an optimization loop.
class DivergenceError : public Error {
  public:
    explicit DivergenceError(const std::string& msg) : Error(msg) {}
};

// A forget-class sample reached a gradient step it must never reach.
class ZeroGlanceError : public Error {
  public:
    explicit ZeroGlanceError(const std::string& msg) : Error(msg) {}
};

}  // namespace unsir
