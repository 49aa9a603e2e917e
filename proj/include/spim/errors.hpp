#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>

namespace spim {

class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Non-finite or otherwise unusable numeric input.
class InvalidInput : public Error {
public:
  using Error::Error;
};

/// Singular or ill-conditioned system. Carries the spatial pattern index when
/// the failure happened while designing a particular pattern.
class SingularMatrix : public Error {
public:
  explicit SingularMatrix(const std::string &what,
                          std::optional<std::size_t> pattern = std::nullopt)
      : Error(what), pattern_(pattern) {}

  std::optional<std::size_t> pattern() const { return pattern_; }

private:
  std::optional<std::size_t> pattern_;
};

class ConfigError : public Error {
public:
  using Error::Error;
};

class FormatError : public Error {
public:
  using Error::Error;
};

class ShapeError : public Error {
public:
  using Error::Error;
};

class ProtocolError : public Error {
public:
  using Error::Error;
};

class DegenerateRetraction : public Error {
public:
  using Error::Error;
};

class EvaluationError : public Error {
public:
  using Error::Error;
};

} // namespace spim
