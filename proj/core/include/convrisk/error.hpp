#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>

namespace convrisk {

// Base of every error the library throws. Callers that only care about
// "something in convrisk failed" can catch this one type.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ArgumentError : public Error {
 public:
  using Error::Error;
};

// Malformed input text (CSV rows, prompts, schema lines). Row numbers are
// 1-based and count the header line when there is one.
class ParseError : public Error {
 public:
  explicit ParseError(const std::string& what, std::optional<std::size_t> row = std::nullopt)
      : Error(row ? "row " + std::to_string(*row) + ": " + what : what), row_(row) {}

  std::optional<std::size_t> row() const noexcept { return row_; }

 private:
  std::optional<std::size_t> row_;
};

class SchemaError : public Error {
 public:
  using Error::Error;
};

class DatasetTooSmallError : public Error {
 public:
  using Error::Error;
};

class SamplingError : public Error {
 public:
  using Error::Error;
};

class ContextLengthError : public Error {
 public:
  using Error::Error;
};

class TrainingError : public Error {
 public:
  using Error::Error;
};

class UndefinedAucError : public Error {
 public:
  using Error::Error;
};

class LoadError : public Error {
 public:
  using Error::Error;
};

}  // namespace convrisk
