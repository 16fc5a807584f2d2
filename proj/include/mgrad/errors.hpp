#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace mgrad {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  DimensionError(const std::string& what, std::size_t expected, std::size_t actual)
      : Error(what + ": expected dimension " + std::to_string(expected) + ", got " +
              std::to_string(actual)),
        expected_(expected),
        actual_(actual) {}

  std::size_t expected() const { return expected_; }
  std::size_t actual() const { return actual_; }

 private:
  std::size_t expected_;
  std::size_t actual_;
};

/// A NaN or infinite value showed up where a finite one is required.
/// `index` names the offending coordinate, layer or iteration depending on context.
class NonFiniteError : public Error {
 public:
  NonFiniteError(const std::string& what, std::size_t index)
      : Error(what + " (index " + std::to_string(index) + ")"), index_(index) {}

  std::size_t index() const { return index_; }

 private:
  std::size_t index_;
};

/// An iterative procedure blew up. Carries the last objective values seen.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, std::vector<double> trace)
      : Error(what), trace_(std::move(trace)) {}

  const std::vector<double>& trace() const { return trace_; }

 private:
  std::vector<double> trace_;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed or out-of-range input data (bad magic, truncated file, bad label).
class DataError : public Error {
 public:
  using Error::Error;
};

}  // namespace mgrad
