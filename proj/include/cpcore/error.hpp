#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace cpcore {

/// Raised for invalid caller input (bad parameters, malformed files). The CLI
/// maps it to exit status 1.
class UserError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public UserError {
 public:
  ParseError(std::size_t line, const std::string& what)
      : UserError("line " + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// A group's total posterior mass vanished during fitting.
class DegenerateGroupError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Every restart of a fit ended degenerate.
class FitFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace cpcore
