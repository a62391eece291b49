#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace trajdemo {

// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed pool / config / report input. Carries the 1-based line number
// when the input is line-oriented (0 otherwise).
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line = 0)
      : Error(line ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class IntegrityError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class DomainError : public Error {
 public:
  using Error::Error;
};

// Remote provider failed after exhausting its retries.
class ProviderError : public Error {
 public:
  ProviderError(const std::string& what, int attempts = 0, int last_status = 0)
      : Error(what), attempts_(attempts), last_status_(last_status) {}
  int attempts() const noexcept { return attempts_; }
  int last_status() const noexcept { return last_status_; }

 private:
  int attempts_;
  int last_status_;
};

class ReplayMissError : public Error {
 public:
  using Error::Error;
};

class ContextOverflowError : public Error {
 public:
  using Error::Error;
};

class PlanError : public Error {
 public:
  using Error::Error;
};

// Agent output could not be decoded into {thought, action}.
class OutputParseError : public Error {
 public:
  using Error::Error;
};

}  // namespace trajdemo
