#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace eegclip {

// Base for every error raised by the library. The CLI maps subclasses onto
// exit codes (config 2, data 3, runtime 4).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class CorruptContainerError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

// Raised by crop() when a recording is too short; callers skip the recording.
class RejectRecording : public Error {
 public:
  using Error::Error;
};

}  // namespace eegclip
