#pragma once

#include <stdexcept>
#include <string>

namespace onn {

// Failure category; the CLI maps these onto process exit codes.
enum class ErrorKind {
  usage,       // bad arguments or configuration
  data,        // unreadable / inconsistent input data
  divergence,  // non-finite loss or gradient during training
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

// Raised when training produces a non-finite loss or gradient.
class DivergenceError : public Error {
 public:
  DivergenceError(long iteration, const std::string& what)
      : Error(ErrorKind::divergence, what), iteration_(iteration) {}

  long iteration() const noexcept { return iteration_; }

 private:
  long iteration_;
};

[[noreturn]] inline void fail_usage(const std::string& msg) {
  throw Error(ErrorKind::usage, msg);
}

[[noreturn]] inline void fail_data(const std::string& msg) {
  throw Error(ErrorKind::data, msg);
}

}  // namespace onn
