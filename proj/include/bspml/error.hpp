#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace bspml {

// Invalid user-facing configuration (bad hyperparameter, bad ratio, ...).
struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Violated precondition of a library call (shape mismatch, bad sizes).
struct ContractError : std::logic_error {
  using std::logic_error::logic_error;
};

// Malformed dataset or checkpoint file. Carries the 1-based line number
// when one is known (0 otherwise).
class IngestionError : public std::runtime_error {
 public:
  IngestionError(const std::string& what, std::size_t line = 0)
      : std::runtime_error(line ? "line " + std::to_string(line) + ": " + what : what),
        line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

// Non-finite value or degenerate geometry met during computation.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw ContractError(msg);
}

}  // namespace detail
}  // namespace bspml
