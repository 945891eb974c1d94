#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace elastic_dml {

enum class ErrorKind {
  config,
  schema,
  invalid_week,
  window,
  dimension,
  split,
  inference,
  domain,
  undefined_elasticity,
  rank_deficient,
  history,
  degenerate_truth,
  incomparable_units,
  replacement,
  unsupported,
  length_mismatch,
  numerical,
  io,
};

std::string_view to_string(ErrorKind kind);

/// Process exit code for an error kind: 2 usage/config, 3 data schema,
/// 4 numerical failure.
int exit_code(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

}  // namespace elastic_dml
