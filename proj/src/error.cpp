#include "elastic_dml/error.hpp"

namespace elastic_dml {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::config: return "config-error";
    case ErrorKind::schema: return "schema-error";
    case ErrorKind::invalid_week: return "invalid-week";
    case ErrorKind::window: return "window-error";
    case ErrorKind::dimension: return "dimension-mismatch";
    case ErrorKind::split: return "split-error";
    case ErrorKind::inference: return "inference-error";
    case ErrorKind::domain: return "domain-error";
    case ErrorKind::undefined_elasticity: return "undefined-elasticity";
    case ErrorKind::rank_deficient: return "rank-deficient";
    case ErrorKind::history: return "history-error";
    case ErrorKind::degenerate_truth: return "degenerate-truth";
    case ErrorKind::incomparable_units: return "incomparable-units";
    case ErrorKind::replacement: return "replacement-error";
    case ErrorKind::unsupported: return "unsupported";
    case ErrorKind::length_mismatch: return "length-mismatch";
    case ErrorKind::numerical: return "numerical-failure";
    case ErrorKind::io: return "io-error";
  }
  return "unknown-error";
}

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::config:
      return 2;
    case ErrorKind::numerical:
    case ErrorKind::rank_deficient:
      return 4;
    default:
      return 3;
  }
}

}  // namespace elastic_dml
