#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace oeg {

enum class ErrorCode {
  parse_error,
  empty_cloud,
  degenerate_cloud,
  insufficient_neighbors,
  duplicate_category,
  unknown_category,
  dimension_mismatch,
  no_known_categories,
  corrupt_snapshot,
  wrong_variant,
  no_templates_for_affordance,
  no_reachable_grasp,
  unknown_affordance,
  empty_dataset,
  invalid_argument,
  not_found,
  io_error,
};

inline std::string_view code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::parse_error: return "parse_error";
    case ErrorCode::empty_cloud: return "empty_cloud";
    case ErrorCode::degenerate_cloud: return "degenerate_cloud";
    case ErrorCode::insufficient_neighbors: return "insufficient_neighbors";
    case ErrorCode::duplicate_category: return "duplicate_category";
    case ErrorCode::unknown_category: return "unknown_category";
    case ErrorCode::dimension_mismatch: return "dimension_mismatch";
    case ErrorCode::no_known_categories: return "no_categories";
    case ErrorCode::corrupt_snapshot: return "corrupt_snapshot";
    case ErrorCode::wrong_variant: return "wrong_variant";
    case ErrorCode::no_templates_for_affordance: return "no_templates";
    case ErrorCode::no_reachable_grasp: return "no_reachable_grasp";
    case ErrorCode::unknown_affordance: return "unknown_affordance";
    case ErrorCode::empty_dataset: return "empty_dataset";
    case ErrorCode::invalid_argument: return "invalid_argument";
    case ErrorCode::not_found: return "not_found";
    case ErrorCode::io_error: return "io_error";
  }
  return "unknown";
}

/// Single exception type for the library; callers branch on code().
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace oeg
