#pragma once

#include <string>

#include "trajectory.h"

namespace coa {

struct ValidationReport {
  bool ok = true;
  size_t violation_index = 0;  // segment index; == segments.size() for truncation
  std::string rule;
};

// Checks the kind sequence against the profile's rules.
//
// CodeMath accepts exactly Plan (Think Code Observation Reflection)* Think
// Answer. WebAgent requires: Think immediately before Plan, WebSearch,
// CrawlPage, Code, SuggestedAnswer and Tools; Observation immediately after a
// tool segment; Reflection only after some Plan; DoubleCheck only after some
// SuggestedAnswer; Answer only when the most recent DoubleCheck scores >= 3;
// nothing after Answer.
//
// allow_truncated accepts any legal prefix (used mid-episode); otherwise the
// sequence must be complete, ending in Answer.
ValidationReport validate_sequence(const Trajectory& t,
                                   bool allow_truncated = false);

}  // namespace coa
