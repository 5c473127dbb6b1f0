#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tags.h"

namespace coa {

enum class Origin { Model, Environment };

enum class Profile { CodeMath, WebAgent };

enum class Status {
  InProgress,
  Answered,
  BudgetExhausted,
  ParseError,
  SequenceError,
};

struct Span {
  size_t begin = 0;
  size_t end = 0;  // exclusive; covers open literal through close literal
};

struct Segment {
  TagKind kind = TagKind::Think;
  std::string body;  // raw bytes between the literals, padding included
  Span span;
  Origin origin = Origin::Model;
};

// Inter-segment bytes, preserved so rendering reproduces the source.
// index == i means the text sits immediately before segments[i];
// index == segments.size() means it trails the last segment.
struct Gap {
  size_t index = 0;
  std::string text;
};

struct Counters {
  std::uint64_t steps = 0;
  std::uint64_t tool_calls = 0;
  std::uint64_t generated_token_estimate = 0;
};

struct Trajectory {
  std::string task_id;
  Profile profile = Profile::CodeMath;
  std::vector<Segment> segments;
  std::vector<Gap> gaps;  // sorted by index, at most one entry per index
  Status status = Status::InProgress;
  Counters counters;
};

std::string_view profile_name(Profile p);
std::optional<Profile> profile_from_name(std::string_view name);
std::string_view status_name(Status s);
std::optional<Status> status_from_name(std::string_view name);

// Rebuilds the text: gaps and tagged segments in order. When `out_spans` is
// given it receives one span per segment, valid for the returned text.
std::string render_trajectory(const Trajectory& t,
                              std::vector<Span>* out_spans = nullptr);

// tool_calls from segment kinds; steps from model-origin action segments;
// token estimate from model-origin segment extents.
Counters derive_counters(const Trajectory& t);

// Body of the last Answer segment, trimmed; absent when none exists.
std::optional<std::string> extract_answer(const Trajectory& t);

// Observation/DoubleCheck take Environment origin, everything else Model.
void apply_default_origins(Trajectory& t);

// First integer after the literal "The score this time is:"; 0 when absent.
int double_check_score(std::string_view body);

// Wire format: {task_id, profile, status, segments:[{kind,body,origin}],
// counters}. Spans and gaps are not serialized; from_json installs canonical
// "\n\n" gaps between segments and re-derives tool_calls.
nlohmann::json trajectory_to_json(const Trajectory& t);
Trajectory trajectory_from_json(const nlohmann::json& j);

// Appends a segment with canonical body padding for the profile's style and
// a canonical "\n\n" gap before it (if the trajectory is non-empty).
// Web style pads bodies as "\n\n<body>\n\n", code style as "\n<body>\n".
void append_canonical_segment(Trajectory& t, TagKind kind,
                              std::string_view content, Origin origin);

}  // namespace coa
