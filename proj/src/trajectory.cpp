#include "trajectory.h"

#include <stdexcept>

#include "strutil.h"

namespace coa {

std::string_view profile_name(Profile p) {
  return p == Profile::CodeMath ? "code_math" : "web_agent";
}

std::optional<Profile> profile_from_name(std::string_view name) {
  if (name == "code_math") return Profile::CodeMath;
  if (name == "web_agent") return Profile::WebAgent;
  return std::nullopt;
}

std::string_view status_name(Status s) {
  switch (s) {
    case Status::InProgress: return "in_progress";
    case Status::Answered: return "answered";
    case Status::BudgetExhausted: return "budget_exhausted";
    case Status::ParseError: return "parse_error";
    case Status::SequenceError: return "sequence_error";
  }
  return "in_progress";
}

std::optional<Status> status_from_name(std::string_view name) {
  if (name == "in_progress") return Status::InProgress;
  if (name == "answered") return Status::Answered;
  if (name == "budget_exhausted") return Status::BudgetExhausted;
  if (name == "parse_error") return Status::ParseError;
  if (name == "sequence_error") return Status::SequenceError;
  return std::nullopt;
}

std::string render_trajectory(const Trajectory& t, std::vector<Span>* out_spans) {
  std::string out;
  if (out_spans) {
    out_spans->clear();
    out_spans->reserve(t.segments.size());
  }
  size_t gap_cursor = 0;
  auto emit_gaps_at = [&](size_t index) {
    while (gap_cursor < t.gaps.size() && t.gaps[gap_cursor].index == index) {
      out += t.gaps[gap_cursor].text;
      ++gap_cursor;
    }
  };
  for (size_t i = 0; i < t.segments.size(); ++i) {
    emit_gaps_at(i);
    const Segment& s = t.segments[i];
    size_t begin = out.size();
    out += open_literal(s.kind);
    out += s.body;
    out += close_literal(s.kind);
    if (out_spans) out_spans->push_back(Span{begin, out.size()});
  }
  emit_gaps_at(t.segments.size());
  return out;
}

Counters derive_counters(const Trajectory& t) {
  Counters c;
  for (const Segment& s : t.segments) {
    if (counts_as_tool_call(s.kind)) ++c.tool_calls;
    if (s.origin == Origin::Model) {
      if (is_action_kind(s.kind)) ++c.steps;
      size_t extent = open_literal(s.kind).size() + s.body.size() +
                      close_literal(s.kind).size();
      c.generated_token_estimate += (extent + 3) / 4;
    }
  }
  return c;
}

std::optional<std::string> extract_answer(const Trajectory& t) {
  for (auto it = t.segments.rbegin(); it != t.segments.rend(); ++it)
    if (it->kind == TagKind::Answer) return trim(it->body);
  return std::nullopt;
}

void apply_default_origins(Trajectory& t) {
  for (Segment& s : t.segments)
    s.origin = is_environment_kind(s.kind) ? Origin::Environment : Origin::Model;
}

int double_check_score(std::string_view body) {
  static constexpr std::string_view kNeedle = "The score this time is:";
  size_t pos = body.find(kNeedle);
  if (pos == std::string_view::npos) return 0;
  size_t i = pos + kNeedle.size();
  while (i < body.size() && (body[i] == ' ' || body[i] == '\t')) ++i;
  int value = 0;
  bool any = false;
  while (i < body.size() && body[i] >= '0' && body[i] <= '9') {
    value = value * 10 + (body[i] - '0');
    any = true;
    ++i;
  }
  return any ? value : 0;
}

nlohmann::json trajectory_to_json(const Trajectory& t) {
  nlohmann::json segs = nlohmann::json::array();
  for (const Segment& s : t.segments) {
    segs.push_back({
        {"kind", std::string(kind_name(s.kind))},
        {"body", s.body},
        {"origin", s.origin == Origin::Model ? "model" : "environment"},
    });
  }
  return {
      {"task_id", t.task_id},
      {"profile", std::string(profile_name(t.profile))},
      {"status", std::string(status_name(t.status))},
      {"segments", std::move(segs)},
      {"counters",
       {{"steps", t.counters.steps},
        {"tool_calls", t.counters.tool_calls},
        {"generated_token_estimate", t.counters.generated_token_estimate}}},
  };
}

Trajectory trajectory_from_json(const nlohmann::json& j) {
  Trajectory t;
  t.task_id = j.at("task_id").get<std::string>();
  auto prof = profile_from_name(j.at("profile").get<std::string>());
  if (!prof) throw std::runtime_error("unknown profile: " + j.at("profile").get<std::string>());
  t.profile = *prof;
  auto st = status_from_name(j.at("status").get<std::string>());
  if (!st) throw std::runtime_error("unknown status: " + j.at("status").get<std::string>());
  t.status = *st;
  size_t offset = 0;
  for (const auto& js : j.at("segments")) {
    Segment s;
    auto kind = kind_from_name(js.at("kind").get<std::string>());
    if (!kind) throw std::runtime_error("unknown segment kind: " + js.at("kind").get<std::string>());
    s.kind = *kind;
    s.body = js.at("body").get<std::string>();
    std::string org = js.at("origin").get<std::string>();
    if (org == "model") {
      s.origin = Origin::Model;
    } else if (org == "environment") {
      s.origin = Origin::Environment;
    } else {
      throw std::runtime_error("unknown origin: " + org);
    }
    if (!t.segments.empty()) {
      t.gaps.push_back(Gap{t.segments.size(), "\n\n"});
      offset += 2;
    }
    s.span.begin = offset;
    offset += open_literal(s.kind).size() + s.body.size() + close_literal(s.kind).size();
    s.span.end = offset;
    t.segments.push_back(std::move(s));
  }
  Counters derived = derive_counters(t);
  t.counters = derived;
  if (j.contains("counters")) {
    const auto& jc = j.at("counters");
    if (jc.contains("steps")) t.counters.steps = jc.at("steps").get<std::uint64_t>();
    if (jc.contains("generated_token_estimate"))
      t.counters.generated_token_estimate =
          jc.at("generated_token_estimate").get<std::uint64_t>();
    // tool_calls always re-derived from segment kinds.
  }
  return t;
}

void append_canonical_segment(Trajectory& t, TagKind kind,
                              std::string_view content, Origin origin) {
  const bool web = t.profile == Profile::WebAgent;
  const std::string_view pad = web ? "\n\n" : "\n";
  Segment s;
  s.kind = kind;
  s.body.reserve(content.size() + 2 * pad.size());
  s.body.append(pad);
  s.body.append(content);
  s.body.append(pad);
  s.origin = origin;
  if (!t.segments.empty()) t.gaps.push_back(Gap{t.segments.size(), "\n\n"});
  t.segments.push_back(std::move(s));
  std::vector<Span> spans;
  std::string rendered = render_trajectory(t, &spans);
  for (size_t i = 0; i < t.segments.size(); ++i) t.segments[i].span = spans[i];
}

}  // namespace coa
