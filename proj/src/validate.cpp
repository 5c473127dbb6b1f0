#include "validate.h"

namespace coa {

namespace {

ValidationReport fail(size_t index, const char* rule) {
  return ValidationReport{false, index, rule};
}

ValidationReport validate_code_math(const Trajectory& t, bool allow_truncated) {
  // States: 0 expect Plan; 1 expect Think; 2 expect Code or Answer;
  // 3 expect Observation; 4 expect Reflection; 5 done.
  int state = 0;
  const auto& segs = t.segments;
  for (size_t i = 0; i < segs.size(); ++i) {
    TagKind k = segs[i].kind;
    switch (k) {
      case TagKind::Plan:
      case TagKind::Think:
      case TagKind::Code:
      case TagKind::Observation:
      case TagKind::Reflection:
      case TagKind::Answer:
        break;
      default:
        return fail(i, "kind not allowed");
    }
    switch (state) {
      case 0:
        if (k != TagKind::Plan) return fail(i, "plan must be first");
        state = 1;
        break;
      case 1:
        if (k != TagKind::Think) return fail(i, "expected think");
        state = 2;
        break;
      case 2:
        if (k == TagKind::Code) {
          state = 3;
        } else if (k == TagKind::Answer) {
          state = 5;
        } else {
          return fail(i, "expected code or answer");
        }
        break;
      case 3:
        if (k != TagKind::Observation) return fail(i, "expected observation");
        state = 4;
        break;
      case 4:
        if (k != TagKind::Reflection) return fail(i, "expected reflection");
        state = 1;
        break;
      case 5:
        return fail(i, "content after answer");
    }
  }
  if (state != 5 && !allow_truncated)
    return fail(segs.size(), "truncated sequence");
  return ValidationReport{};
}

ValidationReport validate_web_agent(const Trajectory& t, bool allow_truncated) {
  const auto& segs = t.segments;
  bool seen_plan = false;
  bool seen_suggested = false;
  bool answered = false;
  int last_double_check_score = -1;  // -1: none yet
  for (size_t i = 0; i < segs.size(); ++i) {
    TagKind k = segs[i].kind;
    if (answered) return fail(i, "content after answer");
    TagKind prev = i > 0 ? segs[i - 1].kind : TagKind::Answer;
    bool has_prev = i > 0;
    switch (k) {
      case TagKind::Think:
        break;
      case TagKind::Plan:
      case TagKind::WebSearch:
      case TagKind::CrawlPage:
      case TagKind::Code:
      case TagKind::SuggestedAnswer:
      case TagKind::Tools:
        if (!has_prev || prev != TagKind::Think)
          return fail(i, "think must precede action");
        if (k == TagKind::Plan) seen_plan = true;
        if (k == TagKind::SuggestedAnswer) seen_suggested = true;
        break;
      case TagKind::Observation:
        if (!has_prev || !requests_observation(prev))
          return fail(i, "observation requires tool action");
        break;
      case TagKind::Reflection:
        if (!seen_plan) return fail(i, "reflection requires earlier plan");
        break;
      case TagKind::DoubleCheck:
        if (!seen_suggested)
          return fail(i, "double_check requires suggested_answer");
        last_double_check_score = double_check_score(segs[i].body);
        break;
      case TagKind::Answer:
        if (last_double_check_score < 0 || last_double_check_score < 3)
          return fail(i, "double_check score >= 3");
        answered = true;
        break;
    }
  }
  if (!answered && !allow_truncated)
    return fail(segs.size(), "truncated sequence");
  return ValidationReport{};
}

}  // namespace

ValidationReport validate_sequence(const Trajectory& t, bool allow_truncated) {
  if (t.profile == Profile::CodeMath)
    return validate_code_math(t, allow_truncated);
  return validate_web_agent(t, allow_truncated);
}

}  // namespace coa
