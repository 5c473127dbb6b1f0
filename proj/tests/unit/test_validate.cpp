#include <doctest.h>

#include <fstream>
#include <regex>
#include <sstream>

#include "parser.h"
#include "rng.h"
#include "validate.h"

using namespace coa;

namespace {

Trajectory make(Profile profile, std::initializer_list<TagKind> kinds) {
  Trajectory t;
  t.profile = profile;
  for (TagKind k : kinds) {
    Segment s;
    s.kind = k;
    s.origin = is_environment_kind(k) ? Origin::Environment : Origin::Model;
    if (k == TagKind::DoubleCheck) s.body = "The score this time is:4";
    t.segments.push_back(std::move(s));
  }
  return t;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

char kind_letter(TagKind k) {
  switch (k) {
    case TagKind::Plan: return 'P';
    case TagKind::Think: return 'T';
    case TagKind::Code: return 'C';
    case TagKind::Observation: return 'O';
    case TagKind::Reflection: return 'R';
    case TagKind::Answer: return 'A';
    default: return 'X';
  }
}

}  // namespace

TEST_CASE("code-math accepts the exact pattern") {
  using K = TagKind;
  CHECK(validate_sequence(make(Profile::CodeMath,
                               {K::Plan, K::Think, K::Answer}))
            .ok);
  CHECK(validate_sequence(
            make(Profile::CodeMath, {K::Plan, K::Think, K::Code, K::Observation,
                                     K::Reflection, K::Think, K::Answer}))
            .ok);
  CHECK(validate_sequence(
            make(Profile::CodeMath,
                 {K::Plan, K::Think, K::Code, K::Observation, K::Reflection,
                  K::Think, K::Code, K::Observation, K::Reflection, K::Think,
                  K::Answer}))
            .ok);
}

TEST_CASE("code-math violations carry index and rule") {
  using K = TagKind;
  auto r = validate_sequence(make(Profile::CodeMath, {K::Think, K::Code}));
  CHECK(!r.ok);
  CHECK(r.violation_index == 0);
  CHECK(r.rule == "plan must be first");

  r = validate_sequence(make(Profile::CodeMath, {K::Plan, K::Code}));
  CHECK(!r.ok);
  CHECK(r.violation_index == 1);
  CHECK(r.rule == "expected think");

  r = validate_sequence(
      make(Profile::CodeMath, {K::Plan, K::Think, K::Observation}));
  CHECK(!r.ok);
  CHECK(r.violation_index == 2);
  CHECK(r.rule == "expected code or answer");

  r = validate_sequence(make(Profile::CodeMath,
                             {K::Plan, K::Think, K::Code, K::Reflection}));
  CHECK(!r.ok);
  CHECK(r.violation_index == 3);
  CHECK(r.rule == "expected observation");

  r = validate_sequence(make(
      Profile::CodeMath, {K::Plan, K::Think, K::Code, K::Observation, K::Think}));
  CHECK(!r.ok);
  CHECK(r.violation_index == 4);
  CHECK(r.rule == "expected reflection");

  r = validate_sequence(
      make(Profile::CodeMath, {K::Plan, K::Think, K::Answer, K::Think}));
  CHECK(!r.ok);
  CHECK(r.violation_index == 3);
  CHECK(r.rule == "content after answer");

  r = validate_sequence(make(Profile::CodeMath, {K::Plan, K::Think}));
  CHECK(!r.ok);
  CHECK(r.violation_index == 2);
  CHECK(r.rule == "truncated sequence");

  r = validate_sequence(
      make(Profile::CodeMath, {K::Plan, K::Think, K::WebSearch}));
  CHECK(!r.ok);
  CHECK(r.rule == "kind not allowed");
}

TEST_CASE("code-math truncation tolerated when allowed") {
  using K = TagKind;
  CHECK(validate_sequence(make(Profile::CodeMath, {K::Plan, K::Think}), true).ok);
  CHECK(validate_sequence(make(Profile::CodeMath, {}), true).ok);
  CHECK(!validate_sequence(make(Profile::CodeMath, {K::Think}), true).ok);
}

TEST_CASE("web agent think-before-action rules") {
  using K = TagKind;
  CHECK(validate_sequence(make(Profile::WebAgent,
                               {K::Think, K::Plan, K::Think, K::WebSearch,
                                K::Observation, K::Think, K::SuggestedAnswer,
                                K::DoubleCheck, K::Answer}))
            .ok);

  auto r = validate_sequence(make(Profile::WebAgent, {K::Plan}));
  CHECK(!r.ok);
  CHECK(r.violation_index == 0);
  CHECK(r.rule == "think must precede action");

  r = validate_sequence(
      make(Profile::WebAgent, {K::Think, K::Plan, K::WebSearch}));
  CHECK(!r.ok);
  CHECK(r.violation_index == 2);

  r = validate_sequence(make(Profile::WebAgent, {K::Think, K::Observation}));
  CHECK(!r.ok);
  CHECK(r.rule == "observation requires tool action");

  r = validate_sequence(make(Profile::WebAgent, {K::Think, K::Reflection}));
  CHECK(!r.ok);
  CHECK(r.rule == "reflection requires earlier plan");

  r = validate_sequence(make(Profile::WebAgent, {K::Think, K::DoubleCheck}));
  CHECK(!r.ok);
  CHECK(r.rule == "double_check requires suggested_answer");
}

TEST_CASE("web agent double_check score gate") {
  using K = TagKind;
  Trajectory t = make(Profile::WebAgent,
                      {K::Think, K::SuggestedAnswer, K::DoubleCheck, K::Answer});
  t.segments[2].body = "The score this time is:2";
  auto r = validate_sequence(t);
  CHECK(!r.ok);
  CHECK(r.violation_index == 3);
  CHECK(r.rule == "double_check score >= 3");

  t.segments[2].body = "The score this time is:3";
  CHECK(validate_sequence(t).ok);

  t.segments[2].body = "no score line at all";
  CHECK(!validate_sequence(t).ok);

  // Most recent double_check decides.
  Trajectory t2 = make(Profile::WebAgent,
                       {K::Think, K::SuggestedAnswer, K::DoubleCheck, K::Think,
                        K::SuggestedAnswer, K::DoubleCheck, K::Answer});
  t2.segments[2].body = "The score this time is:4";
  t2.segments[5].body = "The score this time is:1";
  CHECK(!validate_sequence(t2).ok);
  t2.segments[5].body = "The score this time is:4";
  CHECK(validate_sequence(t2).ok);
}

TEST_CASE("web agent answer without double_check rejected") {
  using K = TagKind;
  auto r = validate_sequence(make(Profile::WebAgent, {K::Think, K::Answer}));
  CHECK(!r.ok);
  CHECK(r.rule == "double_check score >= 3");
}

TEST_CASE("web agent content after answer rejected") {
  using K = TagKind;
  auto r = validate_sequence(
      make(Profile::WebAgent, {K::Think, K::SuggestedAnswer, K::DoubleCheck,
                               K::Answer, K::Think}));
  CHECK(!r.ok);
  CHECK(r.violation_index == 4);
  CHECK(r.rule == "content after answer");
}

TEST_CASE("appendix fixtures pass their profile validators") {
  struct Case {
    const char* file;
    Profile profile;
  };
  const Case cases[] = {
      {"/cases/gaia.txt", Profile::WebAgent},
      {"/cases/browsecomp.txt", Profile::WebAgent},
      {"/cases/livecodebench.txt", Profile::CodeMath},
      {"/cases/aime.txt", Profile::CodeMath},
  };
  for (const Case& c : cases) {
    CAPTURE(c.file);
    Trajectory t =
        parse_text(read_file(std::string(COA_FIXTURE_DIR) + c.file), c.profile);
    auto r = validate_sequence(t);
    CAPTURE(r.violation_index);
    CAPTURE(r.rule);
    CHECK(r.ok);
  }
}

TEST_CASE("code-math validator agrees with a regex oracle") {
  // Mirrors the acceptance check at smaller volume.
  const std::regex oracle("^P(TCOR)*TA$");
  SplitMix64 rng(42);
  const TagKind code_math_kinds[] = {TagKind::Plan,        TagKind::Think,
                                     TagKind::Code,        TagKind::Observation,
                                     TagKind::Reflection,  TagKind::Answer};
  int checked = 0;
  for (int trial = 0; trial < 2000; ++trial) {
    size_t len = rng.below(12);
    std::vector<TagKind> kinds;
    if (trial % 2 == 0) {
      for (size_t i = 0; i < len; ++i)
        kinds.push_back(code_math_kinds[rng.below(6)]);
    } else {
      // Near-valid: generate a legal sequence, then mutate.
      size_t n = rng.below(3);
      kinds.push_back(TagKind::Plan);
      for (size_t i = 0; i < n; ++i) {
        kinds.push_back(TagKind::Think);
        kinds.push_back(TagKind::Code);
        kinds.push_back(TagKind::Observation);
        kinds.push_back(TagKind::Reflection);
      }
      kinds.push_back(TagKind::Think);
      kinds.push_back(TagKind::Answer);
      switch (rng.below(4)) {
        case 0:
          if (!kinds.empty()) kinds.erase(kinds.begin() + rng.below(kinds.size()));
          break;
        case 1:
          kinds.insert(kinds.begin() + rng.below(kinds.size() + 1),
                       code_math_kinds[rng.below(6)]);
          break;
        case 2:
          kinds[rng.below(kinds.size())] = code_math_kinds[rng.below(6)];
          break;
        default:
          break;  // keep it valid
      }
    }
    Trajectory t;
    t.profile = Profile::CodeMath;
    std::string letters;
    for (TagKind k : kinds) {
      Segment s;
      s.kind = k;
      t.segments.push_back(s);
      letters += kind_letter(k);
    }
    bool expect = std::regex_match(letters, oracle);
    bool got = validate_sequence(t).ok;
    CAPTURE(letters);
    CHECK(expect == got);
    ++checked;
  }
  CHECK(checked == 2000);
}
