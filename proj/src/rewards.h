#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "model_client.h"
#include "sandbox.h"
#include "trajectory.h"

namespace coa {

// Verdict recovered from a judge reply.
struct Judgement {
  std::string rationale;
  bool correct = false;
};

// Scans text for the first brace-balanced JSON object that carries both a
// "rationale" string and a "judgement" string equal to "correct" or
// "incorrect". Prose or markup around the object is ignored; anything else
// yields nullopt.
std::optional<Judgement> parse_judgement(std::string_view text);

struct TestCase {
  std::string stdin_data;
  std::string expected_stdout;
};

// Reads [{"stdin": ..., "expected_stdout": ...}, ...]. Missing fields default
// to empty strings.
std::vector<TestCase> test_cases_from_json(const nlohmann::json& doc);

// Compares program output against an expectation, right-trimming each line
// and ignoring trailing blank lines.
bool stdout_matches(std::string_view actual, std::string_view expected);

// Outcome of one reward computation. reward stays binary: the web profile
// scores the answer alone, the code profile multiplies answer and format
// scores. A non-empty error means the computation could not finish (judge
// transport failure, sandbox unavailable) and the scores are not meaningful.
struct RewardRecord {
  std::string task_id;
  int score_answer = 0;
  int score_format = 0;
  double reward = 0.0;
  bool judge_unparseable = false;
  std::string error;
  nlohmann::json evidence = nlohmann::json::object();
};

nlohmann::json reward_record_to_json(const RewardRecord& record);

// Judges the trajectory's final answer against the gold answer with one model
// call. An absent answer scores 0 without consulting the judge; a reply with
// no recoverable judgement scores 0 and sets judge_unparseable. score_format
// is reported as 1 because the web profile never inspects format.
RewardRecord reward_web(const Trajectory& trajectory, const std::string& question,
                        const std::string& gold, ModelClient& judge);

// Scores a code-task trajectory whose final answer carries one program fence.
// score_format is 1 iff every code segment and the answer block parse as
// fenced code; score_answer is 1 iff the answer program passes every test
// (exit 0 and matching stdout). A sandbox-level failure aborts with error set
// rather than reporting a silent 0.
RewardRecord reward_code(const Trajectory& trajectory, const std::vector<TestCase>& tests,
                         const PythonSandbox& sandbox);

// Scores a math-task trajectory against a gold answer string. score_format is
// 1 iff every code segment parses as fenced code; score_answer comes from
// verify_math_answer on the extracted final answer.
RewardRecord reward_math(const Trajectory& trajectory, const std::string& gold);

// Equivalence check for short math answers: strips \boxed{...} wrappers,
// whitespace, and digit-grouping commas; numeric forms (integers, decimals,
// scientific notation, simple a/b fractions) compare at relative tolerance
// 1e-9, everything else by exact string equality. Symmetric and reflexive.
int verify_math_answer(std::string_view prediction, std::string_view gold);

}  // namespace coa
