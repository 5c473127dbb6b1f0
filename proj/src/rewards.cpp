#include "rewards.h"

#include <cctype>
#include <cerrno>
#include <cmath>
#include <cstdlib>
#include <regex>

#include "prompts.h"
#include "tags.h"
#include "tools.h"

namespace coa {

namespace {

// Index one past the '}' matching the '{' at `open`, or npos.
size_t balanced_end(std::string_view text, size_t open) {
  int depth = 0;
  bool in_string = false;
  bool escaped = false;
  for (size_t i = open; i < text.size(); ++i) {
    char c = text[i];
    if (in_string) {
      if (escaped)
        escaped = false;
      else if (c == '\\')
        escaped = true;
      else if (c == '"')
        in_string = false;
      continue;
    }
    if (c == '"')
      in_string = true;
    else if (c == '{')
      ++depth;
    else if (c == '}' && --depth == 0)
      return i + 1;
  }
  return std::string_view::npos;
}

std::string remove_whitespace(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (char c : s)
    if (!std::isspace(static_cast<unsigned char>(c))) out.push_back(c);
  return out;
}

// Unwraps \boxed{...} when the braces span the whole string.
std::string strip_boxed(std::string s) {
  constexpr std::string_view kBox = "\\boxed{";
  while (s.size() > kBox.size() && s.compare(0, kBox.size(), kBox) == 0 &&
         s.back() == '}') {
    size_t end = balanced_end(s, kBox.size() - 1);
    if (end != s.size()) break;
    s = s.substr(kBox.size(), s.size() - kBox.size() - 1);
  }
  return s;
}

// Commas are dropped only from a full digit-grouped number so tuples like
// (1,2) keep theirs.
std::string strip_thousands(std::string s) {
  static const std::regex grouped(R"([+-]?\d{1,3}(,\d{3})+(\.\d+)?)");
  if (!std::regex_match(s, grouped)) return s;
  s.erase(std::remove(s.begin(), s.end(), ','), s.end());
  return s;
}

std::string normalize_math(std::string_view s) {
  return strip_thousands(strip_boxed(remove_whitespace(s)));
}

std::optional<double> parse_plain_number(const std::string& s) {
  if (s.empty()) return std::nullopt;
  if (s.find_first_of("xX") != std::string::npos) return std::nullopt;
  errno = 0;
  char* end = nullptr;
  double v = std::strtod(s.c_str(), &end);
  if (end != s.c_str() + s.size() || errno == ERANGE) return std::nullopt;
  if (!std::isfinite(v)) return std::nullopt;
  return v;
}

std::optional<double> parse_number(const std::string& s) {
  size_t slash = s.find('/');
  if (slash != std::string::npos && s.find('/', slash + 1) == std::string::npos) {
    auto num = parse_plain_number(s.substr(0, slash));
    auto den = parse_plain_number(s.substr(slash + 1));
    if (num && den && *den != 0.0) return *num / *den;
    return std::nullopt;
  }
  return parse_plain_number(s);
}

}  // namespace

std::optional<Judgement> parse_judgement(std::string_view text) {
  for (size_t pos = text.find('{'); pos != std::string_view::npos;
       pos = text.find('{', pos + 1)) {
    size_t end = balanced_end(text, pos);
    if (end == std::string_view::npos) continue;
    nlohmann::json doc =
        nlohmann::json::parse(text.substr(pos, end - pos), nullptr, false);
    if (doc.is_discarded() || !doc.is_object()) continue;
    auto rationale = doc.find("rationale");
    auto verdict = doc.find("judgement");
    if (rationale == doc.end() || verdict == doc.end()) continue;
    if (!rationale->is_string() || !verdict->is_string()) continue;
    const std::string& value = verdict->get_ref<const std::string&>();
    if (value != "correct" && value != "incorrect") continue;
    return Judgement{rationale->get<std::string>(), value == "correct"};
  }
  return std::nullopt;
}

std::vector<TestCase> test_cases_from_json(const nlohmann::json& doc) {
  std::vector<TestCase> tests;
  for (const auto& item : doc) {
    TestCase tc;
    tc.stdin_data = item.value("stdin", std::string());
    tc.expected_stdout = item.value("expected_stdout", std::string());
    tests.push_back(std::move(tc));
  }
  return tests;
}

namespace {

std::vector<std::string> normalized_lines(std::string_view text) {
  std::vector<std::string> lines;
  size_t start = 0;
  while (start <= text.size()) {
    size_t nl = text.find('\n', start);
    std::string_view line = nl == std::string_view::npos
                                ? text.substr(start)
                                : text.substr(start, nl - start);
    size_t end = line.size();
    while (end > 0 &&
           (line[end - 1] == ' ' || line[end - 1] == '\t' || line[end - 1] == '\r'))
      --end;
    lines.emplace_back(line.substr(0, end));
    if (nl == std::string_view::npos) break;
    start = nl + 1;
  }
  while (!lines.empty() && lines.back().empty()) lines.pop_back();
  return lines;
}

}  // namespace

bool stdout_matches(std::string_view actual, std::string_view expected) {
  return normalized_lines(actual) == normalized_lines(expected);
}

nlohmann::json reward_record_to_json(const RewardRecord& record) {
  nlohmann::json j{{"task_id", record.task_id},
                   {"score_answer", record.score_answer},
                   {"score_format", record.score_format},
                   {"reward", record.reward},
                   {"evidence", record.evidence}};
  if (record.judge_unparseable) j["judge_unparseable"] = true;
  if (!record.error.empty()) j["error"] = record.error;
  return j;
}

RewardRecord reward_web(const Trajectory& trajectory, const std::string& question,
                        const std::string& gold, ModelClient& judge) {
  RewardRecord rec;
  rec.task_id = trajectory.task_id;
  rec.score_format = 1;
  std::optional<std::string> answer = extract_answer(trajectory);
  if (!answer) {
    rec.evidence["answer_absent"] = true;
    return rec;
  }
  PromptContext ctx;
  ctx.task_id = "judge";
  ctx.user = judge_prompt_fill(question, gold, *answer);
  GenerationResult res = judge.complete(ctx, GenerationParams{});
  if (res.reason == FinishReason::Error) {
    rec.error = "judge call failed: " + res.error;
    return rec;
  }
  std::optional<Judgement> judgement = parse_judgement(res.text);
  if (!judgement) {
    rec.judge_unparseable = true;
    rec.evidence["judge_raw"] = res.text;
    return rec;
  }
  rec.score_answer = judgement->correct ? 1 : 0;
  rec.reward = rec.score_answer;
  rec.evidence["judgement"] = judgement->correct ? "correct" : "incorrect";
  rec.evidence["rationale"] = judgement->rationale;
  return rec;
}

namespace {

// Collects fence-parse failures over code segments; answer handling differs
// per profile so callers append their own entry.
bool code_segments_parse(const Trajectory& trajectory, nlohmann::json& failures) {
  bool ok = true;
  for (size_t i = 0; i < trajectory.segments.size(); ++i) {
    const Segment& seg = trajectory.segments[i];
    if (seg.kind != TagKind::Code) continue;
    CodeParse parsed = parse_code_block(seg.body);
    if (parsed.ok) continue;
    ok = false;
    failures.push_back({{"segment", i}, {"reason", parsed.error}});
  }
  return ok;
}

}  // namespace

RewardRecord reward_code(const Trajectory& trajectory,
                         const std::vector<TestCase>& tests,
                         const PythonSandbox& sandbox) {
  RewardRecord rec;
  rec.task_id = trajectory.task_id;
  nlohmann::json failures = nlohmann::json::array();
  bool format_ok = code_segments_parse(trajectory, failures);

  std::optional<std::string> answer = extract_answer(trajectory);
  CodeParse answer_parse;
  if (!answer) {
    format_ok = false;
    failures.push_back({{"where", "answer"}, {"reason", "answer absent"}});
  } else {
    answer_parse = parse_code_block(*answer);
    if (!answer_parse.ok) {
      format_ok = false;
      failures.push_back({{"where", "answer"}, {"reason", answer_parse.error}});
    }
  }
  rec.score_format = format_ok ? 1 : 0;
  rec.evidence["format_failures"] = failures;

  nlohmann::json test_results = nlohmann::json::array();
  bool runnable = answer && answer_parse.ok;
  bool all_pass = runnable;
  if (runnable) {
    for (size_t i = 0; i < tests.size(); ++i) {
      CodeExecResult run = sandbox.run(answer_parse.block.code, tests[i].stdin_data);
      if (!run.error.empty()) {
        rec.error = run.error;
        rec.evidence["tests"] = test_results;
        return rec;
      }
      bool passed = !run.timed_out && run.status == 0 &&
                    stdout_matches(run.stdout_text, tests[i].expected_stdout);
      all_pass = all_pass && passed;
      test_results.push_back({{"index", i},
                              {"passed", passed},
                              {"status", run.status},
                              {"timed_out", run.timed_out},
                              {"stdout", run.stdout_text},
                              {"stderr", run.stderr_text}});
    }
  }
  rec.evidence["tests"] = test_results;
  rec.score_answer = all_pass ? 1 : 0;
  rec.reward = rec.score_answer * rec.score_format;
  return rec;
}

RewardRecord reward_math(const Trajectory& trajectory, const std::string& gold) {
  RewardRecord rec;
  rec.task_id = trajectory.task_id;
  nlohmann::json failures = nlohmann::json::array();
  bool format_ok = code_segments_parse(trajectory, failures);

  std::optional<std::string> answer = extract_answer(trajectory);
  if (!answer) {
    format_ok = false;
    failures.push_back({{"where", "answer"}, {"reason", "answer absent"}});
  } else {
    rec.score_answer = verify_math_answer(*answer, gold);
    rec.evidence["prediction"] = *answer;
    rec.evidence["gold"] = gold;
  }
  rec.score_format = format_ok ? 1 : 0;
  rec.evidence["format_failures"] = failures;
  rec.reward = rec.score_answer * rec.score_format;
  return rec;
}

int verify_math_answer(std::string_view prediction, std::string_view gold) {
  std::string p = normalize_math(prediction);
  std::string g = normalize_math(gold);
  if (p == g) return 1;
  std::optional<double> pv = parse_number(p);
  std::optional<double> gv = parse_number(g);
  if (!pv || !gv) return 0;
  if (*pv == *gv) return 1;
  double scale = std::max(std::fabs(*pv), std::fabs(*gv));
  return std::fabs(*pv - *gv) <= 1e-9 * scale ? 1 : 0;
}

}  // namespace coa
