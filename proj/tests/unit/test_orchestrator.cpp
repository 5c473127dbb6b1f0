#include <doctest.h>

#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "orchestrator.h"
#include "rng.h"
#include "strutil.h"

using namespace coa;

namespace {

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string fixture(const std::string& rel) {
  return std::string(COA_FIXTURE_DIR) + "/" + rel;
}

ScriptedModel script_model(const std::string& task_id,
                           std::vector<std::string> entries,
                           ScriptedModelSpec::Exhaustion mode =
                               ScriptedModelSpec::Exhaustion::Error) {
  ScriptedModelSpec spec;
  spec.exhaustion = mode;
  spec.by_task[task_id] = std::move(entries);
  return ScriptedModel(std::move(spec));
}

EpisodeConfig web_config() {
  EpisodeConfig cfg;
  cfg.profile = Profile::WebAgent;
  return cfg;
}

size_t count_kind(const Trajectory& t, TagKind k) {
  size_t n = 0;
  for (const auto& s : t.segments)
    if (s.kind == k) ++n;
  return n;
}

}  // namespace

TEST_CASE("default stops are the action closes plus the answer close") {
  auto stops = default_episode_stops();
  for (TagKind k : kAllKinds) {
    bool expected = is_action_kind(k) || k == TagKind::Answer;
    bool present = false;
    for (const auto& s : stops) present |= s == close_literal(k);
    CAPTURE(kind_name(k));
    CHECK(present == expected);
  }
  CHECK(stops.size() == 8);
}

TEST_CASE("environment insertion text pads per profile") {
  CHECK(environment_insertion_text(Profile::CodeMath, TagKind::Observation,
                                   "out") ==
        "\n\n<observation>\nout\n</observation>");
  CHECK(environment_insertion_text(Profile::WebAgent, TagKind::DoubleCheck,
                                   "The score this time is:4") ==
        "\n\n<double_check>\n\nThe score this time is:4\n\n</double_check>");
}

TEST_CASE("code-math episode runs plan, code, observation, answer") {
  std::vector<std::string> entries = {
      "<plan>\n1. Print the value.\n</plan>",
      "\n\n<think>\nRun it.\n</think>\n\n<code>\n```py\nprint(204)\n```\n</code>",
      "\n\n<reflection>\nOutput matches.\n</reflection>",
      "\n\n<think>\nDone.\n</think>\n\n<answer>\n\\boxed{204}\n</answer>",
  };
  ScriptedModel model = script_model("t1", entries);

  ScriptedToolsSpec tspec;
  CodeExecResult run;
  run.status = 0;
  run.stdout_text = "204\n";
  tspec.code["print(204)"] = run;
  ScriptedTools tools(tspec);

  EpisodeConfig cfg;
  EpisodeResult r = run_episode("t1", "What is 204?", cfg, model, tools);

  CHECK(r.error.empty());
  CHECK(r.generations == 4);
  CHECK(r.trajectory.status == Status::Answered);
  CHECK(r.validation.ok);
  REQUIRE(r.trajectory.segments.size() == 7);

  const auto& segs = r.trajectory.segments;
  CHECK(segs[3].kind == TagKind::Observation);
  CHECK(segs[3].origin == Origin::Environment);
  CHECK(segs[3].body ==
        "\n[EXECUTED] Code exited with status 0.\n"
        "[STDOUT:BEGIN]\n204\n[STDOUT:END]\n");
  for (size_t i : {0u, 1u, 2u, 4u, 5u, 6u})
    CHECK(segs[i].origin == Origin::Model);

  CHECK(r.trajectory.counters.tool_calls == 1);
  CHECK(r.trajectory.counters.steps == 4);
  CHECK(r.trajectory.counters.generated_token_estimate > 0);
  REQUIRE(extract_answer(r.trajectory).has_value());
  CHECK(*extract_answer(r.trajectory) == "\\boxed{204}");

  // The rendered trajectory is exactly the generated text plus insertions.
  std::string expect = entries[0] + entries[1] +
                       "\n\n<observation>\n[EXECUTED] Code exited with status 0.\n"
                       "[STDOUT:BEGIN]\n204\n[STDOUT:END]\n</observation>" +
                       entries[2] + entries[3];
  CHECK(render_trajectory(r.trajectory) == expect);

  // Scripted runs report no wall time.
  CHECK(r.wall_seconds == 0.0);
  REQUIRE(r.tool_seconds.size() == 1);
  CHECK(r.tool_seconds[0] == 0.0);
}

TEST_CASE("prompts carry the task and the accumulated episode text") {
  // Every entry is keyed by the hash of the exact prompt the orchestrator
  // must build; any drift falls through to script exhaustion and fails.
  const std::string task = "seven?";
  const std::string e0 = "<plan>\np\n</plan>";
  const std::string e1 =
      "\n\n<think>\nt\n</think>\n\n<code>\n```py\nprint(7)\n```\n</code>";
  const std::string e2 = "\n\n<reflection>\nr\n</reflection>";
  const std::string e3 = "\n\n<think>\nd\n</think>\n\n<answer>\n7\n</answer>";

  CodeExecResult run;
  run.status = 0;
  run.stdout_text = "7\n";
  std::string ins = environment_insertion_text(
      Profile::CodeMath, TagKind::Observation, render_code_observation(run));

  ScriptedModelSpec spec;
  spec.by_prompt_hash[prompt_hash_hex(task)] = {e0};
  spec.by_prompt_hash[prompt_hash_hex(task + "\n\n" + e0)] = {e1};
  spec.by_prompt_hash[prompt_hash_hex(task + "\n\n" + e0 + e1 + ins)] = {e2};
  spec.by_prompt_hash[prompt_hash_hex(task + "\n\n" + e0 + e1 + ins + e2)] = {
      e3};
  ScriptedModel model(std::move(spec));

  ScriptedToolsSpec tspec;
  tspec.code["print(7)"] = run;
  ScriptedTools tools(tspec);

  EpisodeConfig cfg;
  EpisodeResult r = run_episode("t2", task, cfg, model, tools);
  CHECK(r.error.empty());
  CHECK(r.trajectory.status == Status::Answered);
  CHECK(count_kind(r.trajectory, TagKind::Observation) == 1);
}

TEST_CASE("step budget forces the final answer phase") {
  // max_steps=1: the plan consumes the budget, so the next generation is the
  // final phase and only a clean answer commits.
  std::vector<std::string> entries = {
      "<plan>\np\n</plan>",
      "\n\n<think>\nwrap up\n</think>\n\n<answer>\n42\n</answer>",
  };
  ScriptedModel model = script_model("t3", entries);
  ScriptedTools tools{ScriptedToolsSpec{}};
  EpisodeConfig cfg;
  cfg.max_steps = 1;
  EpisodeResult r = run_episode("t3", "q", cfg, model, tools);
  CHECK(r.generations == 2);
  CHECK(r.trajectory.status == Status::Answered);
  CHECK(r.trajectory.counters.steps == 1);
  CHECK(r.validation.ok);
}

TEST_CASE("episode that never answers exhausts and reports the budget") {
  ScriptedModelSpec spec;
  spec.exhaustion = ScriptedModelSpec::Exhaustion::RepeatLast;
  spec.by_task["t4"] = {
      "<think>\nlook\n</think>\n\n<web_search>\nwho\n</web_search>"};
  ScriptedModel model(std::move(spec));
  ScriptedTools tools{ScriptedToolsSpec{}};

  EpisodeConfig cfg = web_config();
  cfg.max_steps = 3;
  EpisodeResult r = run_episode("t4", "q", cfg, model, tools);

  CHECK(r.trajectory.status == Status::BudgetExhausted);
  CHECK(r.generations == cfg.max_steps + 1);
  CHECK(r.trajectory.counters.steps == cfg.max_steps);
  // Three committed searches, each with its observation; the final-phase
  // repeat carries no answer and is discarded.
  CHECK(count_kind(r.trajectory, TagKind::WebSearch) == 3);
  CHECK(count_kind(r.trajectory, TagKind::Observation) == 3);
  CHECK(r.trajectory.counters.tool_calls == 3);
  CHECK(r.validation.ok);  // a legal prefix, just unfinished
  CHECK(!extract_answer(r.trajectory).has_value());
}

TEST_CASE("tool budget exhaustion discards the pending call") {
  std::vector<std::string> entries = {
      "<plan>\np\n</plan>",
      "\n\n<think>\na\n</think>\n\n<code>\n```py\nprint(1)\n```\n</code>",
      "\n\n<reflection>\nfine\n</reflection>",
      "\n\n<think>\nb\n</think>\n\n<code>\n```py\nprint(2)\n```\n</code>",
      "\n\n<think>\nc\n</think>\n\n<answer>\n1\n</answer>",
  };
  ScriptedModel model = script_model("t5", entries);
  ScriptedTools tools{ScriptedToolsSpec{}};

  EpisodeConfig cfg;
  cfg.max_tool_calls = 1;
  EpisodeResult r = run_episode("t5", "q", cfg, model, tools);

  // The second code call is discarded; the final phase gets the answer.
  CHECK(r.trajectory.status == Status::Answered);
  CHECK(count_kind(r.trajectory, TagKind::Code) == 1);
  CHECK(count_kind(r.trajectory, TagKind::Observation) == 1);
  CHECK(r.trajectory.counters.tool_calls == 1);
  CHECK(r.tool_seconds.size() == 1);
}

TEST_CASE("token budget exhaustion discards the truncated generation") {
  std::vector<std::string> entries = {
      "<plan>\np\n</plan>",
      "\n\n<think>\nthis think is deliberately long enough to overrun\n</think>",
      "\n\n<think>\nt\n</think>\n\n<answer>\nok\n</answer>",
  };
  ScriptedModel model = script_model("t6", entries);
  ScriptedTools tools{ScriptedToolsSpec{}};

  EpisodeConfig cfg;
  cfg.max_generated_tokens = 6;  // the plan fits, the long think cannot
  EpisodeResult r = run_episode("t6", "q", cfg, model, tools);

  CHECK(r.generations == 3);
  CHECK(r.trajectory.status == Status::Answered);
  // The truncated think never committed; the final answer attaches to the
  // plan and keeps the sequence legal.
  CHECK(count_kind(r.trajectory, TagKind::Think) == 1);
  CHECK(count_kind(r.trajectory, TagKind::Plan) == 1);
  CHECK(r.trajectory.counters.generated_token_estimate ==
        cfg.max_generated_tokens);
}

TEST_CASE("a forced answer that cannot attach legally is dropped") {
  // Everything before the final phase was discarded, so the code-math
  // grammar has no plan to build on; the forced answer cannot commit.
  std::vector<std::string> entries = {
      "<plan>\nthis plan is deliberately long enough to overrun\n</plan>",
      "\n\n<think>\nt\n</think>\n\n<answer>\nok\n</answer>",
  };
  ScriptedModel model = script_model("t6b", entries);
  ScriptedTools tools{ScriptedToolsSpec{}};

  EpisodeConfig cfg;
  cfg.max_generated_tokens = 4;  // 16 chars; the plan cannot fit
  EpisodeResult r = run_episode("t6b", "q", cfg, model, tools);

  CHECK(r.generations == 2);
  CHECK(r.trajectory.status == Status::BudgetExhausted);
  CHECK(r.trajectory.segments.empty());
  CHECK(!extract_answer(r.trajectory).has_value());
}

TEST_CASE("model-emitted observation is a sequence error") {
  std::vector<std::string> entries = {
      "<plan>\np\n</plan>",
      "\n\n<observation>\nfabricated\n</observation>",
  };
  ScriptedModel model = script_model("t7", entries);
  ScriptedTools tools{ScriptedToolsSpec{}};
  EpisodeConfig cfg;
  EpisodeResult r = run_episode("t7", "q", cfg, model, tools);

  CHECK(r.trajectory.status == Status::SequenceError);
  CHECK(!r.validation.ok);
  // The offending text stays in the trajectory for the record.
  CHECK(count_kind(r.trajectory, TagKind::Observation) == 1);
  CHECK(r.trajectory.segments.back().origin == Origin::Model);
}

TEST_CASE("grammar violation is a sequence error") {
  // The code-math grammar opens with a plan; leading with code violates it.
  std::vector<std::string> entries = {
      "<code>\n```py\nprint(1)\n```\n</code>",
  };
  ScriptedModel model = script_model("t8", entries);
  ScriptedTools tools{ScriptedToolsSpec{}};
  EpisodeConfig cfg;
  EpisodeResult r = run_episode("t8", "q", cfg, model, tools);
  CHECK(r.trajectory.status == Status::SequenceError);
  CHECK(!r.validation.ok);
  CHECK(r.validation.rule != "");
}

TEST_CASE("nested special token is a parse error and keeps the bytes") {
  std::vector<std::string> entries = {
      "<plan>\np\n</plan>",
      "\n\n<think>\nabout to break <code> inside a body\n</think>",
  };
  ScriptedModel model = script_model("t9", entries);
  ScriptedTools tools{ScriptedToolsSpec{}};
  EpisodeConfig cfg;
  EpisodeResult r = run_episode("t9", "q", cfg, model, tools);

  CHECK(r.trajectory.status == Status::ParseError);
  std::string text = render_trajectory(r.trajectory);
  CHECK(text == entries[0] + entries[1]);
}

TEST_CASE("parse error outranks a sequence error already seen") {
  std::vector<std::string> entries = {
      "<observation>\nfake\n</observation> then <think>x<code></think>",
  };
  ScriptedModel model = script_model("t9b", entries);
  ScriptedTools tools{ScriptedToolsSpec{}};
  EpisodeConfig cfg;
  EpisodeResult r = run_episode("t9b", "q", cfg, model, tools);
  CHECK(r.trajectory.status == Status::ParseError);
}

TEST_CASE("transport failure surfaces as an error with a partial trajectory") {
  ScriptedModelSpec spec;
  spec.exhaustion = ScriptedModelSpec::Exhaustion::Error;
  spec.by_task["t10"] = {"<plan>\np\n</plan>"};
  ScriptedModel model(std::move(spec));
  ScriptedTools tools{ScriptedToolsSpec{}};
  EpisodeConfig cfg;
  EpisodeResult r = run_episode("t10", "q", cfg, model, tools);

  CHECK(r.error != "");
  CHECK(r.trajectory.status == Status::InProgress);
  CHECK(count_kind(r.trajectory, TagKind::Plan) == 1);
  CHECK(r.generations == 2);
}

TEST_CASE("web episode inserts search, crawl, and double-check segments") {
  std::vector<std::string> entries = {
      "<think>\nscope the problem\n</think>\n\n<plan>\nfind the city\n</plan>",
      "\n\n<think>\nneed sources\n</think>\n\n"
      "<web_search>\nbest query\n</web_search>",
      "\n\n<think>\ncrawl clue\n</think>\n\n"
      "<crawl_page>\nhttps://a.example | https://b.example\n</crawl_page>",
      "\n\n<think>\nsummaries agree\n</think>\n\n"
      "<reflection>\non track\n</reflection>",
      "\n\n<think>\nconfident now\n</think>\n\n"
      "<suggested_answer>\nParis\n</suggested_answer>",
      "\n\n<think>\nverified\n</think>\n\n<answer>\nParis\n</answer>",
  };
  ScriptedModel model = script_model("t11", entries);

  ScriptedToolsSpec tspec;
  tspec.web_search["best query"] = {
      {"A title", "a snippet", "https://a.example"},
      {"B title", "b snippet", "https://b.example"},
  };
  tspec.pages["https://a.example"] = {"https://a.example", "summary of a", true};
  tspec.double_check["Paris"] = {"", "The score this time is:4"};

  struct Recording : ScriptedTools {
    using ScriptedTools::ScriptedTools;
    CrawlContext seen;
    std::vector<PageSummary> crawl_page(const std::vector<std::string>& urls,
                                        const CrawlContext& ctx) override {
      seen = ctx;
      return ScriptedTools::crawl_page(urls, ctx);
    }
  } tools(tspec);

  EpisodeConfig cfg = web_config();
  EpisodeResult r = run_episode("t11", "Which city?", cfg, model, tools);

  CHECK(r.error.empty());
  CHECK(r.trajectory.status == Status::Answered);
  CHECK(r.validation.ok);
  CHECK(r.generations == 6);
  CHECK(r.trajectory.counters.tool_calls == 2);
  CHECK(r.trajectory.counters.steps == 6);

  // Crawl summarization gets the last committed query and think text.
  CHECK(tools.seen.query == "best query");
  CHECK(tools.seen.clues == "crawl clue");

  const auto& segs = r.trajectory.segments;
  REQUIRE(segs.size() == 15);
  CHECK(segs[4].kind == TagKind::Observation);
  CHECK(segs[4].body ==
        "\n\nFound 2 results:\n\n"
        "1. [A title](https://a.example)\na snippet\n\n"
        "2. [B title](https://b.example)\nb snippet\n\n");
  CHECK(segs[7].kind == TagKind::Observation);
  CHECK(segs[7].body ==
        "\n\nPage 1 [https://a.example]\nSummary:\nsummary of a\n\n"
        "Page 2 [https://b.example]: "
        "[Page content not accessible: Unsuccessful crawl]\n\n");
  CHECK(segs[12].kind == TagKind::DoubleCheck);
  CHECK(segs[12].origin == Origin::Environment);
  CHECK(double_check_score(segs[12].body) == 4);
}

TEST_CASE("an answer after a failing double check is a sequence error") {
  std::vector<std::string> entries = {
      "<think>\nt\n</think>\n\n<suggested_answer>\nLyon\n</suggested_answer>",
      "\n\n<think>\nignore the verdict\n</think>\n\n<answer>\nLyon\n</answer>",
  };
  ScriptedModel model = script_model("t12", entries);
  ScriptedToolsSpec tspec;
  tspec.double_check["Lyon"] = {"", "The score this time is:2"};
  ScriptedTools tools(tspec);

  EpisodeConfig cfg = web_config();
  EpisodeResult r = run_episode("t12", "q", cfg, model, tools);
  CHECK(r.trajectory.status == Status::SequenceError);
  CHECK(!r.validation.ok);
  CHECK(r.validation.rule.find("double_check") != std::string::npos);
}

TEST_CASE("a failing double check recovers through a new suggestion") {
  std::vector<std::string> entries = {
      "<think>\nfirst guess\n</think>\n\n"
      "<suggested_answer>\nLyon\n</suggested_answer>",
      "\n\n<think>\nsecond guess\n</think>\n\n"
      "<suggested_answer>\nParis\n</suggested_answer>",
      "\n\n<think>\nsettled\n</think>\n\n<answer>\nParis\n</answer>",
  };
  ScriptedModel model = script_model("t13", entries);
  ScriptedToolsSpec tspec;
  tspec.double_check["Lyon"] = {"", "The score this time is:2"};
  tspec.double_check["Paris"] = {"", "The score this time is:5"};
  ScriptedTools tools(tspec);

  EpisodeConfig cfg = web_config();
  EpisodeResult r = run_episode("t13", "q", cfg, model, tools);
  CHECK(r.trajectory.status == Status::Answered);
  CHECK(r.validation.ok);
  CHECK(count_kind(r.trajectory, TagKind::DoubleCheck) == 2);
}

TEST_CASE("missing double check score blocks the answer") {
  std::vector<std::string> entries = {
      "<think>\nt\n</think>\n\n<suggested_answer>\nX\n</suggested_answer>",
      "\n\n<think>\nt\n</think>\n\n<answer>\nX\n</answer>",
  };
  ScriptedModel model = script_model("t14", entries);
  ScriptedToolsSpec tspec;
  tspec.double_check["X"] = {"", "No verdict text at all."};
  ScriptedTools tools(tspec);

  EpisodeConfig cfg = web_config();
  EpisodeResult r = run_episode("t14", "q", cfg, model, tools);
  CHECK(r.trajectory.status == Status::SequenceError);
}

TEST_CASE("scripted reruns of the same episode are byte-identical") {
  std::vector<std::string> entries = {
      "<plan>\np\n</plan>",
      "\n\n<think>\nt\n</think>\n\n<code>\n```py\nprint('x')\n```\n</code>",
      "\n\n<reflection>\nr\n</reflection>",
      "\n\n<think>\nt\n</think>\n\n<answer>\nx\n</answer>",
  };
  ScriptedModel model = script_model("t15", entries);
  ScriptedToolsSpec tspec;
  CodeExecResult run;
  run.status = 0;
  run.stdout_text = "x\n";
  tspec.code["print('x')"] = run;
  ScriptedTools tools(tspec);

  EpisodeConfig cfg;
  EpisodeResult a = run_episode("t15", "q", cfg, model, tools);
  EpisodeResult b = run_episode("t15", "q", cfg, model, tools);
  CHECK(render_trajectory(a.trajectory) == render_trajectory(b.trajectory));
  CHECK(trajectory_to_json(a.trajectory).dump() ==
        trajectory_to_json(b.trajectory).dump());
  CHECK(a.generations == b.generations);
  CHECK(a.wall_seconds == 0.0);
  CHECK(b.wall_seconds == 0.0);
}

// Rebuilds the scripted model entries and raw tool observations from a
// recorded trajectory, replays the episode, and requires the orchestrator to
// reproduce the recording byte for byte.
namespace {

struct Replay {
  std::vector<std::string> entries;
  ScriptedToolsSpec tools;
};

Replay replay_from(const std::string& text, const Trajectory& t,
                   Profile profile) {
  Replay out;
  std::string_view pad = profile == Profile::CodeMath ? "\n" : "\n\n";
  auto strip = [&](std::string_view body) {
    REQUIRE(body.size() >= 2 * pad.size());
    body.remove_prefix(pad.size());
    body.remove_suffix(pad.size());
    return std::string(body);
  };
  size_t cursor = 0;
  const Segment* prev = nullptr;
  const Segment* requester = nullptr;
  const Segment* suggestion = nullptr;
  for (const auto& s : t.segments) {
    if (is_environment_kind(s.kind)) {
      if (s.kind == TagKind::Observation) {
        REQUIRE(requester != nullptr);
        std::string key = std::string(kind_name(requester->kind)) + ":" +
                          trim(requester->body);
        out.tools.observations[key] = strip(s.body);
      } else {
        REQUIRE(suggestion != nullptr);
        // A think segment the entry split left behind is the checker's
        // rationale, recorded ahead of the verdict.
        CheckVerdict v;
        if (prev != nullptr && prev->kind == TagKind::Think &&
            prev->span.begin >= cursor)
          v.rationale = strip(prev->body);
        v.verdict = strip(s.body);
        out.tools.double_check[trim(suggestion->body)] = std::move(v);
      }
      cursor = s.span.end;
      prev = &s;
      continue;
    }
    if (requests_observation(s.kind)) requester = &s;
    if (s.kind == TagKind::SuggestedAnswer) suggestion = &s;
    if (is_action_kind(s.kind) || s.kind == TagKind::Answer) {
      out.entries.push_back(text.substr(cursor, s.span.end - cursor));
      cursor = s.span.end;
    }
    prev = &s;
  }
  return out;
}

}  // namespace

TEST_CASE("recorded episodes replay byte-for-byte through the orchestrator") {
  struct Case {
    const char* file;
    Profile profile;
  };
  const Case cases[] = {
      {"cases/gaia.txt", Profile::WebAgent},
      {"cases/browsecomp.txt", Profile::WebAgent},
      {"cases/livecodebench.txt", Profile::CodeMath},
      {"cases/aime.txt", Profile::CodeMath},
  };
  for (const Case& c : cases) {
    CAPTURE(c.file);
    std::string text = read_file(fixture(c.file));
    Trajectory recorded = parse_text(text, c.profile);
    REQUIRE(recorded.status == Status::Answered);

    // The recording ends with a trailing gap the model never emits.
    std::string body = text;
    if (!recorded.gaps.empty() &&
        recorded.gaps.back().index == recorded.segments.size())
      body.resize(body.size() - recorded.gaps.back().text.size());

    Replay rep = replay_from(text, recorded, c.profile);
    ScriptedModel model = script_model(c.file, rep.entries);
    ScriptedTools tools(rep.tools);

    EpisodeConfig cfg;
    cfg.profile = c.profile;
    cfg.max_steps = 64;
    cfg.max_tool_calls = 32;
    cfg.max_generated_tokens = std::uint64_t{1} << 20;
    EpisodeResult r = run_episode(c.file, "replayed task", cfg, model, tools);

    CHECK(r.error.empty());
    CHECK(r.trajectory.status == Status::Answered);
    CHECK(r.validation.ok);
    CHECK(render_trajectory(r.trajectory) == body);
    CHECK(r.generations == rep.entries.size());
    CHECK(extract_answer(r.trajectory) == extract_answer(recorded));
  }
}

TEST_CASE("episodes stay inside their budgets under adversarial scripts") {
  // Random scripts mixing legal steps, garbage, malformed tags, and missing
  // answers: whatever happens, generation and tool counts stay bounded and
  // every environment segment has a requester.
  SplitMix64 rng(20260816);
  const char* fragments[] = {
      "<plan>\np\n</plan>",
      "<think>\nt\n</think>\n\n<web_search>\nq\n</web_search>",
      "<think>\nt\n</think>\n\n<crawl_page>\nhttps://x\n</crawl_page>",
      "<think>\nt\n</think>\n\n<code>\n```py\nprint(1)\n```\n</code>",
      "<reflection>\nr\n</reflection>",
      "<think>\nt\n</think>\n\n<suggested_answer>\ns\n</suggested_answer>",
      "<think>\nt\n</think>\n\n<answer>\na\n</answer>",
      "<observation>\nforged\n</observation>",
      "plain prose without any tags",
      "<think>\nnested <code> token\n</think>",
      "<unknown_tag> stray </plan>",
      "",
  };
  const size_t kFragments = sizeof(fragments) / sizeof(fragments[0]);

  for (int episode = 0; episode < 300; ++episode) {
    CAPTURE(episode);
    size_t len = 1 + rng.below(8);
    std::vector<std::string> entries;
    for (size_t i = 0; i < len; ++i)
      entries.emplace_back(fragments[rng.below(kFragments)]);

    ScriptedModelSpec spec;
    spec.exhaustion = rng.below(2) == 0
                          ? ScriptedModelSpec::Exhaustion::Error
                          : ScriptedModelSpec::Exhaustion::RepeatLast;
    spec.by_task["fuzz"] = entries;
    ScriptedModel model(std::move(spec));
    ScriptedTools tools{ScriptedToolsSpec{}};

    EpisodeConfig cfg;
    cfg.profile = rng.below(2) == 0 ? Profile::CodeMath : Profile::WebAgent;
    cfg.max_steps = 1 + rng.below(6);
    cfg.max_tool_calls = rng.below(4);
    cfg.max_generated_tokens = 8 + rng.below(512);

    EpisodeResult r = run_episode("fuzz", "q", cfg, model, tools);

    CHECK(r.generations <= cfg.max_steps + 1);
    CHECK(r.trajectory.counters.steps <= cfg.max_steps);
    std::uint64_t slack =
        r.trajectory.status == Status::SequenceError ? 1 : 0;
    CHECK(r.trajectory.counters.tool_calls <= cfg.max_tool_calls + slack);

    size_t env_obs = 0;
    const auto& segs = r.trajectory.segments;
    for (size_t i = 0; i < segs.size(); ++i) {
      if (segs[i].origin != Origin::Environment) continue;
      REQUIRE(i > 0);
      if (segs[i].kind == TagKind::Observation) {
        CHECK(requests_observation(segs[i - 1].kind));
        ++env_obs;
      } else if (segs[i].kind == TagKind::DoubleCheck) {
        bool after_suggestion =
            segs[i - 1].kind == TagKind::SuggestedAnswer ||
            (segs[i - 1].kind == TagKind::Think &&
             segs[i - 1].origin == Origin::Environment);
        CHECK(after_suggestion);
      } else {
        // Checker rationale precedes its verdict.
        CHECK(segs[i].kind == TagKind::Think);
        REQUIRE(i + 1 < segs.size());
        CHECK(segs[i + 1].kind == TagKind::DoubleCheck);
      }
    }
    if (r.trajectory.status != Status::SequenceError &&
        r.trajectory.status != Status::ParseError) {
      size_t tool_segments = 0;
      for (const auto& s : segs)
        if (counts_as_tool_call(s.kind)) ++tool_segments;
      CHECK(env_obs == tool_segments);
      if (r.trajectory.status == Status::Answered)
        CHECK(validate_sequence(r.trajectory).ok);
    }
  }
}
