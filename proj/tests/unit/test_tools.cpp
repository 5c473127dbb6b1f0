#include <doctest.h>

#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "model_client.h"
#include "rng.h"
#include "tools.h"

using namespace coa;

TEST_CASE("parse_code_block extracts a single py fence") {
  auto p = parse_code_block("```py\nx=1\n```");
  REQUIRE(p.ok);
  CHECK(p.block.code == "x=1");
  CHECK(!p.block.stdin_data.has_value());

  auto alias = parse_code_block("prose\n```python\nprint(2)\n```\nafter");
  REQUIRE(alias.ok);
  CHECK(alias.block.code == "print(2)");

  auto multi = parse_code_block("```py\na=1\nb=2\n\nc=3\n```");
  REQUIRE(multi.ok);
  CHECK(multi.block.code == "a=1\nb=2\n\nc=3");
}

TEST_CASE("parse_code_block captures the sh fence as stdin") {
  auto p = parse_code_block("```py\nprint(input())\n```\n```sh\n5\n```");
  REQUIRE(p.ok);
  CHECK(p.block.code == "print(input())");
  REQUIRE(p.block.stdin_data.has_value());
  CHECK(*p.block.stdin_data == "5");

  auto multiline = parse_code_block(
      "```py\nimport sys\n```\n```sh\n3\nabc\nde\nfghi\n```");
  REQUIRE(multiline.ok);
  CHECK(*multiline.block.stdin_data == "3\nabc\nde\nfghi");
}

TEST_CASE("parse_code_block rejects malformed bodies") {
  CHECK(parse_code_block("x=1").error == "missing code fence");
  CHECK(parse_code_block("```sh\n5\n```").error == "missing code fence");
  CHECK(parse_code_block("```py\nx=1\n```\n```py\ny=2\n```").error ==
        "multiple code fences");
  CHECK(parse_code_block("```py\nx=1").error == "unterminated code fence");
  CHECK(parse_code_block("```py\nx=1\n```\n```sh\n1").error ==
        "unterminated stdin fence");
  CHECK(parse_code_block("```py extra\nx=1\n```").error == "missing code fence");
}

TEST_CASE("parse_code_block tolerates trailing whitespace on fence lines") {
  auto p = parse_code_block("```py  \nx=1\n```\t\r");
  REQUIRE(p.ok);
  CHECK(p.block.code == "x=1");
}

TEST_CASE("parse_code_block is total under fuzzing") {
  SplitMix64 rng(2024);
  const char alphabet[] = "`py\nsh x=1\r\t";
  for (int trial = 0; trial < 2000; ++trial) {
    std::string body;
    size_t len = rng.below(64);
    for (size_t i = 0; i < len; ++i)
      body += alphabet[rng.below(sizeof alphabet - 1)];
    auto p = parse_code_block(body);
    CHECK((p.ok || !p.error.empty()));
  }
}

TEST_CASE("search observations render in the fixed list format") {
  CHECK(render_search_observation({}) == "Found 0 results:");
  std::vector<SearchHit> hits = {
      {"First Title", "First snippet.", "https://a.example"},
      {"Second", "Line one\nLine two", "https://b.example"},
  };
  CHECK(render_search_observation(hits) ==
        "Found 2 results:\n\n"
        "1. [First Title](https://a.example)\nFirst snippet.\n\n"
        "2. [Second](https://b.example)\nLine one\nLine two");
}

TEST_CASE("crawl observations render per page with failure notes") {
  std::vector<PageSummary> pages = {
      {"https://ok.example", "1. Point.", true},
      {"https://dead.example", std::string(kCrawlFailureNote), false},
  };
  CHECK(render_crawl_observation(pages) ==
        "Page 1 [https://ok.example]\nSummary:\n1. Point.\n\n"
        "Page 2 [https://dead.example]: "
        "[Page content not accessible: Unsuccessful crawl]");
}

TEST_CASE("code observations render the sentinel blocks") {
  CodeExecResult r;
  r.status = 0;
  r.stdout_text = "204\n";
  CHECK(render_code_observation(r) ==
        "[EXECUTED] Code exited with status 0.\n"
        "[STDOUT:BEGIN]\n204\n[STDOUT:END]");

  r.status = 1;
  r.stdout_text = "";
  r.stderr_text = "Traceback\n  boom\n";
  CHECK(render_code_observation(r) ==
        "[EXECUTED] Code exited with status 1.\n"
        "[STDOUT:BEGIN]\n\n[STDOUT:END]\n"
        "[STDERR:BEGIN]\nTraceback\n  boom\n[STDERR:END]");
}

TEST_CASE("tool failures render the error note") {
  CHECK(render_tool_failure("code", "missing code fence") ==
        "[Tool error] code: missing code fence");
}

TEST_CASE("split_urls trims and drops empties") {
  CHECK(split_urls(" a | b|c\n") == std::vector<std::string>{"a", "b", "c"});
  CHECK(split_urls("||").empty());
  CHECK(split_urls("\nhttps://x\n") == std::vector<std::string>{"https://x"});
}

namespace {

ScriptedTools make_scripted() {
  ScriptedToolsSpec spec;
  spec.observations["web_search:exact replay"] = "Found 9 results:\n\ncanned";
  spec.web_search["apple"] = {{"T", "S", "https://u.example"}};
  spec.pages["https://p.example"] = {"https://p.example", "1. Summary.", true};
  CodeExecResult r;
  r.status = 0;
  r.stdout_text = "7\n";
  spec.code["print(7)"] = r;
  spec.double_check["42"] = {"", "The score this time is:4"};
  return ScriptedTools(std::move(spec));
}

}  // namespace

TEST_CASE("run_tool uses the raw observation bypass first") {
  auto tools = make_scripted();
  ToolRequest req{TagKind::WebSearch, "\nexact replay\n"};
  CHECK(run_tool(tools, req, {}) == "Found 9 results:\n\ncanned");
}

TEST_CASE("run_tool renders scripted search hits and misses") {
  auto tools = make_scripted();
  CHECK(run_tool(tools, {TagKind::WebSearch, "\napple\n"}, {}) ==
        "Found 1 results:\n\n1. [T](https://u.example)\nS");
  CHECK(run_tool(tools, {TagKind::WebSearch, "unknown"}, {}) ==
        "Found 0 results:");
}

TEST_CASE("run_tool renders scripted crawls with fallback failure notes") {
  auto tools = make_scripted();
  CHECK(run_tool(tools, {TagKind::CrawlPage, "https://p.example | https://q.example"},
                 {}) ==
        "Page 1 [https://p.example]\nSummary:\n1. Summary.\n\n"
        "Page 2 [https://q.example]: "
        "[Page content not accessible: Unsuccessful crawl]");
  CHECK(run_tool(tools, {TagKind::CrawlPage, " | "}, {}) ==
        "[Tool error] crawl_page: no URLs in crawl request");
}

TEST_CASE("run_tool executes scripted code and reports format errors") {
  auto tools = make_scripted();
  CHECK(run_tool(tools, {TagKind::Code, "```py\nprint(7)\n```"}, {}) ==
        "[EXECUTED] Code exited with status 0.\n[STDOUT:BEGIN]\n7\n[STDOUT:END]");
  CHECK(run_tool(tools, {TagKind::Code, "print(7)"}, {}) ==
        "[Tool error] code: missing code fence");
  CHECK(run_tool(tools, {TagKind::Code, "```py\nunknown()\n```"}, {}) ==
        "[EXECUTED] Code exited with status 0.\n[STDOUT:BEGIN]\n\n[STDOUT:END]");
}

TEST_CASE("run_tool reports unsupported kinds as failures") {
  auto tools = make_scripted();
  CHECK(run_tool(tools, {TagKind::Tools, "anything"}, {}) ==
        "[Tool error] tools: unsupported tool kind");
}

TEST_CASE("scripted double_check serves canned verdicts with a default") {
  auto tools = make_scripted();
  CHECK(tools.double_check("task", "42").verdict == "The score this time is:4");
  CHECK(tools.double_check("task", "42").rationale == "");
  CHECK(tools.double_check("task", "other").verdict ==
        "The score this time is:5");
}

TEST_CASE("scripted tools spec round-trips from json") {
  auto spec = ScriptedToolsSpec::from_json(nlohmann::json::parse(R"json({
    "observations": {"web_search:q": "Found 0 results:"},
    "web_search": {"q": [{"title": "t", "snippet": "s", "url": "u"}]},
    "pages": {
      "https://a": {"summary": "sum", "accessible": true},
      "https://b": {"accessible": false}
    },
    "code": {"print(1)": {"status": 2, "stdout": "1\n", "stderr": "e"}},
    "double_check": {
      "x": "The score this time is:1",
      "y": {"rationale": "Checked twice.", "verdict": "The score this time is:2"}
    },
    "double_check_default": "The score this time is:3"
  })json"));
  CHECK(spec.observations.size() == 1);
  CHECK(spec.web_search.at("q")[0].title == "t");
  CHECK(spec.pages.at("https://a").summary == "sum");
  CHECK(spec.pages.at("https://b").accessible == false);
  CHECK(spec.pages.at("https://b").summary == std::string(kCrawlFailureNote));
  CHECK(spec.code.at("print(1)").status == 2);
  CHECK(spec.double_check.at("x").verdict == "The score this time is:1");
  CHECK(spec.double_check.at("y").rationale == "Checked twice.");
  CHECK(spec.double_check.at("y").verdict == "The score this time is:2");
  CHECK(spec.double_check_default.verdict == "The score this time is:3");

  ScriptedTools tools(std::move(spec));
  CHECK(tools.supports(TagKind::WebSearch));
  CHECK(tools.supports(TagKind::DoubleCheck));
  CHECK(!tools.supports(TagKind::Tools));
}

namespace {

class FakeProviders {
 public:
  FakeProviders() {
    server_.Post("/search", [](const httplib::Request& rq, httplib::Response& rs) {
      auto body = nlohmann::json::parse(rq.body);
      nlohmann::json results = nlohmann::json::array();
      if (body["query"] == "apple") {
        results.push_back({{"title", "Apple"},
                           {"snippet", "Fruit."},
                           {"url", "https://apple.example"}});
        results.push_back({{"title", "Apple II"},
                           {"snippet", "Computer."},
                           {"url", "https://a2.example"}});
      }
      rs.set_content(nlohmann::json{{"results", results}}.dump(),
                     "application/json");
    });
    server_.Post("/read", [](const httplib::Request& rq, httplib::Response& rs) {
      auto body = nlohmann::json::parse(rq.body);
      std::string url = body["url"];
      if (url == "https://dead.example") {
        rs.status = 404;
        return;
      }
      rs.set_content(
          nlohmann::json{{"content", "Page body for " + url}}.dump(),
          "application/json");
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }

  ~FakeProviders() {
    server_.stop();
    thread_.join();
  }

  std::string base_url() const {
    return "http://127.0.0.1:" + std::to_string(port_);
  }

 private:
  httplib::Server server_;
  std::thread thread_;
  int port_ = 0;
};

}  // namespace

TEST_CASE("live tools hit the search and reader providers") {
  FakeProviders providers;
  LiveToolsConfig cfg;
  cfg.search.base_url = providers.base_url();
  cfg.search.path = "/search";
  cfg.reader.base_url = providers.base_url();
  cfg.reader.path = "/read";

  ScriptedModelSpec model_spec;
  model_spec.exhaustion = ScriptedModelSpec::Exhaustion::RepeatLast;
  model_spec.by_task["summarize"] = {"1. Three points.\n2. Links.\n3. Done."};
  model_spec.by_task["double_check"] = {
      "The answer holds up.\n\nThe score this time is:4"};
  ScriptedModel model(std::move(model_spec));

  LiveTools tools(cfg, &model, &model);
  CHECK(tools.supports(TagKind::WebSearch));
  CHECK(tools.supports(TagKind::CrawlPage));

  auto hits = tools.web_search("apple", 1);
  REQUIRE(hits.size() == 1);
  CHECK(hits[0].title == "Apple");

  auto obs = run_tool(tools, {TagKind::WebSearch, "apple"}, {});
  CHECK(obs ==
        "Found 2 results:\n\n1. [Apple](https://apple.example)\nFruit.\n\n"
        "2. [Apple II](https://a2.example)\nComputer.");

  auto pages = tools.crawl_page({"https://ok.example", "https://dead.example"},
                                {"q", "clues"});
  REQUIRE(pages.size() == 2);
  CHECK(pages[0].accessible);
  CHECK(pages[0].summary == "1. Three points.\n2. Links.\n3. Done.");
  CHECK(!pages[1].accessible);
  CHECK(pages[1].summary == std::string(kCrawlFailureNote));

  auto exec = tools.exec_code({"print(6 * 7)", std::nullopt});
  CHECK(exec.status == 0);
  CHECK(exec.stdout_text == "42\n");

  CheckVerdict verdict = tools.double_check("task", "42");
  CHECK(verdict.rationale == "The answer holds up.");
  CHECK(verdict.verdict == "The score this time is:4");
}

TEST_CASE("live search failures become failure observations") {
  LiveToolsConfig cfg;
  cfg.search.base_url = "http://127.0.0.1:1";
  cfg.search.timeout_seconds = 1;
  LiveTools tools(cfg, nullptr, nullptr);
  auto obs = run_tool(tools, {TagKind::WebSearch, "q"}, {});
  CHECK(obs.rfind("[Tool error] web_search: search provider unreachable", 0) == 0);
}
