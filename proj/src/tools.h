#pragma once

#include <chrono>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "model_client.h"
#include "sandbox.h"
#include "tags.h"

namespace coa {

struct SearchHit {
  std::string title;
  std::string snippet;
  std::string url;
};

struct PageSummary {
  std::string url;
  std::string summary;
  bool accessible = true;
};

inline constexpr std::string_view kCrawlFailureNote =
    "[Page content not accessible: Unsuccessful crawl]";
inline constexpr int kDefaultSearchResults = 10;

struct CodeBlock {
  std::string code;
  std::optional<std::string> stdin_data;
};

// parse_code_block is total: every body yields ok or a reason.
struct CodeParse {
  bool ok = false;
  CodeBlock block;
  std::string error;
};

// Extracts the single ```py (or ```python) fence and an optional ```sh fence
// carrying stdin. Fence markers are recognized on their own line.
CodeParse parse_code_block(std::string_view body);

struct ToolRequest {
  TagKind kind = TagKind::Code;
  std::string payload;
};

// Search query and think context threaded into crawl summarization.
struct CrawlContext {
  std::string query;
  std::string clues;
};

// Checker output for a suggested answer. The verdict body carries the score
// line; a non-empty rationale is inserted ahead of it as an environment
// think segment, matching how recorded episodes carry the checker's text.
struct CheckVerdict {
  std::string rationale;
  std::string verdict;
};

// Observation bodies are model-visible protocol; these formats are frozen.
std::string render_search_observation(const std::vector<SearchHit>& hits);
std::string render_crawl_observation(const std::vector<PageSummary>& pages);
std::string render_code_observation(const CodeExecResult& result);
std::string render_tool_failure(std::string_view tool, std::string_view message);

// Provider-level failure; run_tool converts it into a failure observation so
// the episode continues.
class ToolError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ToolSet {
 public:
  virtual ~ToolSet() = default;

  virtual bool supports(TagKind kind) const = 0;
  virtual std::vector<SearchHit> web_search(const std::string& query, int k) = 0;
  virtual std::vector<PageSummary> crawl_page(const std::vector<std::string>& urls,
                                              const CrawlContext& ctx) = 0;
  virtual CodeExecResult exec_code(const CodeBlock& block) = 0;
  // Verdict for the double_check insertion that follows a suggested answer.
  virtual CheckVerdict double_check(const std::string& task,
                                    const std::string& suggested_answer) = 0;
  // Byte-exact replay shortcut keyed on the raw request; nullopt falls
  // through to the typed path.
  virtual std::optional<std::string> raw_observation(const ToolRequest& req);
};

// Splits a crawl payload on '|', trimming entries and dropping empties.
std::vector<std::string> split_urls(std::string_view payload);

// Executes one tool request end to end and renders the observation body.
// Provider errors become failure observations, never exceptions.
std::string run_tool(ToolSet& tools, const ToolRequest& req,
                     const CrawlContext& ctx, int k = kDefaultSearchResults);

// Canned tool responses. Misses fall back deterministically: empty search
// results, inaccessible pages, successful empty code runs, default verdict.
struct ScriptedToolsSpec {
  // "kind:payload" -> raw observation body, bypassing the typed path.
  std::map<std::string, std::string> observations;
  std::map<std::string, std::vector<SearchHit>> web_search;
  std::map<std::string, PageSummary> pages;  // keyed by url
  std::map<std::string, CodeExecResult> code;  // keyed by exact program text
  std::map<std::string, CheckVerdict> double_check;  // keyed by suggested answer
  CheckVerdict double_check_default{{}, "The score this time is:5"};

  static ScriptedToolsSpec from_json(const nlohmann::json& j);
};

class ScriptedTools : public ToolSet {
 public:
  explicit ScriptedTools(ScriptedToolsSpec spec);

  bool supports(TagKind kind) const override;
  std::vector<SearchHit> web_search(const std::string& query, int k) override;
  std::vector<PageSummary> crawl_page(const std::vector<std::string>& urls,
                                      const CrawlContext& ctx) override;
  CodeExecResult exec_code(const CodeBlock& block) override;
  CheckVerdict double_check(const std::string& task,
                            const std::string& suggested_answer) override;
  std::optional<std::string> raw_observation(const ToolRequest& req) override;

 private:
  ScriptedToolsSpec spec_;
};

struct ProviderEndpointConfig {
  std::string base_url;
  std::string path;
  std::string api_key;
  int timeout_seconds = 30;
  int min_interval_ms = 0;  // simple per-provider rate limit
};

struct LiveToolsConfig {
  ProviderEndpointConfig search;  // POST {query,k} -> {results:[{title,snippet,url}]}
  ProviderEndpointConfig reader;  // POST {url} -> {content}
  SandboxLimits sandbox;
  std::uint64_t page_char_cap = 32768;
};

// Production adapters: HTTP search provider, HTTP page reader plus model
// summarization, local process sandbox, model-backed answer checking.
class LiveTools : public ToolSet {
 public:
  // summarizer scores crawl summaries, checker scores suggested answers;
  // both may alias the policy client. Neither is owned.
  LiveTools(LiveToolsConfig config, ModelClient* summarizer, ModelClient* checker);

  bool supports(TagKind kind) const override;
  std::vector<SearchHit> web_search(const std::string& query, int k) override;
  std::vector<PageSummary> crawl_page(const std::vector<std::string>& urls,
                                      const CrawlContext& ctx) override;
  CodeExecResult exec_code(const CodeBlock& block) override;
  CheckVerdict double_check(const std::string& task,
                            const std::string& suggested_answer) override;

 private:
  class RateGate {
   public:
    void wait(int min_interval_ms);

   private:
    std::mutex mu_;
    std::chrono::steady_clock::time_point last_{};
  };

  LiveToolsConfig config_;
  ModelClient* summarizer_;
  ModelClient* checker_;
  PythonSandbox sandbox_;
  RateGate search_gate_;
  RateGate reader_gate_;
};

}  // namespace coa
