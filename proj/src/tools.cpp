#include "tools.h"

#include <sstream>
#include <thread>

#include <httplib.h>

#include "strutil.h"

namespace coa {

namespace {

std::string_view rtrim_ws(std::string_view s) {
  size_t e = s.size();
  while (e > 0 && (s[e - 1] == ' ' || s[e - 1] == '\t' || s[e - 1] == '\r'))
    --e;
  return s.substr(0, e);
}

// Joins captured fence lines; the fence structure owns the line breaks, so
// the buffer carries no trailing newline.
std::string join_lines(const std::vector<std::string_view>& lines) {
  std::string out;
  for (size_t i = 0; i < lines.size(); ++i) {
    if (i) out += '\n';
    out.append(lines[i]);
  }
  return out;
}

}  // namespace

CodeParse parse_code_block(std::string_view body) {
  CodeParse result;
  enum class Fence { None, Code, Stdin };
  Fence open = Fence::None;
  bool have_code = false, have_stdin = false;
  std::vector<std::string_view> current;
  std::string code, stdin_data;

  size_t pos = 0;
  while (pos <= body.size()) {
    size_t nl = body.find('\n', pos);
    std::string_view line = body.substr(
        pos, (nl == std::string_view::npos ? body.size() : nl) - pos);
    std::string_view marker = rtrim_ws(line);

    if (open == Fence::None) {
      if (marker == "```py" || marker == "```python") {
        if (have_code) {
          result.error = "multiple code fences";
          return result;
        }
        open = Fence::Code;
        current.clear();
      } else if (marker == "```sh") {
        if (have_stdin) {
          result.error = "multiple stdin fences";
          return result;
        }
        open = Fence::Stdin;
        current.clear();
      }
    } else if (marker == "```") {
      if (open == Fence::Code) {
        code = join_lines(current);
        have_code = true;
      } else {
        stdin_data = join_lines(current);
        have_stdin = true;
      }
      open = Fence::None;
    } else {
      current.push_back(line);
    }

    if (nl == std::string_view::npos) break;
    pos = nl + 1;
  }

  if (open != Fence::None) {
    result.error = open == Fence::Code ? "unterminated code fence"
                                       : "unterminated stdin fence";
    return result;
  }
  if (!have_code) {
    result.error = "missing code fence";
    return result;
  }
  result.ok = true;
  result.block.code = std::move(code);
  if (have_stdin) result.block.stdin_data = std::move(stdin_data);
  return result;
}

std::string render_search_observation(const std::vector<SearchHit>& hits) {
  std::string out = "Found " + std::to_string(hits.size()) + " results:";
  for (size_t i = 0; i < hits.size(); ++i) {
    out += "\n\n" + std::to_string(i + 1) + ". [" + hits[i].title + "](" +
           hits[i].url + ")\n" + hits[i].snippet;
  }
  return out;
}

std::string render_crawl_observation(const std::vector<PageSummary>& pages) {
  std::string out;
  for (size_t i = 0; i < pages.size(); ++i) {
    if (i) out += "\n\n";
    std::string head = "Page " + std::to_string(i + 1) + " [" + pages[i].url + "]";
    if (pages[i].accessible) {
      out += head + "\nSummary:\n" + pages[i].summary;
    } else {
      out += head + ": " + std::string(kCrawlFailureNote);
    }
  }
  return out;
}

std::string render_code_observation(const CodeExecResult& result) {
  std::string out = "[EXECUTED] Code exited with status " +
                    std::to_string(result.status) + ".\n[STDOUT:BEGIN]\n";
  out += chomp_view(result.stdout_text);
  out += "\n[STDOUT:END]";
  if (!result.stderr_text.empty()) {
    out += "\n[STDERR:BEGIN]\n";
    out += chomp_view(result.stderr_text);
    out += "\n[STDERR:END]";
  }
  return out;
}

std::string render_tool_failure(std::string_view tool, std::string_view message) {
  std::string out = "[Tool error] ";
  out.append(tool);
  out += ": ";
  out.append(message);
  return out;
}

std::optional<std::string> ToolSet::raw_observation(const ToolRequest&) {
  return std::nullopt;
}

std::vector<std::string> split_urls(std::string_view payload) {
  std::vector<std::string> urls;
  size_t pos = 0;
  while (pos <= payload.size()) {
    size_t bar = payload.find('|', pos);
    std::string_view piece = payload.substr(
        pos, (bar == std::string_view::npos ? payload.size() : bar) - pos);
    std::string url = trim(piece);
    if (!url.empty()) urls.push_back(std::move(url));
    if (bar == std::string_view::npos) break;
    pos = bar + 1;
  }
  return urls;
}

std::string run_tool(ToolSet& tools, const ToolRequest& req,
                     const CrawlContext& ctx, int k) {
  if (auto raw = tools.raw_observation(req)) return *raw;
  try {
    switch (req.kind) {
      case TagKind::WebSearch:
        return render_search_observation(tools.web_search(trim(req.payload), k));
      case TagKind::CrawlPage: {
        std::vector<std::string> urls = split_urls(req.payload);
        if (urls.empty()) throw ToolError("no URLs in crawl request");
        CrawlContext effective = ctx;
        if (effective.query.empty()) effective.query = urls.back();
        return render_crawl_observation(tools.crawl_page(urls, effective));
      }
      case TagKind::Code: {
        CodeParse parsed = parse_code_block(req.payload);
        if (!parsed.ok) return render_tool_failure("code", parsed.error);
        CodeExecResult result = tools.exec_code(parsed.block);
        if (!result.error.empty())
          return render_tool_failure("code", result.error);
        return render_code_observation(result);
      }
      default:
        return render_tool_failure(kind_name(req.kind), "unsupported tool kind");
    }
  } catch (const ToolError& e) {
    return render_tool_failure(kind_name(req.kind), e.what());
  }
}

ScriptedToolsSpec ScriptedToolsSpec::from_json(const nlohmann::json& j) {
  ScriptedToolsSpec spec;
  if (j.contains("observations"))
    spec.observations =
        j.at("observations").get<std::map<std::string, std::string>>();
  if (j.contains("web_search")) {
    for (const auto& [query, hits] : j.at("web_search").items()) {
      std::vector<SearchHit>& list = spec.web_search[query];
      for (const auto& h : hits) {
        SearchHit hit;
        hit.title = h.value("title", "");
        hit.snippet = h.value("snippet", "");
        hit.url = h.value("url", "");
        list.push_back(std::move(hit));
      }
    }
  }
  if (j.contains("pages")) {
    for (const auto& [url, p] : j.at("pages").items()) {
      PageSummary page;
      page.url = url;
      page.accessible = p.value("accessible", true);
      page.summary = page.accessible ? p.value("summary", "")
                                     : std::string(kCrawlFailureNote);
      spec.pages[url] = std::move(page);
    }
  }
  if (j.contains("code")) {
    for (const auto& [program, r] : j.at("code").items()) {
      CodeExecResult result;
      result.status = r.value("status", 0);
      result.stdout_text = r.value("stdout", "");
      result.stderr_text = r.value("stderr", "");
      result.timed_out = r.value("timed_out", false);
      spec.code[program] = std::move(result);
    }
  }
  auto verdict_from = [](const nlohmann::json& v) {
    CheckVerdict out;
    if (v.is_string()) {
      out.verdict = v.get<std::string>();
    } else {
      out.rationale = v.value("rationale", "");
      out.verdict = v.value("verdict", "");
    }
    return out;
  };
  if (j.contains("double_check"))
    for (const auto& [answer, v] : j.at("double_check").items())
      spec.double_check[answer] = verdict_from(v);
  if (j.contains("double_check_default"))
    spec.double_check_default = verdict_from(j.at("double_check_default"));
  return spec;
}

ScriptedTools::ScriptedTools(ScriptedToolsSpec spec) : spec_(std::move(spec)) {}

bool ScriptedTools::supports(TagKind kind) const {
  return kind == TagKind::WebSearch || kind == TagKind::CrawlPage ||
         kind == TagKind::Code || kind == TagKind::DoubleCheck;
}

std::vector<SearchHit> ScriptedTools::web_search(const std::string& query, int k) {
  auto it = spec_.web_search.find(query);
  if (it == spec_.web_search.end()) return {};
  std::vector<SearchHit> hits = it->second;
  if (k >= 0 && hits.size() > static_cast<size_t>(k))
    hits.resize(static_cast<size_t>(k));
  return hits;
}

std::vector<PageSummary> ScriptedTools::crawl_page(
    const std::vector<std::string>& urls, const CrawlContext&) {
  std::vector<PageSummary> pages;
  pages.reserve(urls.size());
  for (const std::string& url : urls) {
    auto it = spec_.pages.find(url);
    if (it != spec_.pages.end()) {
      PageSummary page = it->second;
      page.url = url;
      pages.push_back(std::move(page));
    } else {
      pages.push_back({url, std::string(kCrawlFailureNote), false});
    }
  }
  return pages;
}

CodeExecResult ScriptedTools::exec_code(const CodeBlock& block) {
  auto it = spec_.code.find(block.code);
  if (it != spec_.code.end()) return it->second;
  CodeExecResult ok;
  ok.status = 0;
  return ok;
}

CheckVerdict ScriptedTools::double_check(const std::string&,
                                         const std::string& suggested_answer) {
  auto it = spec_.double_check.find(suggested_answer);
  if (it != spec_.double_check.end()) return it->second;
  return spec_.double_check_default;
}

std::optional<std::string> ScriptedTools::raw_observation(const ToolRequest& req) {
  std::string key = std::string(kind_name(req.kind)) + ":" + trim(req.payload);
  auto it = spec_.observations.find(key);
  if (it == spec_.observations.end()) return std::nullopt;
  return it->second;
}

void LiveTools::RateGate::wait(int min_interval_ms) {
  if (min_interval_ms <= 0) return;
  std::unique_lock<std::mutex> lock(mu_);
  auto now = std::chrono::steady_clock::now();
  auto next = last_ + std::chrono::milliseconds(min_interval_ms);
  if (now < next) {
    std::this_thread::sleep_for(next - now);
    now = std::chrono::steady_clock::now();
  }
  last_ = now;
}

LiveTools::LiveTools(LiveToolsConfig config, ModelClient* summarizer,
                     ModelClient* checker)
    : config_(std::move(config)),
      summarizer_(summarizer),
      checker_(checker),
      sandbox_(config_.sandbox) {}

bool LiveTools::supports(TagKind kind) const {
  switch (kind) {
    case TagKind::WebSearch:
      return !config_.search.base_url.empty();
    case TagKind::CrawlPage:
      return !config_.reader.base_url.empty() && summarizer_ != nullptr;
    case TagKind::Code:
      return true;
    case TagKind::DoubleCheck:
      return checker_ != nullptr;
    default:
      return false;
  }
}

namespace {

nlohmann::json provider_post(const ProviderEndpointConfig& cfg,
                             const nlohmann::json& body,
                             const std::string& provider) {
  httplib::Client cli(cfg.base_url);
  cli.set_connection_timeout(cfg.timeout_seconds);
  cli.set_read_timeout(cfg.timeout_seconds);
  httplib::Headers headers;
  if (!cfg.api_key.empty())
    headers.emplace("Authorization", "Bearer " + cfg.api_key);
  auto res = cli.Post(cfg.path, headers, body.dump(), "application/json");
  if (!res)
    throw ToolError(provider + " unreachable: " +
                    std::string(httplib::to_string(res.error())));
  if (res->status < 200 || res->status >= 300)
    throw ToolError(provider + " status " + std::to_string(res->status));
  nlohmann::json j = nlohmann::json::parse(res->body, nullptr, false);
  if (j.is_discarded()) throw ToolError(provider + " returned malformed JSON");
  return j;
}

}  // namespace

std::vector<SearchHit> LiveTools::web_search(const std::string& query, int k) {
  if (config_.search.base_url.empty())
    throw ToolError("no search provider configured");
  search_gate_.wait(config_.search.min_interval_ms);
  nlohmann::json j = provider_post(config_.search, {{"query", query}, {"k", k}},
                                   "search provider");
  std::vector<SearchHit> hits;
  if (j.contains("results") && j["results"].is_array()) {
    for (const auto& h : j["results"]) {
      SearchHit hit;
      hit.title = h.value("title", "");
      hit.snippet = h.value("snippet", "");
      hit.url = h.value("url", "");
      hits.push_back(std::move(hit));
      if (k >= 0 && hits.size() == static_cast<size_t>(k)) break;
    }
  }
  return hits;
}

std::vector<PageSummary> LiveTools::crawl_page(
    const std::vector<std::string>& urls, const CrawlContext& ctx) {
  std::vector<PageSummary> pages;
  pages.reserve(urls.size());
  for (const std::string& url : urls) {
    std::string content;
    bool fetched = false;
    if (!config_.reader.base_url.empty()) {
      reader_gate_.wait(config_.reader.min_interval_ms);
      try {
        nlohmann::json j =
            provider_post(config_.reader, {{"url", url}}, "page reader");
        if (j.contains("content") && j["content"].is_string()) {
          content = j["content"].get<std::string>();
          fetched = !content.empty();
        }
      } catch (const ToolError&) {
        fetched = false;
      }
    }
    if (!fetched || summarizer_ == nullptr) {
      pages.push_back({url, std::string(kCrawlFailureNote), false});
      continue;
    }
    if (content.size() > config_.page_char_cap)
      content.resize(config_.page_char_cap);
    GenerationResult summary =
        summarize_page(*summarizer_, ctx.query, ctx.clues, content);
    if (summary.reason == FinishReason::Error) {
      pages.push_back({url, std::string(kCrawlFailureNote), false});
      continue;
    }
    pages.push_back({url, summary.text, true});
  }
  return pages;
}

CodeExecResult LiveTools::exec_code(const CodeBlock& block) {
  return sandbox_.run(block.code, block.stdin_data.value_or(""));
}

CheckVerdict LiveTools::double_check(const std::string& task,
                                     const std::string& suggested_answer) {
  if (checker_ == nullptr)
    return {{}, render_tool_failure("double_check", "no checker configured")};
  PromptContext ctx;
  ctx.task_id = "double_check";
  std::ostringstream user;
  user << "You are verifying a suggested answer before it becomes final.\n\n"
       << "Task:\n"
       << task << "\n\n"
       << "Suggested answer:\n"
       << suggested_answer << "\n\n"
       << "Judge whether the suggested answer fully resolves the task. Give a "
          "short rationale, then end with a line of exactly this form:\n"
          "The score this time is:<k>\n"
          "where <k> is an integer from 0 to 5.";
  ctx.user = user.str();
  GenerationResult res = checker_->complete(ctx, GenerationParams{});
  if (res.reason == FinishReason::Error)
    return {{}, render_tool_failure("double_check", res.error)};
  // Text ahead of the score marker is the checker's rationale; without a
  // marker the whole reply stands as the verdict and scores zero.
  static constexpr std::string_view kMarker = "The score this time is:";
  size_t at = res.text.find(kMarker);
  if (at == std::string::npos) return {{}, trim(res.text)};
  return {trim(res.text.substr(0, at)), trim(res.text.substr(at))};
}

}  // namespace coa
