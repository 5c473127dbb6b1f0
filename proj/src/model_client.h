#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace coa {

struct GenerationParams {
  double temperature = 1.0;
  double top_p = 0.9;
  int top_k = 20;
  std::uint64_t max_tokens = 0;  // 0 = unbounded
  std::vector<std::string> stop;
  std::optional<std::uint64_t> seed;
};

enum class FinishReason { Stop, Length, Error };

struct GenerationResult {
  std::string text;
  FinishReason reason = FinishReason::Stop;
  std::string matched_stop;  // stop sequence that ended the text, if any
  std::string error;         // set when reason == Error
};

struct PromptContext {
  std::string system;
  std::string user;
  std::string task_id;  // script routing hint; HTTP adapters ignore it
};

using ChunkCallback = std::function<void(std::string_view)>;

// One generation stream per episode turn. Sessions are not thread-safe;
// one session belongs to one episode.
class ModelSession {
 public:
  virtual ~ModelSession() = default;
  virtual GenerationResult generate(const PromptContext& ctx,
                                    const GenerationParams& params,
                                    const ChunkCallback& on_chunk = nullptr) = 0;
};

// Shared across episodes; open_session gives each episode its own cursor
// (scripted) or connection context (HTTP).
class ModelClient {
 public:
  virtual ~ModelClient() = default;
  virtual std::unique_ptr<ModelSession> open_session(const std::string& task_id) = 0;
  // Non-streaming single shot (judge, summarizer).
  virtual GenerationResult complete(const PromptContext& ctx,
                                    const GenerationParams& params) = 0;
  virtual bool is_scripted() const = 0;
};

// Truncates `text` through the earliest stop occurrence (stop included so tag
// close literals stay visible to the parser), then applies the max_tokens
// cap. Used by the scripted adapter and by tests.
GenerationResult apply_generation_limits(std::string text,
                                         const GenerationParams& params);

// Script: ordered responses keyed by task id or prompt hash, falling back to
// a default list. Exhaustion either errors or repeats the last entry.
struct ScriptedModelSpec {
  enum class Exhaustion { Error, RepeatLast };
  Exhaustion exhaustion = Exhaustion::Error;
  std::vector<std::string> default_script;
  std::map<std::string, std::vector<std::string>> by_task;
  // Key: lowercase hex of fnv1a64(user text), no 0x prefix.
  std::map<std::string, std::vector<std::string>> by_prompt_hash;

  static ScriptedModelSpec from_json(const nlohmann::json& j);
};

class ScriptedModel : public ModelClient {
 public:
  explicit ScriptedModel(ScriptedModelSpec spec);

  std::unique_ptr<ModelSession> open_session(const std::string& task_id) override;
  GenerationResult complete(const PromptContext& ctx,
                            const GenerationParams& params) override;
  bool is_scripted() const override { return true; }

 private:
  friend class ScriptedSession;
  // Picks the script list for a context; nullptr when none configured.
  const std::vector<std::string>* script_for(const PromptContext& ctx) const;

  ScriptedModelSpec spec_;
  std::mutex mu_;  // guards complete_cursors_
  std::map<const void*, size_t> complete_cursors_;
};

std::string prompt_hash_hex(std::string_view user_text);

// Non-streaming single shot through the page summary prompt. The page text
// must already be truncated to the crawl cap; the raw model text is the
// summary.
GenerationResult summarize_page(ModelClient& client, const std::string& query,
                                const std::string& clues,
                                const std::string& page_text);

// OpenAI-compatible chat-completions adapter. Streams via SSE and scans for
// stop sequences client-side: the stop parameter is not sent, the matched
// stop literal is kept in the returned text, and the stream is aborted once
// one matches. Retries transport failures and 429/5xx with bounded
// exponential backoff.
struct HttpEndpointConfig {
  std::string base_url;  // e.g. "http://127.0.0.1:8000"
  std::string path = "/v1/chat/completions";
  std::string api_key;
  std::string model;
  int max_attempts = 3;
  int backoff_initial_ms = 200;
  int backoff_max_ms = 5000;
  int timeout_seconds = 120;
  bool send_top_k = true;
};

class HttpModel : public ModelClient {
 public:
  explicit HttpModel(HttpEndpointConfig config);
  ~HttpModel() override;

  std::unique_ptr<ModelSession> open_session(const std::string& task_id) override;
  GenerationResult complete(const PromptContext& ctx,
                            const GenerationParams& params) override;
  bool is_scripted() const override { return false; }

 private:
  friend class HttpSession;
  GenerationResult run_request(const PromptContext& ctx,
                               const GenerationParams& params, bool streaming,
                               const ChunkCallback& on_chunk);
  nlohmann::json build_body(const PromptContext& ctx,
                            const GenerationParams& params, bool streaming) const;

  HttpEndpointConfig config_;
};

}  // namespace coa
