#include "model_client.h"

#include <algorithm>
#include <chrono>
#include <thread>

#include <httplib.h>

#include "prompts.h"
#include "rng.h"
#include "strutil.h"

namespace coa {

GenerationResult apply_generation_limits(std::string text,
                                         const GenerationParams& params) {
  GenerationResult out;
  size_t best_pos = std::string::npos;
  size_t best_len = 0;
  for (const std::string& stop : params.stop) {
    if (stop.empty()) continue;
    size_t pos = text.find(stop);
    if (pos == std::string::npos) continue;
    if (pos < best_pos || (pos == best_pos && stop.size() > best_len)) {
      best_pos = pos;
      best_len = stop.size();
    }
  }
  if (best_pos != std::string::npos) {
    text.resize(best_pos + best_len);
    out.matched_stop = text.substr(best_pos);
    out.reason = FinishReason::Stop;
  }
  if (params.max_tokens > 0 && token_estimate(text) > params.max_tokens) {
    text.resize(static_cast<size_t>(params.max_tokens) * 4);
    out.matched_stop.clear();
    out.reason = FinishReason::Length;
  }
  out.text = std::move(text);
  return out;
}

GenerationResult summarize_page(ModelClient& client, const std::string& query,
                                const std::string& clues,
                                const std::string& page_text) {
  PromptContext ctx;
  ctx.user = summary_prompt_fill(query, clues, page_text);
  ctx.task_id = "summarize";
  return client.complete(ctx, GenerationParams{});
}

std::string prompt_hash_hex(std::string_view user_text) {
  std::uint64_t h = fnv1a64(user_text);
  char buf[17];
  static const char* hex = "0123456789abcdef";
  for (int i = 15; i >= 0; --i) {
    buf[i] = hex[h & 0xf];
    h >>= 4;
  }
  buf[16] = '\0';
  return buf;
}

ScriptedModelSpec ScriptedModelSpec::from_json(const nlohmann::json& j) {
  ScriptedModelSpec spec;
  if (j.contains("exhaustion")) {
    std::string e = j.at("exhaustion").get<std::string>();
    if (e == "repeat_last") {
      spec.exhaustion = Exhaustion::RepeatLast;
    } else if (e == "error") {
      spec.exhaustion = Exhaustion::Error;
    } else {
      throw std::runtime_error("unknown exhaustion policy: " + e);
    }
  }
  if (j.contains("default"))
    spec.default_script = j.at("default").get<std::vector<std::string>>();
  if (j.contains("by_task"))
    spec.by_task =
        j.at("by_task").get<std::map<std::string, std::vector<std::string>>>();
  if (j.contains("by_prompt_hash"))
    spec.by_prompt_hash =
        j.at("by_prompt_hash")
            .get<std::map<std::string, std::vector<std::string>>>();
  return spec;
}

class ScriptedSession : public ModelSession {
 public:
  explicit ScriptedSession(const ScriptedModel* owner) : owner_(owner) {}

  GenerationResult generate(const PromptContext& ctx,
                            const GenerationParams& params,
                            const ChunkCallback& on_chunk) override {
    GenerationResult res = next(ctx, params, cursors_);
    if (res.reason != FinishReason::Error && on_chunk && !res.text.empty())
      on_chunk(res.text);
    return res;
  }

  // Shared by session and client-level completion paths.
  GenerationResult next(const PromptContext& ctx, const GenerationParams& params,
                        std::map<const void*, size_t>& cursors) {
    const std::vector<std::string>* list = owner_->script_for(ctx);
    if (!list || list->empty()) {
      GenerationResult r;
      r.reason = FinishReason::Error;
      r.error = "no script entry for task '" + ctx.task_id + "'";
      return r;
    }
    size_t& cursor = cursors[list];
    if (cursor >= list->size()) {
      if (owner_->spec_.exhaustion == ScriptedModelSpec::Exhaustion::Error) {
        GenerationResult r;
        r.reason = FinishReason::Error;
        r.error = "script exhausted for task '" + ctx.task_id + "'";
        return r;
      }
      return apply_generation_limits(list->back(), params);
    }
    return apply_generation_limits((*list)[cursor++], params);
  }

 private:
  const ScriptedModel* owner_;
  std::map<const void*, size_t> cursors_;
};

ScriptedModel::ScriptedModel(ScriptedModelSpec spec) : spec_(std::move(spec)) {}

const std::vector<std::string>* ScriptedModel::script_for(
    const PromptContext& ctx) const {
  if (!spec_.by_prompt_hash.empty()) {
    auto it = spec_.by_prompt_hash.find(prompt_hash_hex(ctx.user));
    if (it != spec_.by_prompt_hash.end()) return &it->second;
  }
  auto it = spec_.by_task.find(ctx.task_id);
  if (it != spec_.by_task.end()) return &it->second;
  if (!spec_.default_script.empty()) return &spec_.default_script;
  return nullptr;
}

std::unique_ptr<ModelSession> ScriptedModel::open_session(const std::string&) {
  return std::make_unique<ScriptedSession>(this);
}

GenerationResult ScriptedModel::complete(const PromptContext& ctx,
                                         const GenerationParams& params) {
  std::lock_guard<std::mutex> lock(mu_);
  ScriptedSession session(this);
  return session.next(ctx, params, complete_cursors_);
}

namespace {

// Incremental SSE scanner for chat-completion streams.
class SseAccumulator {
 public:
  explicit SseAccumulator(const GenerationParams& params) : params_(&params) {
    for (const std::string& s : params.stop)
      max_stop_ = std::max(max_stop_, s.size());
  }

  // Returns false once the stream should abort (stop matched or [DONE]).
  bool feed(const char* data, size_t n, const ChunkCallback& on_chunk) {
    buf_.append(data, n);
    size_t nl;
    while ((nl = buf_.find('\n')) != std::string::npos) {
      std::string line = buf_.substr(0, nl);
      buf_.erase(0, nl + 1);
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (!starts_with(line, "data:")) continue;
      std::string payload = trim(std::string_view(line).substr(5));
      if (payload == "[DONE]") {
        done_ = true;
        return false;
      }
      nlohmann::json j = nlohmann::json::parse(payload, nullptr, false);
      if (j.is_discarded()) continue;
      const auto& choices = j.find("choices");
      if (choices == j.end() || !choices->is_array() || choices->empty())
        continue;
      const auto& choice = (*choices)[0];
      if (choice.contains("finish_reason") &&
          choice["finish_reason"].is_string() &&
          choice["finish_reason"].get<std::string>() == "length")
        saw_length_ = true;
      if (!choice.contains("delta")) continue;
      const auto& delta = choice["delta"];
      if (!delta.contains("content") || !delta["content"].is_string()) continue;
      std::string piece = delta["content"].get<std::string>();
      if (piece.empty()) continue;
      size_t old_len = text_.size();
      text_ += piece;
      size_t scan_from = old_len > max_stop_ ? old_len - (max_stop_ - 1) : 0;
      if (max_stop_ > 0 && find_stop(scan_from)) {
        if (on_chunk && text_.size() > old_len)
          on_chunk(std::string_view(text_).substr(old_len));
        return false;
      }
      if (on_chunk) on_chunk(piece);
    }
    return true;
  }

  bool find_stop(size_t from) {
    size_t best_pos = std::string::npos;
    size_t best_len = 0;
    for (const std::string& stop : params_->stop) {
      if (stop.empty()) continue;
      size_t pos = text_.find(stop, from);
      if (pos == std::string::npos) continue;
      if (pos < best_pos || (pos == best_pos && stop.size() > best_len)) {
        best_pos = pos;
        best_len = stop.size();
      }
    }
    if (best_pos == std::string::npos) return false;
    text_.resize(best_pos + best_len);
    matched_stop_ = text_.substr(best_pos);
    stopped_ = true;
    return true;
  }

  std::string text_;
  std::string matched_stop_;
  bool stopped_ = false;
  bool saw_length_ = false;
  bool done_ = false;

 private:
  const GenerationParams* params_;
  std::string buf_;
  size_t max_stop_ = 0;
};

bool retryable_status(int status) {
  return status == 429 || status >= 500;
}

}  // namespace

class HttpSession : public ModelSession {
 public:
  explicit HttpSession(HttpModel* owner) : owner_(owner) {}
  GenerationResult generate(const PromptContext& ctx,
                            const GenerationParams& params,
                            const ChunkCallback& on_chunk) override {
    return owner_->run_request(ctx, params, true, on_chunk);
  }

 private:
  HttpModel* owner_;
};

HttpModel::HttpModel(HttpEndpointConfig config) : config_(std::move(config)) {}
HttpModel::~HttpModel() = default;

std::unique_ptr<ModelSession> HttpModel::open_session(const std::string&) {
  return std::make_unique<HttpSession>(this);
}

GenerationResult HttpModel::complete(const PromptContext& ctx,
                                     const GenerationParams& params) {
  return run_request(ctx, params, false, nullptr);
}

nlohmann::json HttpModel::build_body(const PromptContext& ctx,
                                     const GenerationParams& params,
                                     bool streaming) const {
  nlohmann::json messages = nlohmann::json::array();
  if (!ctx.system.empty())
    messages.push_back({{"role", "system"}, {"content", ctx.system}});
  messages.push_back({{"role", "user"}, {"content", ctx.user}});
  nlohmann::json body = {
      {"model", config_.model},
      {"messages", std::move(messages)},
      {"temperature", params.temperature},
      {"top_p", params.top_p},
      {"stream", streaming},
  };
  // The stop parameter is deliberately not sent: servers exclude the matched
  // stop from the returned text and cap the list length, so stops are scanned
  // client-side instead.
  if (config_.send_top_k) body["top_k"] = params.top_k;
  if (params.max_tokens > 0) body["max_tokens"] = params.max_tokens;
  if (params.seed) body["seed"] = *params.seed;
  return body;
}

GenerationResult HttpModel::run_request(const PromptContext& ctx,
                                        const GenerationParams& params,
                                        bool streaming,
                                        const ChunkCallback& on_chunk) {
  const std::string body = build_body(ctx, params, streaming).dump();
  httplib::Headers headers;
  if (!config_.api_key.empty())
    headers.emplace("Authorization", "Bearer " + config_.api_key);

  GenerationResult out;
  int backoff = config_.backoff_initial_ms;
  std::string last_error;
  for (int attempt = 1; attempt <= config_.max_attempts; ++attempt) {
    httplib::Client cli(config_.base_url);
    cli.set_connection_timeout(config_.timeout_seconds);
    cli.set_read_timeout(config_.timeout_seconds);
    cli.set_write_timeout(config_.timeout_seconds);

    if (streaming) {
      SseAccumulator acc(params);
      int http_status = 0;
      httplib::Request req;
      req.method = "POST";
      req.path = config_.path;
      req.headers = headers;
      req.body = body;
      req.set_header("Content-Type", "application/json");
      req.response_handler = [&](const httplib::Response& r) {
        http_status = r.status;
        return r.status >= 200 && r.status < 300;
      };
      req.content_receiver = [&](const char* data, size_t n, std::uint64_t,
                                 std::uint64_t) {
        return acc.feed(data, n, on_chunk);
      };
      auto res = cli.send(req);
      bool aborted_by_us = acc.stopped_ || acc.done_;
      bool transport_ok = res || (res.error() == httplib::Error::Canceled &&
                                  (aborted_by_us || http_status != 0));
      if (transport_ok && http_status >= 200 && http_status < 300) {
        out.text = std::move(acc.text_);
        out.matched_stop = acc.matched_stop_;
        out.reason = acc.saw_length_ && !acc.stopped_ ? FinishReason::Length
                                                      : FinishReason::Stop;
        return out;
      }
      if (!acc.text_.empty()) {
        // Partial stream then failure: retrying would duplicate text.
        out.text = std::move(acc.text_);
        out.reason = FinishReason::Error;
        out.error = "stream interrupted (status " + std::to_string(http_status) +
                    ")";
        return out;
      }
      last_error = http_status != 0
                       ? "http status " + std::to_string(http_status)
                       : std::string(httplib::to_string(res.error()));
      if (http_status != 0 && !retryable_status(http_status)) break;
    } else {
      auto res = cli.Post(config_.path, headers, body, "application/json");
      if (res && res->status >= 200 && res->status < 300) {
        nlohmann::json j = nlohmann::json::parse(res->body, nullptr, false);
        if (j.is_discarded()) {
          out.reason = FinishReason::Error;
          out.error = "malformed completion response";
          return out;
        }
        try {
          const auto& choice = j.at("choices").at(0);
          out.text = choice.at("message").at("content").get<std::string>();
          if (choice.contains("finish_reason") &&
              choice["finish_reason"] == "length")
            out.reason = FinishReason::Length;
          else
            out.reason = FinishReason::Stop;
        } catch (const std::exception& e) {
          out.reason = FinishReason::Error;
          out.error = std::string("completion response missing fields: ") +
                      e.what();
        }
        return out;
      }
      last_error = res ? "http status " + std::to_string(res->status)
                       : std::string(httplib::to_string(res.error()));
      if (res && !retryable_status(res->status)) break;
    }
    if (attempt < config_.max_attempts) {
      std::this_thread::sleep_for(std::chrono::milliseconds(backoff));
      backoff = std::min(backoff * 2, config_.backoff_max_ms);
    }
  }
  out.reason = FinishReason::Error;
  out.error = "model endpoint unavailable: " + last_error;
  return out;
}

}  // namespace coa
