#include "engine.h"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cerrno>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "parser.h"
#include "rewards.h"
#include "validate.h"

namespace coa {

namespace {

using nlohmann::json;

std::string trim_copy(std::string_view s) {
  size_t b = 0;
  size_t e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

bool parse_u64(const std::string& text, std::uint64_t& out) {
  if (text.empty() || text[0] == '-') return false;
  errno = 0;
  char* end = nullptr;
  unsigned long long v = std::strtoull(text.c_str(), &end, 10);
  if (errno != 0 || end != text.c_str() + text.size()) return false;
  out = v;
  return true;
}

bool parse_f64(const std::string& text, double& out) {
  if (text.empty()) return false;
  errno = 0;
  char* end = nullptr;
  double v = std::strtod(text.c_str(), &end);
  if (errno != 0 || end != text.c_str() + text.size()) return false;
  out = v;
  return true;
}

}  // namespace

JsonlResult read_jsonl(std::istream& in) {
  JsonlResult out;
  std::string line;
  std::uint64_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim_copy(line).empty()) continue;
    json record = json::parse(line, nullptr, false);
    if (record.is_discarded()) {
      out.error = "line " + std::to_string(line_no) + ": invalid JSON";
      out.records.clear();
      return out;
    }
    out.records.push_back(std::move(record));
  }
  return out;
}

JsonlResult read_jsonl_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    JsonlResult out;
    out.error = "cannot open " + path;
    return out;
  }
  JsonlResult out = read_jsonl(in);
  if (!out.error.empty()) out.error = path + ": " + out.error;
  return out;
}

std::string read_text_file(const std::string& path, std::string* error) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    if (error) *error = "cannot open " + path;
    return {};
  }
  std::ostringstream buf;
  buf << in.rdbuf();
  if (in.bad()) {
    if (error) *error = "read failed for " + path;
    return {};
  }
  return buf.str();
}

bool write_text_file(const std::string& path, std::string_view content,
                     std::string* error) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    if (error) *error = "cannot write " + path;
    return false;
  }
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  out.flush();
  if (!out.good()) {
    if (error) *error = "write failed for " + path;
    return false;
  }
  return true;
}

std::optional<Profile> profile_from_flag(std::string_view flag) {
  if (flag == "web") return Profile::WebAgent;
  if (flag == "code") return Profile::CodeMath;
  return profile_from_name(flag);
}

namespace {

// Collects the first schema violation; all setters no-op once set.
struct ConfigErrors {
  std::string error;

  void fail(const std::string& message) {
    if (error.empty()) error = message;
  }
  bool ok() const { return error.empty(); }
};

bool expect_object(const json& j, const char* where, ConfigErrors& errs) {
  if (j.is_object()) return true;
  errs.fail(std::string(where) + " must be an object");
  return false;
}

void reject_unknown(const json& obj, const char* where,
                    std::initializer_list<const char*> allowed,
                    ConfigErrors& errs) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool known = false;
    for (const char* key : allowed)
      if (it.key() == key) known = true;
    if (!known) errs.fail(std::string("unknown key ") + where + "." + it.key());
  }
}

void get_u64(const json& obj, const char* where, const char* key,
             std::uint64_t& out, ConfigErrors& errs) {
  if (!obj.contains(key)) return;
  const json& v = obj.at(key);
  bool ok = v.is_number_unsigned() ||
            (v.is_number_integer() && v.get<std::int64_t>() >= 0);
  if (!ok) {
    errs.fail(std::string(where) + "." + key + " must be a non-negative integer");
    return;
  }
  out = v.get<std::uint64_t>();
}

void get_int(const json& obj, const char* where, const char* key, int& out,
             ConfigErrors& errs) {
  if (!obj.contains(key)) return;
  const json& v = obj.at(key);
  if (!v.is_number_integer()) {
    errs.fail(std::string(where) + "." + key + " must be an integer");
    return;
  }
  out = v.get<int>();
}

void get_f64(const json& obj, const char* where, const char* key, double& out,
             ConfigErrors& errs) {
  if (!obj.contains(key)) return;
  const json& v = obj.at(key);
  if (!v.is_number()) {
    errs.fail(std::string(where) + "." + key + " must be a number");
    return;
  }
  out = v.get<double>();
}

void get_str(const json& obj, const char* where, const char* key,
             std::string& out, ConfigErrors& errs) {
  if (!obj.contains(key)) return;
  const json& v = obj.at(key);
  if (!v.is_string()) {
    errs.fail(std::string(where) + "." + key + " must be a string");
    return;
  }
  out = v.get<std::string>();
}

void get_bool(const json& obj, const char* where, const char* key, bool& out,
              ConfigErrors& errs) {
  if (!obj.contains(key)) return;
  const json& v = obj.at(key);
  if (!v.is_boolean()) {
    errs.fail(std::string(where) + "." + key + " must be a boolean");
    return;
  }
  out = v.get<bool>();
}

void parse_api_key(const json& obj, const char* where, std::string& out,
                   ConfigErrors& errs) {
  std::string env_name;
  get_str(obj, where, "api_key_env", env_name, errs);
  if (env_name.empty()) return;
  const char* value = std::getenv(env_name.c_str());
  if (!value) {
    errs.fail("environment variable " + env_name + " named by " + where +
              ".api_key_env is not set");
    return;
  }
  out = value;
}

void parse_endpoint(const json& obj, const char* where,
                    HttpEndpointConfig& out, ConfigErrors& errs) {
  if (!expect_object(obj, where, errs)) return;
  reject_unknown(obj, where,
                 {"base_url", "path", "model", "api_key_env", "max_attempts",
                  "backoff_initial_ms", "backoff_max_ms", "timeout_seconds",
                  "send_top_k"},
                 errs);
  get_str(obj, where, "base_url", out.base_url, errs);
  get_str(obj, where, "path", out.path, errs);
  get_str(obj, where, "model", out.model, errs);
  parse_api_key(obj, where, out.api_key, errs);
  get_int(obj, where, "max_attempts", out.max_attempts, errs);
  get_int(obj, where, "backoff_initial_ms", out.backoff_initial_ms, errs);
  get_int(obj, where, "backoff_max_ms", out.backoff_max_ms, errs);
  get_int(obj, where, "timeout_seconds", out.timeout_seconds, errs);
  get_bool(obj, where, "send_top_k", out.send_top_k, errs);
}

void parse_provider(const json& obj, const char* where,
                    ProviderEndpointConfig& out, ConfigErrors& errs) {
  if (!expect_object(obj, where, errs)) return;
  reject_unknown(
      obj, where,
      {"base_url", "path", "api_key_env", "timeout_seconds", "min_interval_ms"},
      errs);
  get_str(obj, where, "base_url", out.base_url, errs);
  get_str(obj, where, "path", out.path, errs);
  parse_api_key(obj, where, out.api_key, errs);
  get_int(obj, where, "timeout_seconds", out.timeout_seconds, errs);
  get_int(obj, where, "min_interval_ms", out.min_interval_ms, errs);
}

void parse_episode(const json& obj, EpisodeConfig& out, ConfigErrors& errs) {
  if (!expect_object(obj, "episode", errs)) return;
  reject_unknown(obj, "episode",
                 {"profile", "max_steps", "max_tool_calls", "max_tokens",
                  "temperature", "top_p", "top_k", "search_results"},
                 errs);
  std::string profile;
  get_str(obj, "episode", "profile", profile, errs);
  if (!profile.empty()) {
    std::optional<Profile> p = profile_from_flag(profile);
    if (!p) {
      errs.fail("episode.profile: unknown profile '" + profile + "'");
      return;
    }
    out.profile = *p;
  }
  get_u64(obj, "episode", "max_steps", out.max_steps, errs);
  get_u64(obj, "episode", "max_tool_calls", out.max_tool_calls, errs);
  get_u64(obj, "episode", "max_tokens", out.max_generated_tokens, errs);
  get_f64(obj, "episode", "temperature", out.generation.temperature, errs);
  get_f64(obj, "episode", "top_p", out.generation.top_p, errs);
  get_int(obj, "episode", "top_k", out.generation.top_k, errs);
  get_int(obj, "episode", "search_results", out.search_results, errs);
}

void parse_sample(const json& obj, EngineConfig& config, ConfigErrors& errs) {
  if (!expect_object(obj, "sample", errs)) return;
  reject_unknown(obj, "sample",
                 {"n_samples", "code_n_samples", "threshold", "pool_size"},
                 errs);
  get_u64(obj, "sample", "n_samples", config.sample.n_samples, errs);
  get_u64(obj, "sample", "code_n_samples", config.code_n_samples, errs);
  get_f64(obj, "sample", "threshold", config.sample.threshold, errs);
  get_u64(obj, "sample", "pool_size", config.sample.pool_size, errs);
}

void parse_filter(const json& obj, FilterConfig& out, ConfigErrors& errs) {
  if (!expect_object(obj, "filter", errs)) return;
  reject_unknown(obj, "filter",
                 {"min_interactions", "reflection_downsample_rate",
                  "drop_no_reflection_for", "error_correction_upsample_factor",
                  "credibility_threshold"},
                 errs);
  get_u64(obj, "filter", "min_interactions", out.min_interactions, errs);
  get_f64(obj, "filter", "reflection_downsample_rate",
          out.reflection_downsample_rate, errs);
  get_u64(obj, "filter", "error_correction_upsample_factor",
          out.error_correction_upsample_factor, errs);
  get_int(obj, "filter", "credibility_threshold", out.credibility_threshold,
          errs);
  if (obj.contains("drop_no_reflection_for")) {
    const json& classes = obj.at("drop_no_reflection_for");
    if (!classes.is_array()) {
      errs.fail("filter.drop_no_reflection_for must be an array");
      return;
    }
    out.drop_no_reflection_for.clear();
    for (const json& entry : classes) {
      if (!entry.is_string()) {
        errs.fail("filter.drop_no_reflection_for entries must be strings");
        return;
      }
      std::optional<TaskClass> c =
          task_class_from_name(entry.get<std::string>());
      if (!c) {
        errs.fail("filter.drop_no_reflection_for: unknown task class '" +
                  entry.get<std::string>() + "'");
        return;
      }
      out.drop_no_reflection_for.insert(*c);
    }
  }
}

void parse_export(const json& obj, ExportConfig& out, ConfigErrors& errs) {
  if (!expect_object(obj, "export", errs)) return;
  reject_unknown(obj, "export", {"mask_double_check", "prompt_templates"},
                 errs);
  get_bool(obj, "export", "mask_double_check", out.mask_double_check, errs);
  if (obj.contains("prompt_templates")) {
    const json& templates = obj.at("prompt_templates");
    if (!expect_object(templates, "export.prompt_templates", errs)) return;
    for (auto it = templates.begin(); it != templates.end(); ++it) {
      std::optional<Profile> p = profile_from_flag(it.key());
      if (!p) {
        errs.fail("export.prompt_templates: unknown profile '" + it.key() +
                  "'");
        return;
      }
      if (!it.value().is_string()) {
        errs.fail("export.prompt_templates." + it.key() +
                  " must be a string");
        return;
      }
      out.prompt_templates[*p] = it.value().get<std::string>();
    }
  }
}

void parse_sandbox(const json& obj, SandboxLimits& out, ConfigErrors& errs) {
  if (!expect_object(obj, "sandbox", errs)) return;
  reject_unknown(obj, "sandbox",
                 {"interpreter", "cpu_seconds", "memory_bytes", "wall_seconds",
                  "file_size_bytes", "output_cap_bytes"},
                 errs);
  get_str(obj, "sandbox", "interpreter", out.interpreter, errs);
  get_int(obj, "sandbox", "cpu_seconds", out.cpu_seconds, errs);
  get_u64(obj, "sandbox", "memory_bytes", out.memory_bytes, errs);
  get_int(obj, "sandbox", "wall_seconds", out.wall_seconds, errs);
  get_u64(obj, "sandbox", "file_size_bytes", out.file_size_bytes, errs);
  get_u64(obj, "sandbox", "output_cap_bytes", out.output_cap_bytes, errs);
}

std::string validate_ranges(const EngineConfig& c) {
  if (c.parallel == 0) return "parallel must be at least 1";
  if (c.rollouts == 0) return "rollouts must be at least 1";
  if (c.sample.n_samples == 0) return "sample.n_samples must be at least 1";
  if (c.code_n_samples == 0) return "sample.code_n_samples must be at least 1";
  if (c.sample.threshold < 0.0 || c.sample.threshold > 1.0)
    return "sample.threshold must lie in [0, 1]";
  if (c.filter.reflection_downsample_rate < 0.0 ||
      c.filter.reflection_downsample_rate > 1.0)
    return "filter.reflection_downsample_rate must lie in [0, 1]";
  if (c.filter.error_correction_upsample_factor == 0)
    return "filter.error_correction_upsample_factor must be at least 1";
  if (c.episode.generation.temperature < 0.0)
    return "episode.temperature must be non-negative";
  if (c.episode.generation.top_p <= 0.0 || c.episode.generation.top_p > 1.0)
    return "episode.top_p must lie in (0, 1]";
  return {};
}

json endpoint_snapshot(const HttpEndpointConfig& e) {
  return {{"base_url", e.base_url},
          {"path", e.path},
          {"model", e.model},
          {"api_key_set", !e.api_key.empty()},
          {"max_attempts", e.max_attempts},
          {"timeout_seconds", e.timeout_seconds},
          {"send_top_k", e.send_top_k}};
}

json provider_snapshot(const ProviderEndpointConfig& e) {
  return {{"base_url", e.base_url},
          {"path", e.path},
          {"api_key_set", !e.api_key.empty()},
          {"timeout_seconds", e.timeout_seconds},
          {"min_interval_ms", e.min_interval_ms}};
}

json episode_snapshot(const EpisodeConfig& e) {
  return {{"profile", std::string(profile_name(e.profile))},
          {"max_steps", e.max_steps},
          {"max_tool_calls", e.max_tool_calls},
          {"max_tokens", e.max_generated_tokens},
          {"temperature", e.generation.temperature},
          {"top_p", e.generation.top_p},
          {"top_k", e.generation.top_k},
          {"search_results", e.search_results}};
}

}  // namespace

ConfigResult engine_config_from_json(const json& doc) {
  ConfigResult out;
  ConfigErrors errs;
  if (!expect_object(doc, "config", errs)) {
    out.error = errs.error;
    return out;
  }
  reject_unknown(doc, "config",
                 {"seed", "parallel", "rollouts", "scripted_dir", "episode",
                  "sample", "filter", "export", "sandbox", "endpoints",
                  "tools"},
                 errs);
  EngineConfig& c = out.config;
  get_u64(doc, "config", "seed", c.seed, errs);
  get_u64(doc, "config", "parallel", c.parallel, errs);
  get_u64(doc, "config", "rollouts", c.rollouts, errs);
  get_str(doc, "config", "scripted_dir", c.scripted_dir, errs);
  if (doc.contains("episode")) parse_episode(doc.at("episode"), c.episode, errs);
  if (doc.contains("sample")) parse_sample(doc.at("sample"), c, errs);
  if (doc.contains("filter")) parse_filter(doc.at("filter"), c.filter, errs);
  if (doc.contains("export"))
    parse_export(doc.at("export"), c.export_config, errs);
  if (doc.contains("sandbox")) parse_sandbox(doc.at("sandbox"), c.sandbox, errs);
  if (doc.contains("endpoints")) {
    const json& endpoints = doc.at("endpoints");
    if (expect_object(endpoints, "endpoints", errs)) {
      reject_unknown(endpoints, "endpoints",
                     {"policy", "judge", "summarizer", "checker"}, errs);
      if (endpoints.contains("policy"))
        parse_endpoint(endpoints.at("policy"), "endpoints.policy", c.policy,
                       errs);
      if (endpoints.contains("judge"))
        parse_endpoint(endpoints.at("judge"), "endpoints.judge", c.judge, errs);
      if (endpoints.contains("summarizer"))
        parse_endpoint(endpoints.at("summarizer"), "endpoints.summarizer",
                       c.summarizer, errs);
      if (endpoints.contains("checker"))
        parse_endpoint(endpoints.at("checker"), "endpoints.checker", c.checker,
                       errs);
    }
  }
  if (doc.contains("tools")) {
    const json& tools = doc.at("tools");
    if (expect_object(tools, "tools", errs)) {
      reject_unknown(tools, "tools", {"search", "reader", "page_char_cap"},
                     errs);
      if (tools.contains("search"))
        parse_provider(tools.at("search"), "tools.search", c.search, errs);
      if (tools.contains("reader"))
        parse_provider(tools.at("reader"), "tools.reader", c.reader, errs);
      get_u64(tools, "tools", "page_char_cap", c.page_char_cap, errs);
    }
  }
  if (errs.ok()) errs.fail(validate_ranges(c));
  out.error = errs.error;
  return out;
}

ConfigResult load_engine_config(const std::string& config_path) {
  if (config_path.empty()) return {};
  ConfigResult out;
  std::string io_error;
  std::string text = read_text_file(config_path, &io_error);
  if (!io_error.empty()) {
    out.error = io_error;
    return out;
  }
  json doc = json::parse(text, nullptr, false);
  if (doc.is_discarded()) {
    out.error = config_path + ": invalid JSON";
    return out;
  }
  out = engine_config_from_json(doc);
  if (!out.error.empty()) out.error = config_path + ": " + out.error;
  return out;
}

std::string apply_env_overrides(EngineConfig& config) {
  auto env = [](const char* name) -> std::optional<std::string> {
    const char* v = std::getenv(name);
    if (!v) return std::nullopt;
    return std::string(v);
  };
  auto u64_var = [&](const char* name, std::uint64_t& out) -> std::string {
    std::optional<std::string> v = env(name);
    if (!v) return {};
    if (!parse_u64(*v, out))
      return std::string(name) + ": not a non-negative integer";
    return {};
  };
  auto f64_var = [&](const char* name, double& out) -> std::string {
    std::optional<std::string> v = env(name);
    if (!v) return {};
    if (!parse_f64(*v, out)) return std::string(name) + ": not a number";
    return {};
  };

  std::string err;
  if (err = u64_var("COA_SEED", config.seed); !err.empty()) return err;
  if (err = u64_var("COA_PARALLEL", config.parallel); !err.empty()) return err;
  if (err = u64_var("COA_ROLLOUTS", config.rollouts); !err.empty()) return err;
  if (std::optional<std::string> v = env("COA_SCRIPTED_DIR"))
    config.scripted_dir = *v;
  if (std::optional<std::string> v = env("COA_PROFILE")) {
    std::optional<Profile> p = profile_from_flag(*v);
    if (!p) return "COA_PROFILE: unknown profile '" + *v + "'";
    config.episode.profile = *p;
  }
  if (err = u64_var("COA_MAX_STEPS", config.episode.max_steps); !err.empty())
    return err;
  if (err = u64_var("COA_MAX_TOOL_CALLS", config.episode.max_tool_calls);
      !err.empty())
    return err;
  if (err = u64_var("COA_MAX_TOKENS", config.episode.max_generated_tokens);
      !err.empty())
    return err;
  if (err = f64_var("COA_TEMPERATURE", config.episode.generation.temperature);
      !err.empty())
    return err;
  if (err = f64_var("COA_TOP_P", config.episode.generation.top_p); !err.empty())
    return err;
  if (std::optional<std::string> v = env("COA_TOP_K")) {
    std::uint64_t k = 0;
    if (!parse_u64(*v, k)) return "COA_TOP_K: not a non-negative integer";
    config.episode.generation.top_k = static_cast<int>(k);
  }
  return validate_ranges(config);
}

json engine_config_to_json(const EngineConfig& c) {
  json drop_classes = json::array();
  for (TaskClass cls : c.filter.drop_no_reflection_for)
    drop_classes.push_back(std::string(task_class_name(cls)));
  json templates = json::object();
  for (const auto& [profile, text] : c.export_config.prompt_templates)
    templates[std::string(profile_name(profile))] = text;
  return {
      {"seed", c.seed},
      {"parallel", c.parallel},
      {"rollouts", c.rollouts},
      {"scripted_dir", c.scripted_dir},
      {"episode", episode_snapshot(c.episode)},
      {"sample",
       {{"n_samples", c.sample.n_samples},
        {"code_n_samples", c.code_n_samples},
        {"threshold", c.sample.threshold},
        {"pool_size", c.sample.pool_size}}},
      {"filter",
       {{"min_interactions", c.filter.min_interactions},
        {"reflection_downsample_rate", c.filter.reflection_downsample_rate},
        {"drop_no_reflection_for", drop_classes},
        {"error_correction_upsample_factor",
         c.filter.error_correction_upsample_factor},
        {"credibility_threshold", c.filter.credibility_threshold}}},
      {"export",
       {{"mask_double_check", c.export_config.mask_double_check},
        {"prompt_templates", templates}}},
      {"sandbox",
       {{"interpreter", c.sandbox.interpreter},
        {"cpu_seconds", c.sandbox.cpu_seconds},
        {"memory_bytes", c.sandbox.memory_bytes},
        {"wall_seconds", c.sandbox.wall_seconds},
        {"file_size_bytes", c.sandbox.file_size_bytes},
        {"output_cap_bytes", c.sandbox.output_cap_bytes}}},
      {"endpoints",
       {{"policy", endpoint_snapshot(c.policy)},
        {"judge", endpoint_snapshot(c.judge)},
        {"summarizer", endpoint_snapshot(c.summarizer)},
        {"checker", endpoint_snapshot(c.checker)}}},
      {"tools",
       {{"search", provider_snapshot(c.search)},
        {"reader", provider_snapshot(c.reader)},
        {"page_char_cap", c.page_char_cap}}},
  };
}

namespace {

std::string load_json_file(const std::string& path, json& out) {
  std::string io_error;
  std::string text = read_text_file(path, &io_error);
  if (!io_error.empty()) return io_error;
  out = json::parse(text, nullptr, false);
  if (out.is_discarded()) return path + ": invalid JSON";
  return {};
}

}  // namespace

Runtime build_runtime(const EngineConfig& config) {
  Runtime rt;
  rt.sandbox = std::make_unique<PythonSandbox>(config.sandbox);
  if (!config.scripted_dir.empty()) {
    namespace fs = std::filesystem;
    std::string model_path =
        (fs::path(config.scripted_dir) / "model.json").string();
    json model_doc;
    if (std::string err = load_json_file(model_path, model_doc); !err.empty()) {
      rt.error = err;
      return rt;
    }
    ScriptedModelSpec model_spec;
    try {
      model_spec = ScriptedModelSpec::from_json(model_doc);
    } catch (const std::exception& e) {
      rt.error = model_path + ": " + e.what();
      return rt;
    }
    rt.owned.push_back(std::make_unique<ScriptedModel>(std::move(model_spec)));
    rt.policy = rt.owned.back().get();
    rt.judge = rt.policy;
    rt.summarizer = rt.policy;
    rt.checker = rt.policy;

    ScriptedToolsSpec tools_spec;
    std::string tools_path =
        (fs::path(config.scripted_dir) / "tools.json").string();
    if (fs::exists(tools_path)) {
      json tools_doc;
      if (std::string err = load_json_file(tools_path, tools_doc);
          !err.empty()) {
        rt.error = err;
        return rt;
      }
      try {
        tools_spec = ScriptedToolsSpec::from_json(tools_doc);
      } catch (const std::exception& e) {
        rt.error = tools_path + ": " + e.what();
        return rt;
      }
    }
    rt.tools = std::make_unique<ScriptedTools>(std::move(tools_spec));
    return rt;
  }

  auto add_http = [&](const HttpEndpointConfig& endpoint) -> ModelClient* {
    if (endpoint.base_url.empty()) return nullptr;
    rt.owned.push_back(std::make_unique<HttpModel>(endpoint));
    return rt.owned.back().get();
  };
  rt.policy = add_http(config.policy);
  rt.judge = add_http(config.judge);
  rt.summarizer = add_http(config.summarizer);
  rt.checker = add_http(config.checker);

  LiveToolsConfig tools_config;
  tools_config.search = config.search;
  tools_config.reader = config.reader;
  tools_config.sandbox = config.sandbox;
  tools_config.page_char_cap = config.page_char_cap;
  rt.tools = std::make_unique<LiveTools>(tools_config, rt.summarizer,
                                         rt.checker);
  return rt;
}

json manifest_to_json(const RunManifest& m) {
  return {{"command", m.command}, {"config", m.config},
          {"inputs", m.inputs},   {"outputs", m.outputs},
          {"seed", m.seed},       {"version", m.version},
          {"wall_seconds", m.wall_seconds}};
}

void parallel_indexed(std::uint64_t n, std::uint64_t workers,
                      const std::function<void(std::uint64_t)>& fn) {
  if (n == 0) return;
  std::uint64_t count = std::min(workers == 0 ? 1 : workers, n);
  if (count <= 1) {
    for (std::uint64_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::uint64_t> next{0};
  std::vector<std::thread> pool;
  pool.reserve(count);
  for (std::uint64_t t = 0; t < count; ++t) {
    pool.emplace_back([&] {
      for (;;) {
        std::uint64_t i = next.fetch_add(1, std::memory_order_relaxed);
        if (i >= n) return;
        fn(i);
      }
    });
  }
  for (std::thread& worker : pool) worker.join();
}

json op_report_to_json(const OpReport& report) {
  json j = {{"processed", report.processed},
            {"written", report.written},
            {"failures", report.failures},
            {"details", report.details}};
  if (!report.error.empty()) j["error"] = report.error;
  if (!report.manifest_path.empty()) j["manifest_path"] = report.manifest_path;
  return j;
}

namespace {

class Timer {
 public:
  Timer() : start_(std::chrono::steady_clock::now()) {}
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                         start_)
        .count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

void fail(OpReport& report, OpErrorKind kind, std::string message) {
  report.error = std::move(message);
  report.error_kind = kind;
}

// Joins JSON records into JSONL bytes; key order is nlohmann's sorted order,
// so identical records give identical bytes.
std::string to_jsonl(const std::vector<json>& records) {
  std::string out;
  for (const json& record : records) {
    out += record.dump();
    out += '\n';
  }
  return out;
}

bool finish_output(OpReport& report, const std::string& command,
                   const json& config_snapshot,
                   const std::vector<std::string>& inputs,
                   const std::string& out_path, const std::string& content,
                   std::uint64_t seed, const Timer& timer,
                   std::vector<std::string> extra_outputs = {}) {
  std::string io_error;
  if (!write_text_file(out_path, content, &io_error)) {
    fail(report, OpErrorKind::Io, io_error);
    return false;
  }
  RunManifest manifest;
  manifest.command = command;
  manifest.config = config_snapshot;
  manifest.inputs = inputs;
  manifest.outputs.push_back(out_path);
  for (std::string& extra : extra_outputs)
    manifest.outputs.push_back(std::move(extra));
  manifest.seed = seed;
  manifest.wall_seconds = timer.seconds();
  std::string manifest_path = out_path + ".manifest.json";
  if (!write_text_file(manifest_path, manifest_to_json(manifest).dump(2) + "\n",
                       &io_error)) {
    fail(report, OpErrorKind::Io, io_error);
    return false;
  }
  report.manifest_path = manifest_path;
  return true;
}

struct TaskRow {
  std::string task_id;
  std::string task;
};

std::string parse_task_rows(const std::vector<json>& records,
                            std::vector<TaskRow>& out) {
  for (size_t i = 0; i < records.size(); ++i) {
    const json& r = records[i];
    std::string where = "task row " + std::to_string(i + 1);
    if (!r.is_object() || !r.contains("task_id") ||
        !r.at("task_id").is_string())
      return where + ": task_id (string) is required";
    const char* task_key =
        r.contains("task") ? "task" : (r.contains("question") ? "question" : "");
    if (*task_key == '\0' || !r.at(task_key).is_string())
      return where + ": task (string) is required";
    out.push_back({r.at("task_id").get<std::string>(),
                   r.at(task_key).get<std::string>()});
  }
  return {};
}

}  // namespace

OpReport run_rollout(const EngineConfig& config, Runtime& rt,
                     const std::string& tasks_path,
                     const std::string& out_path) {
  OpReport report;
  Timer timer;
  if (!rt.policy || !rt.tools) {
    fail(report, OpErrorKind::Config,
         "no policy model configured; set scripted_dir or endpoints.policy");
    return report;
  }
  JsonlResult tasks_file = read_jsonl_file(tasks_path);
  if (!tasks_file.error.empty()) {
    fail(report, OpErrorKind::Io, tasks_file.error);
    return report;
  }
  std::vector<TaskRow> tasks;
  if (std::string err = parse_task_rows(tasks_file.records, tasks);
      !err.empty()) {
    fail(report, OpErrorKind::Config, tasks_path + ": " + err);
    return report;
  }

  json episode_config = episode_snapshot(config.episode);
  std::uint64_t total = tasks.size() * config.rollouts;
  std::vector<json> records(total);
  std::atomic<std::uint64_t> failures{0};
  parallel_indexed(total, config.parallel, [&](std::uint64_t i) {
    const TaskRow& row = tasks[i / config.rollouts];
    std::uint64_t rollout = i % config.rollouts;
    EpisodeResult episode = run_episode(row.task_id, row.task, config.episode,
                                        *rt.policy, *rt.tools);
    json record = trajectory_to_json(episode.trajectory);
    record["rollout"] = rollout;
    record["generations"] = episode.generations;
    record["wall_seconds"] = episode.wall_seconds;
    record["tool_seconds"] = episode.tool_seconds;
    record["config"] = episode_config;
    if (!episode.error.empty()) record["error"] = episode.error;
    Status status = episode.trajectory.status;
    if (!episode.error.empty() || status == Status::ParseError ||
        status == Status::SequenceError)
      failures.fetch_add(1, std::memory_order_relaxed);
    records[i] = std::move(record);
  });

  report.processed = total;
  report.written = total;
  report.failures = failures.load();
  finish_output(report, "rollout", engine_config_to_json(config), {tasks_path},
                out_path, to_jsonl(records), config.seed, timer);
  return report;
}

OpReport run_validate(const std::string& path,
                      std::optional<Profile> profile_override) {
  OpReport report;
  std::string io_error;
  std::string text = read_text_file(path, &io_error);
  if (!io_error.empty()) {
    fail(report, OpErrorKind::Io, io_error);
    return report;
  }

  json rows = json::array();
  auto add_row = [&](std::uint64_t line, const std::string& task_id,
                     const Trajectory& t) {
    ValidationReport vr = validate_sequence(t);
    bool valid = t.status != Status::ParseError && vr.ok;
    json row = {{"line", line},
                {"task_id", task_id},
                {"valid", valid},
                {"status", std::string(status_name(t.status))}};
    if (t.status == Status::ParseError) {
      row["rule"] = "parse_error";
    } else if (!vr.ok) {
      row["rule"] = vr.rule;
      row["segment"] = vr.violation_index;
    }
    if (!valid) ++report.failures;
    rows.push_back(std::move(row));
    ++report.processed;
  };

  size_t first = text.find_first_not_of(" \t\r\n");
  bool empty = first == std::string::npos;
  bool jsonl = !empty && text[first] == '{';
  if (jsonl) {
    std::istringstream in(text);
    std::string line;
    std::uint64_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (trim_copy(line).empty()) continue;
      json record = json::parse(line, nullptr, false);
      if (record.is_discarded()) {
        rows.push_back({{"line", line_no},
                        {"task_id", ""},
                        {"valid", false},
                        {"rule", "invalid_json"}});
        ++report.processed;
        ++report.failures;
        continue;
      }
      Trajectory t;
      try {
        t = trajectory_from_json(record);
      } catch (const std::exception& e) {
        rows.push_back({{"line", line_no},
                        {"task_id", ""},
                        {"valid", false},
                        {"rule", std::string("bad_record: ") + e.what()}});
        ++report.processed;
        ++report.failures;
        continue;
      }
      if (profile_override) t.profile = *profile_override;
      add_row(line_no, t.task_id, t);
    }
  } else if (!empty) {
    if (!profile_override) {
      fail(report, OpErrorKind::Config,
           "raw tagged text needs an explicit profile");
      return report;
    }
    Trajectory t = parse_text(text, *profile_override);
    t.task_id = std::filesystem::path(path).stem().string();
    add_row(1, t.task_id, t);
  }

  report.details["records"] = std::move(rows);
  return report;
}

namespace {

struct GoldRow {
  std::string question;
  std::string gold;
};

}  // namespace

OpReport run_score(const EngineConfig& config, Runtime& rt, Profile profile,
                   const std::string& traj_path, const std::string& gold_path,
                   const std::string& tests_dir, const std::string& out_path) {
  OpReport report;
  Timer timer;
  JsonlResult traj_file = read_jsonl_file(traj_path);
  if (!traj_file.error.empty()) {
    fail(report, OpErrorKind::Io, traj_file.error);
    return report;
  }

  std::map<std::string, GoldRow> gold;
  std::vector<std::string> inputs = {traj_path};
  if (profile == Profile::WebAgent) {
    if (!rt.judge) {
      fail(report, OpErrorKind::Config,
           "web scoring needs a judge model; set scripted_dir or "
           "endpoints.judge");
      return report;
    }
    if (gold_path.empty()) {
      fail(report, OpErrorKind::Config, "web scoring needs --gold");
      return report;
    }
    JsonlResult gold_file = read_jsonl_file(gold_path);
    if (!gold_file.error.empty()) {
      fail(report, OpErrorKind::Io, gold_file.error);
      return report;
    }
    for (size_t i = 0; i < gold_file.records.size(); ++i) {
      const json& r = gold_file.records[i];
      if (!r.is_object() || !r.contains("task_id") ||
          !r.at("task_id").is_string() || !r.contains("gold") ||
          !r.at("gold").is_string()) {
        fail(report, OpErrorKind::Config,
             gold_path + ": row " + std::to_string(i + 1) +
                 " needs task_id and gold strings");
        return report;
      }
      GoldRow row;
      row.gold = r.at("gold").get<std::string>();
      if (r.contains("question") && r.at("question").is_string())
        row.question = r.at("question").get<std::string>();
      gold[r.at("task_id").get<std::string>()] = std::move(row);
    }
    inputs.push_back(gold_path);
  } else if (tests_dir.empty()) {
    fail(report, OpErrorKind::Config, "code scoring needs --tests");
    return report;
  } else {
    inputs.push_back(tests_dir);
  }

  std::vector<Trajectory> trajectories;
  trajectories.reserve(traj_file.records.size());
  for (size_t i = 0; i < traj_file.records.size(); ++i) {
    try {
      trajectories.push_back(trajectory_from_json(traj_file.records[i]));
    } catch (const std::exception& e) {
      fail(report, OpErrorKind::Config,
           traj_path + ": row " + std::to_string(i + 1) + ": " + e.what());
      return report;
    }
  }

  std::vector<json> records(trajectories.size());
  std::atomic<std::uint64_t> failures{0};
  auto score_one = [&](std::uint64_t i) {
    const Trajectory& t = trajectories[i];
    RewardRecord rec;
    if (profile == Profile::WebAgent) {
      auto it = gold.find(t.task_id);
      if (it == gold.end()) {
        rec.task_id = t.task_id;
        rec.error = "no gold row for task '" + t.task_id + "'";
      } else {
        rec = reward_web(t, it->second.question, it->second.gold, *rt.judge);
      }
    } else {
      std::string tests_path =
          (std::filesystem::path(tests_dir) / (t.task_id + ".json")).string();
      json tests_doc;
      if (std::string err = load_json_file(tests_path, tests_doc);
          !err.empty()) {
        rec.task_id = t.task_id;
        rec.error = "no tests for task '" + t.task_id + "': " + err;
      } else {
        rec = reward_code(t, test_cases_from_json(tests_doc), *rt.sandbox);
      }
    }
    if (!rec.error.empty()) failures.fetch_add(1, std::memory_order_relaxed);
    records[i] = reward_record_to_json(rec);
  };

  // A scripted judge replays one shared script; concurrent calls would make
  // reply order depend on scheduling.
  bool sequential =
      profile == Profile::WebAgent && rt.judge && rt.judge->is_scripted();
  parallel_indexed(trajectories.size(), sequential ? 1 : config.parallel,
                   score_one);

  report.processed = trajectories.size();
  report.written = records.size();
  report.failures = failures.load();
  finish_output(report, "score", engine_config_to_json(config), inputs,
                out_path, to_jsonl(records), config.seed, timer);
  return report;
}

OpReport run_distill_convert(const std::string& traces_path,
                             const std::string& mapping_path,
                             const std::string& out_path) {
  OpReport report;
  Timer timer;
  JsonlResult traces = read_jsonl_file(traces_path);
  if (!traces.error.empty()) {
    fail(report, OpErrorKind::Io, traces.error);
    return report;
  }
  json mapping_doc;
  if (std::string err = load_json_file(mapping_path, mapping_doc);
      !err.empty()) {
    fail(report, OpErrorKind::Io, err);
    return report;
  }
  AgentMapping mapping;
  try {
    mapping = agent_mapping_from_json(mapping_doc);
  } catch (const std::exception& e) {
    fail(report, OpErrorKind::Config, mapping_path + ": " + e.what());
    return report;
  }

  std::vector<json> out_records;
  json errors = json::array();
  for (size_t i = 0; i < traces.records.size(); ++i) {
    ++report.processed;
    MasTrace trace;
    try {
      trace = mas_trace_from_json(traces.records[i]);
    } catch (const std::exception& e) {
      errors.push_back({{"row", i + 1}, {"error", e.what()}});
      ++report.failures;
      continue;
    }
    ItemResult item = corpus_item_from_trace(trace, mapping);
    if (!item.error.empty()) {
      errors.push_back({{"row", i + 1},
                        {"task_id", trace.task_id},
                        {"error", item.error}});
      ++report.failures;
      continue;
    }
    out_records.push_back(corpus_item_to_json(item.item));
  }

  report.written = out_records.size();
  report.details["errors"] = std::move(errors);
  finish_output(report, "distill convert", json::object(),
                {traces_path, mapping_path}, out_path, to_jsonl(out_records),
                0, timer);
  return report;
}

namespace {

std::string load_corpus(const std::string& path,
                        std::vector<CorpusItem>& out) {
  JsonlResult file = read_jsonl_file(path);
  if (!file.error.empty()) return file.error;
  for (size_t i = 0; i < file.records.size(); ++i) {
    try {
      out.push_back(corpus_item_from_json(file.records[i]));
    } catch (const std::exception& e) {
      return path + ": row " + std::to_string(i + 1) + ": " + e.what();
    }
  }
  return {};
}

}  // namespace

OpReport run_distill_filter(const EngineConfig& config, Runtime& rt,
                            const std::string& corpus_path,
                            const std::string& out_path) {
  OpReport report;
  Timer timer;
  std::vector<CorpusItem> corpus;
  if (std::string err = load_corpus(corpus_path, corpus); !err.empty()) {
    fail(report, OpErrorKind::Io, err);
    return report;
  }
  report.processed = corpus.size();
  std::stable_sort(corpus.begin(), corpus.end(),
                   [](const CorpusItem& a, const CorpusItem& b) {
                     return a.record_id < b.record_id;
                   });

  QualityVerifiers verifiers;
  verifiers.judge = rt.judge;
  verifiers.sandbox = rt.sandbox.get();
  PipelineResult result = run_filter_pipeline(std::move(corpus), config.filter,
                                              verifiers, config.seed);
  report.details["report"] = filter_report_to_json(result.report);
  report.details["table"] = render_filter_report(result.report);
  if (!result.error.empty()) {
    fail(report, OpErrorKind::Runtime, result.error);
    return report;
  }

  std::vector<json> out_records;
  out_records.reserve(result.corpus.size());
  for (const CorpusItem& item : result.corpus)
    out_records.push_back(corpus_item_to_json(item));
  report.written = out_records.size();

  std::string report_path = out_path + ".report.json";
  std::string io_error;
  if (!write_text_file(report_path,
                       filter_report_to_json(result.report).dump(2) + "\n",
                       &io_error)) {
    fail(report, OpErrorKind::Io, io_error);
    return report;
  }
  finish_output(report, "distill filter", engine_config_to_json(config),
                {corpus_path}, out_path, to_jsonl(out_records), config.seed,
                timer, {report_path});
  return report;
}

OpReport run_distill_export(const EngineConfig& config,
                            const std::string& corpus_path,
                            const std::string& out_path) {
  OpReport report;
  Timer timer;
  std::vector<CorpusItem> corpus;
  if (std::string err = load_corpus(corpus_path, corpus); !err.empty()) {
    fail(report, OpErrorKind::Io, err);
    return report;
  }
  report.processed = corpus.size();

  std::vector<SftRecord> sft = export_sft(corpus, config.export_config);
  std::vector<json> out_records;
  out_records.reserve(sft.size());
  for (const SftRecord& record : sft)
    out_records.push_back(sft_record_to_json(record));
  report.written = out_records.size();
  finish_output(report, "distill export", engine_config_to_json(config),
                {corpus_path}, out_path, to_jsonl(out_records), config.seed,
                timer);
  return report;
}

OpReport run_distill_stats(const std::string& corpus_path) {
  OpReport report;
  std::vector<CorpusItem> corpus;
  if (std::string err = load_corpus(corpus_path, corpus); !err.empty()) {
    fail(report, OpErrorKind::Io, err);
    return report;
  }
  report.processed = corpus.size();
  CorpusStats stats = corpus_stats(corpus);
  json stats_json = corpus_stats_to_json(stats);
  stats_json["merged_avg_hops"] = merged_avg_hops(stats.per_source);
  report.details["stats"] = std::move(stats_json);
  return report;
}

OpReport run_sample_passrate(const EngineConfig& config, Runtime& rt,
                             const std::string& queries_path,
                             const std::string& out_path) {
  OpReport report;
  Timer timer;
  if (!rt.policy) {
    fail(report, OpErrorKind::Config,
         "no policy model configured; set scripted_dir or endpoints.policy");
    return report;
  }
  JsonlResult file = read_jsonl_file(queries_path);
  if (!file.error.empty()) {
    fail(report, OpErrorKind::Io, file.error);
    return report;
  }
  std::vector<RlQuery> queries;
  queries.reserve(file.records.size());
  for (size_t i = 0; i < file.records.size(); ++i) {
    try {
      queries.push_back(rl_query_from_json(file.records[i]));
    } catch (const std::exception& e) {
      fail(report, OpErrorKind::Config,
           queries_path + ": row " + std::to_string(i + 1) + ": " + e.what());
      return report;
    }
  }

  SampleConfig sample = config.sample;
  sample.seed = config.seed;
  std::vector<json> records(queries.size());
  std::atomic<std::uint64_t> failures{0};
  // A scripted model advances one cursor per script list; parallel queries
  // sharing the default list would interleave nondeterministically.
  std::uint64_t workers = rt.policy->is_scripted() ? 1 : config.parallel;
  parallel_indexed(queries.size(), workers, [&](std::uint64_t i) {
    PassRateResult result = compute_pass_rate(queries[i], *rt.policy, sample);
    if (!result.error.empty()) {
      records[i] = {{"query_id", queries[i].query_id},
                    {"error", result.error}};
      failures.fetch_add(1, std::memory_order_relaxed);
      return;
    }
    records[i] = pass_rate_to_json(result.record);
  });

  report.processed = queries.size();
  report.written = records.size();
  report.failures = failures.load();
  finish_output(report, "sample passrate", engine_config_to_json(config),
                {queries_path}, out_path, to_jsonl(records), config.seed,
                timer);
  return report;
}

OpReport run_sample_select(const EngineConfig& config,
                           const std::string& records_path,
                           const std::string& exclude_path,
                           const std::string& out_path) {
  OpReport report;
  Timer timer;
  JsonlResult file = read_jsonl_file(records_path);
  if (!file.error.empty()) {
    fail(report, OpErrorKind::Io, file.error);
    return report;
  }
  std::vector<PassRateRecord> records;
  records.reserve(file.records.size());
  for (size_t i = 0; i < file.records.size(); ++i) {
    try {
      records.push_back(pass_rate_from_json(file.records[i]));
    } catch (const std::exception& e) {
      fail(report, OpErrorKind::Config,
           records_path + ": row " + std::to_string(i + 1) + ": " + e.what());
      return report;
    }
  }

  std::set<std::string> exclude;
  std::vector<std::string> inputs = {records_path};
  if (!exclude_path.empty()) {
    std::string io_error;
    std::string text = read_text_file(exclude_path, &io_error);
    if (!io_error.empty()) {
      fail(report, OpErrorKind::Io, io_error);
      return report;
    }
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
      std::string id = trim_copy(line);
      if (!id.empty()) exclude.insert(id);
    }
    inputs.push_back(exclude_path);
  }

  SampleConfig sample = config.sample;
  sample.seed = config.seed;
  SelectionResult selection = select_web_queries(records, sample, exclude);
  std::string content;
  for (const std::string& id : selection.selected) {
    content += id;
    content += '\n';
  }
  report.processed = records.size();
  report.written = selection.selected.size();
  report.details["selected"] = selection.selected;
  if (!selection.warning.empty()) report.details["warning"] = selection.warning;
  finish_output(report, "sample select", engine_config_to_json(config), inputs,
                out_path, content, config.seed, timer);
  return report;
}

OpReport run_sample_filter_code(const EngineConfig& config, Runtime& rt,
                                const std::string& queries_path,
                                const std::string& out_path,
                                const std::string& retained_out) {
  OpReport report;
  Timer timer;
  if (!rt.policy) {
    fail(report, OpErrorKind::Config,
         "no policy model configured; set scripted_dir or endpoints.policy");
    return report;
  }
  JsonlResult file = read_jsonl_file(queries_path);
  if (!file.error.empty()) {
    fail(report, OpErrorKind::Io, file.error);
    return report;
  }
  std::vector<RlQuery> queries;
  queries.reserve(file.records.size());
  for (size_t i = 0; i < file.records.size(); ++i) {
    try {
      queries.push_back(rl_query_from_json(file.records[i]));
    } catch (const std::exception& e) {
      fail(report, OpErrorKind::Config,
           queries_path + ": row " + std::to_string(i + 1) + ": " + e.what());
      return report;
    }
  }

  SampleConfig sample = SampleConfig::code();
  sample.n_samples = config.code_n_samples;
  sample.threshold = config.sample.threshold;
  sample.seed = config.seed;
  CodeFilterResult result =
      filter_code_queries(queries, *rt.policy, *rt.sandbox, sample);
  if (!result.error.empty()) {
    fail(report, OpErrorKind::Runtime, result.error);
    return report;
  }

  std::vector<json> records;
  records.reserve(result.records.size());
  for (const CodeProbeRecord& record : result.records)
    records.push_back(code_probe_to_json(record));
  report.processed = queries.size();
  report.written = records.size();
  report.details["retained"] = result.retained;

  std::vector<std::string> extra_outputs;
  if (!retained_out.empty()) {
    std::string content;
    for (const std::string& id : result.retained) {
      content += id;
      content += '\n';
    }
    std::string io_error;
    if (!write_text_file(retained_out, content, &io_error)) {
      fail(report, OpErrorKind::Io, io_error);
      return report;
    }
    extra_outputs.push_back(retained_out);
  }
  finish_output(report, "sample filter-code", engine_config_to_json(config),
                {queries_path}, out_path, to_jsonl(records), config.seed,
                timer, std::move(extra_outputs));
  return report;
}

}  // namespace coa
