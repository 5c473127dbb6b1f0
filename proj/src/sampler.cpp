#include "sampler.h"

#include <algorithm>
#include <cctype>

#include "rng.h"
#include "tools.h"

namespace coa {

RlQuery rl_query_from_json(const nlohmann::json& j) {
  RlQuery q;
  q.query_id = j.value("query_id", std::string());
  q.question = j.value("question", std::string());
  q.gold = j.value("gold", std::string());
  if (j.contains("tests")) q.tests = test_cases_from_json(j.at("tests"));
  return q;
}

nlohmann::json pass_rate_to_json(const PassRateRecord& record) {
  return {{"query_id", record.query_id},
          {"n_samples", record.n_samples},
          {"n_matches", record.n_matches},
          {"r_q", record.r_q}};
}

PassRateRecord pass_rate_from_json(const nlohmann::json& j) {
  PassRateRecord record;
  record.query_id = j.value("query_id", std::string());
  record.n_samples = j.value("n_samples", std::uint64_t{0});
  record.n_matches = j.value("n_matches", std::uint64_t{0});
  if (record.n_samples > 0)
    record.r_q = static_cast<double>(record.n_matches) /
                 static_cast<double>(record.n_samples);
  return record;
}

SampleConfig SampleConfig::web() {
  SampleConfig config;
  config.n_samples = 32;
  return config;
}

SampleConfig SampleConfig::code() {
  SampleConfig config;
  config.n_samples = 8;
  config.episode.profile = Profile::CodeMath;
  config.episode.max_tool_calls = 8;
  return config;
}

std::string normalize_em(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  bool pending_space = false;
  for (char c : s) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) {
      out.push_back(' ');
      pending_space = false;
    }
    out.push_back(
        static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  auto trimmable = [](char c) {
    unsigned char u = static_cast<unsigned char>(c);
    return std::ispunct(u) || std::isspace(u);
  };
  size_t begin = 0;
  size_t end = out.size();
  while (begin < end && trimmable(out[begin])) ++begin;
  while (end > begin && trimmable(out[end - 1])) --end;
  return out.substr(begin, end - begin);
}

bool exact_match(std::string_view prediction, std::string_view gold) {
  return normalize_em(prediction) == normalize_em(gold);
}

PassRateResult compute_pass_rate(const RlQuery& query, ModelClient& model,
                                 const SampleConfig& config) {
  PassRateResult out;
  out.record.query_id = query.query_id;
  out.record.n_samples = config.n_samples;
  if (query.gold.empty()) {
    out.error = "no gold answer for query '" + query.query_id + "'";
    return out;
  }
  PromptContext ctx;
  ctx.task_id = query.query_id;
  ctx.user = query.question;
  for (std::uint64_t i = 0; i < config.n_samples; ++i) {
    GenerationResult res = model.complete(ctx, config.probe);
    if (res.reason == FinishReason::Error) {
      out.error = "model unavailable: " + res.error;
      return out;
    }
    if (exact_match(res.text, query.gold)) ++out.record.n_matches;
  }
  out.record.r_q = static_cast<double>(out.record.n_matches) /
                   static_cast<double>(out.record.n_samples);
  return out;
}

SelectionResult select_web_queries(const std::vector<PassRateRecord>& records,
                                   const SampleConfig& config,
                                   const std::set<std::string>& sft_exclude) {
  SelectionResult out;
  std::vector<std::string> candidates;
  for (const PassRateRecord& record : records) {
    if (record.r_q > config.threshold) continue;
    if (sft_exclude.count(record.query_id)) continue;
    candidates.push_back(record.query_id);
  }
  std::sort(candidates.begin(), candidates.end());
  if (config.pool_size == 0 || candidates.size() <= config.pool_size) {
    if (config.pool_size > candidates.size())
      out.warning = "pool too small: " + std::to_string(candidates.size()) +
                    " candidates for pool size " +
                    std::to_string(config.pool_size);
    out.selected = std::move(candidates);
    return out;
  }
  seeded_shuffle(candidates, config.seed);
  candidates.resize(config.pool_size);
  std::sort(candidates.begin(), candidates.end());
  out.selected = std::move(candidates);
  return out;
}

nlohmann::json code_probe_to_json(const CodeProbeRecord& record) {
  return {{"query_id", record.query_id},
          {"solved", record.solved},
          {"samples", record.samples},
          {"retained", record.retained}};
}

CodeFilterResult filter_code_queries(const std::vector<RlQuery>& queries,
                                     ModelClient& model,
                                     const PythonSandbox& sandbox,
                                     const SampleConfig& config) {
  CodeFilterResult out;
  LiveToolsConfig tool_config;
  tool_config.sandbox = sandbox.limits();
  LiveTools tools(tool_config, nullptr, nullptr);
  for (const RlQuery& query : queries) {
    CodeProbeRecord record;
    record.query_id = query.query_id;
    record.samples = config.n_samples;
    for (std::uint64_t i = 0; i < config.n_samples; ++i) {
      std::string sample_id = query.query_id + "#s" + std::to_string(i);
      EpisodeResult episode =
          run_episode(sample_id, query.question, config.episode, model, tools);
      if (!episode.error.empty()) {
        out.error = "episode failed for " + sample_id + ": " + episode.error;
        return out;
      }
      RewardRecord reward = reward_code(episode.trajectory, query.tests, sandbox);
      if (!reward.error.empty()) {
        out.error = reward.error;
        return out;
      }
      if (reward.score_answer == 1) ++record.solved;
    }
    record.retained = record.solved < config.n_samples;
    if (record.retained) out.retained.push_back(query.query_id);
    out.records.push_back(std::move(record));
  }
  return out;
}

}  // namespace coa
