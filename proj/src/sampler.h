#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "model_client.h"
#include "orchestrator.h"
#include "rewards.h"
#include "sandbox.h"

namespace coa {

// One RL candidate query; gold drives web probing, tests drive code probing.
struct RlQuery {
  std::string query_id;
  std::string question;
  std::string gold;
  std::vector<TestCase> tests;
};

RlQuery rl_query_from_json(const nlohmann::json& j);

struct PassRateRecord {
  std::string query_id;
  std::uint64_t n_samples = 0;
  std::uint64_t n_matches = 0;
  double r_q = 0.0;
};

nlohmann::json pass_rate_to_json(const PassRateRecord& record);
// r_q is recomputed from the counts; a drifted stored value is ignored.
PassRateRecord pass_rate_from_json(const nlohmann::json& j);

struct SampleConfig {
  std::uint64_t n_samples = 32;
  double threshold = 0.3;
  std::uint64_t seed = 0;
  std::uint64_t pool_size = 0;  // 0 keeps every candidate
  GenerationParams probe;       // solvability probe sampling params
  EpisodeConfig episode;        // code-probe episode budgets

  static SampleConfig web();
  static SampleConfig code();
};

// Lowercase, collapse whitespace runs, strip punctuation and spaces at the
// ends; equality on the normalized forms.
std::string normalize_em(std::string_view s);
bool exact_match(std::string_view prediction, std::string_view gold);

struct PassRateResult {
  PassRateRecord record;
  std::string error;
};

// Samples the question n_samples times without tools and counts exact
// matches against gold.
PassRateResult compute_pass_rate(const RlQuery& query, ModelClient& model,
                                 const SampleConfig& config);

struct SelectionResult {
  std::vector<std::string> selected;  // sorted query ids
  std::string warning;                // set when candidates < pool_size
};

// Candidates are records with r_q <= threshold minus the SFT exclusion set;
// pool_size of them are drawn uniformly with the seed.
SelectionResult select_web_queries(const std::vector<PassRateRecord>& records,
                                   const SampleConfig& config,
                                   const std::set<std::string>& sft_exclude = {});

struct CodeProbeRecord {
  std::string query_id;
  std::uint64_t solved = 0;
  std::uint64_t samples = 0;
  bool retained = true;
};

nlohmann::json code_probe_to_json(const CodeProbeRecord& record);

struct CodeFilterResult {
  std::vector<std::string> retained;
  std::vector<CodeProbeRecord> records;
  std::string error;
};

// Runs each query through n_samples full episodes (code tool backed by the
// sandbox) and drops queries every sample of which passes all tests. Each
// sample's episode uses task id "<query_id>#s<index>" so scripted models can
// vary per sample; HTTP models ignore task ids.
CodeFilterResult filter_code_queries(const std::vector<RlQuery>& queries,
                                     ModelClient& model,
                                     const PythonSandbox& sandbox,
                                     const SampleConfig& config);

}  // namespace coa
