#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "distill.h"
#include "model_client.h"
#include "orchestrator.h"
#include "sampler.h"
#include "sandbox.h"
#include "tools.h"

namespace coa {

inline constexpr std::string_view kEngineVersion = "0.1.0";

struct JsonlResult {
  std::vector<nlohmann::json> records;
  std::string error;  // names the 1-based line on parse failure
};

// Blank lines are skipped; any unparseable line is fatal for the file.
JsonlResult read_jsonl(std::istream& in);
JsonlResult read_jsonl_file(const std::string& path);

std::string read_text_file(const std::string& path, std::string* error);
bool write_text_file(const std::string& path, std::string_view content,
                     std::string* error);

// Fully merged run configuration. Precedence, highest first: caller overrides
// (CLI flags), COA_* environment variables, config file, these defaults.
struct EngineConfig {
  std::uint64_t seed = 0;
  std::uint64_t parallel = 1;
  std::uint64_t rollouts = 1;        // episodes per task in rollout runs
  std::string scripted_dir;          // non-empty switches to fixture adapters
  EpisodeConfig episode;
  SampleConfig sample;               // web probes; seeded from `seed` per op
  std::uint64_t code_n_samples = 8;  // code probe episodes per query
  FilterConfig filter;
  ExportConfig export_config;
  SandboxLimits sandbox;             // code tool and reward verification
  HttpEndpointConfig policy;         // base_url empty = unconfigured
  HttpEndpointConfig judge;
  HttpEndpointConfig summarizer;
  HttpEndpointConfig checker;
  ProviderEndpointConfig search;
  ProviderEndpointConfig reader;
  std::uint64_t page_char_cap = 32768;
};

struct ConfigResult {
  EngineConfig config;
  std::string error;
};

// Accepts canonical profile names plus the "web" and "code" flag aliases.
std::optional<Profile> profile_from_flag(std::string_view flag);

// Schema mirrors the struct: top-level keys seed, parallel, rollouts,
// scripted_dir, episode{profile,max_steps,max_tool_calls,max_tokens,
// temperature,top_p,top_k,search_results}, sample{n_samples,code_n_samples,
// threshold,pool_size}, filter{min_interactions,reflection_downsample_rate,
// drop_no_reflection_for,error_correction_upsample_factor,
// credibility_threshold}, export{mask_double_check,prompt_templates},
// sandbox{interpreter,cpu_seconds,memory_bytes,wall_seconds,file_size_bytes,
// output_cap_bytes}, endpoints{policy,judge,summarizer,checker}, tools
// {search,reader,page_char_cap}. Endpoints name secrets indirectly through
// "api_key_env"; a named variable that is unset is an error. Unknown keys
// are rejected so typos fail loudly.
ConfigResult engine_config_from_json(const nlohmann::json& doc);

// Empty path = built-in defaults. Environment overrides are NOT applied here.
ConfigResult load_engine_config(const std::string& config_path);

// COA_SEED, COA_PARALLEL, COA_ROLLOUTS, COA_SCRIPTED_DIR, COA_PROFILE,
// COA_MAX_STEPS, COA_MAX_TOOL_CALLS, COA_MAX_TOKENS, COA_TEMPERATURE,
// COA_TOP_P, COA_TOP_K. Returns an error message, empty on success.
std::string apply_env_overrides(EngineConfig& config);

// Snapshot for manifests and logs. Secrets never appear: endpoint entries
// carry an "api_key_set" flag instead of the key.
nlohmann::json engine_config_to_json(const EngineConfig& config);

// Live handles for one run. Scripted mode reads "<dir>/model.json"
// (ScriptedModelSpec) plus optional "<dir>/tools.json" (ScriptedToolsSpec)
// and aliases judge, summarizer and checker to the scripted policy model.
// Live mode instantiates an HTTP client per configured endpoint.
struct Runtime {
  std::vector<std::unique_ptr<ModelClient>> owned;
  ModelClient* policy = nullptr;
  ModelClient* judge = nullptr;
  ModelClient* summarizer = nullptr;
  ModelClient* checker = nullptr;
  std::unique_ptr<ToolSet> tools;
  std::unique_ptr<PythonSandbox> sandbox;
  std::string error;
};

Runtime build_runtime(const EngineConfig& config);

struct RunManifest {
  std::string command;
  nlohmann::json config;
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
  std::uint64_t seed = 0;
  std::string version{kEngineVersion};
  double wall_seconds = 0;
};

nlohmann::json manifest_to_json(const RunManifest& m);

// Runs fn(i) for i in [0, n) on min(workers, n) threads. Workers pull the
// next index atomically; callers collect results by index, so output order
// follows input order no matter which worker finishes first.
void parallel_indexed(std::uint64_t n, std::uint64_t workers,
                      const std::function<void(std::uint64_t)>& fn);

enum class OpErrorKind { None, Config, Io, Runtime };

// Outcome of one file-level operation. `error` is fatal (nothing usable was
// produced); `failures` counts records that carried an error but left the
// run standing. Every op that writes an output file also writes
// "<output>.manifest.json" and reports it here.
struct OpReport {
  std::uint64_t processed = 0;
  std::uint64_t written = 0;
  std::uint64_t failures = 0;
  std::string error;
  OpErrorKind error_kind = OpErrorKind::None;
  std::string manifest_path;
  nlohmann::json details;
};

nlohmann::json op_report_to_json(const OpReport& report);

// Tasks JSONL rows: {task_id, task} ("question" accepted for task). Appends
// one record per (task, rollout index) in input order: the trajectory wire
// object extended with rollout, generations, wall_seconds, tool_seconds,
// config snapshot, and error when the episode failed in transport. Episodes
// with transport errors or parse/sequence-error status count as failures;
// budget exhaustion is a legitimate terminal state.
OpReport run_rollout(const EngineConfig& config, Runtime& rt,
                     const std::string& tasks_path, const std::string& out_path);

// Wire-format JSONL (first non-blank byte '{') or one raw tagged episode per
// file. Raw text and profile-less records require `profile_override`.
// details.records rows: {line, task_id, valid, status, rule, segment}.
// Invalid records count as failures.
OpReport run_validate(const std::string& path,
                      std::optional<Profile> profile_override);

// Scores every wire-format trajectory in input order. Web needs gold JSONL
// rows {task_id, question, gold} and a judge endpoint; code needs
// "<tests_dir>/<task_id>.json" holding a test-case array. Records whose
// reward computation aborts (judge transport, sandbox failure, missing gold
// or tests) are written with an error field and count as failures.
OpReport run_score(const EngineConfig& config, Runtime& rt, Profile profile,
                   const std::string& traj_path, const std::string& gold_path,
                   const std::string& tests_dir, const std::string& out_path);

// Multi-agent trace JSONL + mapping JSON -> corpus JSONL. Traces that fail
// to convert are skipped, listed in details.errors, and count as failures.
OpReport run_distill_convert(const std::string& traces_path,
                             const std::string& mapping_path,
                             const std::string& out_path);

// Corpus JSONL -> filtered corpus JSONL. Rows are sorted by record_id first
// so output is canonical for any input order. Writes the machine-readable
// stage report to "<out>.report.json"; details carries {report, table}.
OpReport run_distill_filter(const EngineConfig& config, Runtime& rt,
                            const std::string& corpus_path,
                            const std::string& out_path);

// Corpus JSONL -> SFT record JSONL with loss-mask spans.
OpReport run_distill_export(const EngineConfig& config,
                            const std::string& corpus_path,
                            const std::string& out_path);

// Corpus JSONL -> stats JSON in details.stats (per-source rows plus
// merged_avg_hops).
OpReport run_distill_stats(const std::string& corpus_path);

// Query JSONL rows {query_id, question, gold} -> pass-rate record JSONL in
// input order. Per-query model failures are written as {query_id, error}
// rows and count as failures.
OpReport run_sample_passrate(const EngineConfig& config, Runtime& rt,
                             const std::string& queries_path,
                             const std::string& out_path);

// Pass-rate record JSONL -> selected-id list (text, one id per line).
// exclude_path: optional text file of ids to bar from selection.
OpReport run_sample_select(const EngineConfig& config,
                           const std::string& records_path,
                           const std::string& exclude_path,
                           const std::string& out_path);

// Query JSONL rows {query_id, question, tests} -> code probe record JSONL;
// optionally writes retained ids to retained_out (text, one per line).
OpReport run_sample_filter_code(const EngineConfig& config, Runtime& rt,
                                const std::string& queries_path,
                                const std::string& out_path,
                                const std::string& retained_out);

}  // namespace coa
