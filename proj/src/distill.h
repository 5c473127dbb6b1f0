#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "model_client.h"
#include "rewards.h"
#include "sandbox.h"
#include "trajectory.h"

namespace coa {

// One recorded step of an upstream multi-agent run.
struct MasEvent {
  std::string state_digest;
  std::string activated_agent;
  std::string output;
  std::optional<std::string> observation;
};

struct MasTrace {
  std::string task_id;
  std::vector<MasEvent> events;
  std::string final_answer;
  std::string gold;
  // Optional companions read from the same JSON object when present.
  std::string question;
  std::string source;
  std::string task_class;  // "web" | "code" | "math"; empty means web
};

MasTrace mas_trace_from_json(const nlohmann::json& j);

// Declares which trajectory profile a trace family renders to and how agent
// names map onto tag kinds.
struct AgentMapping {
  Profile profile = Profile::CodeMath;
  std::map<std::string, TagKind> map;
};

AgentMapping agent_mapping_from_json(const nlohmann::json& j);

struct ConvertResult {
  Trajectory trajectory;
  std::string error;
};

// Replays trace events into tagged segments in order; recorded observations
// become Environment-origin Observation segments. The result must survive a
// render/parse round-trip (event text embedding tag literals cannot).
ConvertResult convert_trace(const MasTrace& trace, const AgentMapping& mapping);

enum class TaskClass { Web, Code, Math };

std::string_view task_class_name(TaskClass c);
std::optional<TaskClass> task_class_from_name(std::string_view name);

// One corpus row flowing through the filter stages.
struct CorpusItem {
  std::string record_id;
  std::string source;
  TaskClass task_class = TaskClass::Web;
  std::string question;
  std::string gold;
  std::vector<TestCase> tests;
  Trajectory trajectory;
  bool answer_verified = false;  // set by the quality stage
  bool upsampled = false;        // set by the upsample stage
};

CorpusItem corpus_item_from_json(const nlohmann::json& j);
nlohmann::json corpus_item_to_json(const CorpusItem& item);

struct ItemResult {
  CorpusItem item;
  std::string error;
};

ItemResult corpus_item_from_trace(const MasTrace& trace, const AgentMapping& mapping);

struct FilterConfig {
  std::uint64_t min_interactions = 5;
  // Retention probability for reflection-free rows outside the drop classes.
  double reflection_downsample_rate = 0.25;
  std::set<TaskClass> drop_no_reflection_for = {TaskClass::Code, TaskClass::Math};
  // Total copies kept for an error-correction row, originals included.
  std::uint64_t error_correction_upsample_factor = 3;
  int credibility_threshold = 3;
  // Score per DoubleCheck segment; default reads the trailing score line.
  std::function<int(const Segment&)> credibility_scorer;
};

struct StageReport {
  std::string stage;
  std::uint64_t input = 0;
  std::uint64_t output = 0;
  std::uint64_t added = 0;
  std::map<std::string, std::uint64_t> drops;
};

struct FilterReport {
  std::vector<StageReport> stages;
};

nlohmann::json filter_report_to_json(const FilterReport& report);
std::string render_filter_report(const FilterReport& report);

struct StageResult {
  std::vector<CorpusItem> corpus;
  StageReport report;
  std::string error;
};

// Verifier handles for the quality stage; a class present in the corpus with
// its handle missing is an error, not a silent keep.
struct QualityVerifiers {
  ModelClient* judge = nullptr;
  const PythonSandbox* sandbox = nullptr;
};

StageResult filter_complexity(std::vector<CorpusItem> corpus,
                              const FilterConfig& config);
StageResult filter_quality(std::vector<CorpusItem> corpus,
                           const FilterConfig& config,
                           const QualityVerifiers& verifiers);
StageResult enrich_reflection(std::vector<CorpusItem> corpus,
                              const FilterConfig& config, std::uint64_t seed);
StageResult upsample_error_correction(std::vector<CorpusItem> corpus,
                                      const FilterConfig& config);

struct PipelineResult {
  std::vector<CorpusItem> corpus;
  FilterReport report;
  std::string error;
};

// The four stages in fixed order: complexity, quality, reflection,
// error-correction upsampling.
PipelineResult run_filter_pipeline(std::vector<CorpusItem> corpus,
                                   const FilterConfig& config,
                                   const QualityVerifiers& verifiers,
                                   std::uint64_t seed);

// Half-open byte range of the completion with a loss flag; spans partition
// the completion exactly.
struct MaskSpan {
  size_t start = 0;
  size_t end = 0;
  bool masked = false;
};

struct SftRecord {
  std::string prompt;
  std::string completion;
  std::vector<MaskSpan> mask;
  std::uint64_t hops = 0;
  std::string source;
};

nlohmann::json sft_record_to_json(const SftRecord& record);

struct ExportConfig {
  // Per-profile prompt template with a {task} slot; a missing entry uses the
  // question text alone.
  std::map<Profile, std::string> prompt_templates;
  // When false only Observation spans are masked; environment-origin
  // DoubleCheck and checker Think spans train like model output.
  bool mask_double_check = true;
};

std::vector<SftRecord> export_sft(const std::vector<CorpusItem>& corpus,
                                  const ExportConfig& config);

// Model-origin action segments.
std::uint64_t trajectory_hops(const Trajectory& t);

struct SourceStats {
  std::string source;
  std::uint64_t count = 0;
  double avg_hops = 0.0;
  double reflection_density = 0.0;
};

struct CorpusStats {
  std::uint64_t count = 0;
  std::optional<double> avg_hops;
  std::optional<double> reflection_density;
  std::vector<SourceStats> per_source;  // sorted by source name
};

CorpusStats corpus_stats(const std::vector<CorpusItem>& corpus);
nlohmann::json corpus_stats_to_json(const CorpusStats& stats);

// Count-weighted mean over per-source averages.
double merged_avg_hops(const std::vector<SourceStats>& sources);

}  // namespace coa
