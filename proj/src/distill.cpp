#include "distill.h"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <sstream>

#include "parser.h"
#include "rng.h"
#include "tags.h"
#include "validate.h"

namespace coa {

namespace {

std::string trim(std::string_view s) {
  size_t b = 0;
  size_t e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

}  // namespace

MasTrace mas_trace_from_json(const nlohmann::json& j) {
  MasTrace trace;
  trace.task_id = j.value("task_id", std::string());
  trace.final_answer = j.value("final_answer", std::string());
  trace.gold = j.value("gold", std::string());
  trace.question = j.value("question", std::string());
  trace.source = j.value("source", std::string());
  trace.task_class = j.value("task_class", std::string());
  if (j.contains("events")) {
    for (const auto& ev : j.at("events")) {
      MasEvent event;
      event.state_digest = ev.value("state_digest", std::string());
      event.activated_agent = ev.value("activated_agent", std::string());
      event.output = ev.value("output", std::string());
      if (ev.contains("observation") && ev.at("observation").is_string())
        event.observation = ev.at("observation").get<std::string>();
      trace.events.push_back(std::move(event));
    }
  }
  return trace;
}

AgentMapping agent_mapping_from_json(const nlohmann::json& j) {
  AgentMapping mapping;
  if (j.contains("profile")) {
    auto p = profile_from_name(j.at("profile").get<std::string>());
    if (p) mapping.profile = *p;
  }
  if (j.contains("map")) {
    for (const auto& [agent, kind] : j.at("map").items()) {
      auto k = kind_from_name(kind.get<std::string>());
      if (k) mapping.map[agent] = *k;
    }
  }
  return mapping;
}

ConvertResult convert_trace(const MasTrace& trace, const AgentMapping& mapping) {
  ConvertResult out;
  Trajectory& t = out.trajectory;
  t.task_id = trace.task_id;
  t.profile = mapping.profile;
  for (const MasEvent& ev : trace.events) {
    auto it = mapping.map.find(ev.activated_agent);
    if (it == mapping.map.end()) {
      out.error = "unmapped agent: " + ev.activated_agent;
      return out;
    }
    Origin origin =
        is_environment_kind(it->second) ? Origin::Environment : Origin::Model;
    append_canonical_segment(t, it->second, trim(ev.output), origin);
    if (ev.observation)
      append_canonical_segment(t, TagKind::Observation, trim(*ev.observation),
                               Origin::Environment);
  }
  bool has_answer = false;
  for (const Segment& s : t.segments)
    if (s.kind == TagKind::Answer) has_answer = true;
  if (!has_answer && !trace.final_answer.empty()) {
    append_canonical_segment(t, TagKind::Answer, trim(trace.final_answer),
                             Origin::Model);
    has_answer = true;
  }
  t.status = has_answer ? Status::Answered : Status::InProgress;
  t.counters = derive_counters(t);

  Trajectory reparsed = parse_text(render_trajectory(t), t.profile);
  bool round_trips = reparsed.segments.size() == t.segments.size();
  for (size_t i = 0; round_trips && i < t.segments.size(); ++i)
    round_trips = reparsed.segments[i].kind == t.segments[i].kind &&
                  reparsed.segments[i].body == t.segments[i].body;
  if (!round_trips) {
    out.error = "trace text breaks the tag round-trip for task " + trace.task_id;
    out.trajectory = Trajectory{};
  }
  return out;
}

std::string_view task_class_name(TaskClass c) {
  switch (c) {
    case TaskClass::Web: return "web";
    case TaskClass::Code: return "code";
    case TaskClass::Math: return "math";
  }
  return "web";
}

std::optional<TaskClass> task_class_from_name(std::string_view name) {
  if (name == "web") return TaskClass::Web;
  if (name == "code") return TaskClass::Code;
  if (name == "math") return TaskClass::Math;
  return std::nullopt;
}

CorpusItem corpus_item_from_json(const nlohmann::json& j) {
  CorpusItem item;
  item.trajectory = trajectory_from_json(j.at("trajectory"));
  item.record_id = j.value("record_id", item.trajectory.task_id);
  item.source = j.value("source", std::string());
  item.question = j.value("question", std::string());
  item.gold = j.value("gold", std::string());
  if (auto c = task_class_from_name(j.value("task_class", std::string("web"))))
    item.task_class = *c;
  if (j.contains("tests")) item.tests = test_cases_from_json(j.at("tests"));
  item.answer_verified = j.value("answer_verified", false);
  item.upsampled = j.value("upsampled", false);
  return item;
}

nlohmann::json corpus_item_to_json(const CorpusItem& item) {
  nlohmann::json j{{"record_id", item.record_id},
                   {"source", item.source},
                   {"task_class", std::string(task_class_name(item.task_class))},
                   {"question", item.question},
                   {"gold", item.gold},
                   {"trajectory", trajectory_to_json(item.trajectory)}};
  if (!item.tests.empty()) {
    nlohmann::json tests = nlohmann::json::array();
    for (const TestCase& tc : item.tests)
      tests.push_back({{"stdin", tc.stdin_data},
                       {"expected_stdout", tc.expected_stdout}});
    j["tests"] = tests;
  }
  if (item.answer_verified) j["answer_verified"] = true;
  if (item.upsampled) j["upsampled"] = true;
  return j;
}

ItemResult corpus_item_from_trace(const MasTrace& trace,
                                  const AgentMapping& mapping) {
  ItemResult out;
  ConvertResult converted = convert_trace(trace, mapping);
  if (!converted.error.empty()) {
    out.error = converted.error;
    return out;
  }
  out.item.record_id = trace.task_id;
  out.item.source = trace.source;
  out.item.question = trace.question;
  out.item.gold = trace.gold;
  if (auto c = task_class_from_name(trace.task_class)) out.item.task_class = *c;
  out.item.trajectory = std::move(converted.trajectory);
  return out;
}

namespace {

bool has_reflection(const Trajectory& t) {
  for (const Segment& s : t.segments)
    if (s.kind == TagKind::Reflection) return true;
  return false;
}

// Successive tool calls of the same kind with byte-identical trimmed
// payloads, regardless of segments between them.
bool has_redundant_tool_input(const Trajectory& t) {
  bool have_prev = false;
  TagKind prev_kind = TagKind::Think;
  std::string prev_payload;
  for (const Segment& s : t.segments) {
    if (s.origin != Origin::Model || !counts_as_tool_call(s.kind)) continue;
    std::string payload = trim(s.body);
    if (have_prev && s.kind == prev_kind && payload == prev_payload) return true;
    have_prev = true;
    prev_kind = s.kind;
    prev_payload = std::move(payload);
  }
  return false;
}

void count_drop(StageReport& report, const std::string& reason) {
  ++report.drops[reason];
}

}  // namespace

StageResult filter_complexity(std::vector<CorpusItem> corpus,
                              const FilterConfig& config) {
  StageResult result;
  result.report.stage = "complexity";
  result.report.input = corpus.size();
  for (CorpusItem& item : corpus) {
    if (trajectory_hops(item.trajectory) >= config.min_interactions)
      result.corpus.push_back(std::move(item));
    else
      count_drop(result.report, "too_few_interactions");
  }
  result.report.output = result.corpus.size();
  return result;
}

StageResult filter_quality(std::vector<CorpusItem> corpus,
                           const FilterConfig& config,
                           const QualityVerifiers& verifiers) {
  (void)config;
  StageResult result;
  result.report.stage = "quality";
  result.report.input = corpus.size();
  for (const CorpusItem& item : corpus) {
    if (item.task_class == TaskClass::Web && verifiers.judge == nullptr) {
      result.error = "verifier unavailable for class web";
      return result;
    }
    if (item.task_class == TaskClass::Code && verifiers.sandbox == nullptr) {
      result.error = "verifier unavailable for class code";
      return result;
    }
  }
  for (CorpusItem& item : corpus) {
    if (!validate_sequence(item.trajectory).ok) {
      count_drop(result.report, "sequence_violation");
      continue;
    }
    if (has_redundant_tool_input(item.trajectory)) {
      count_drop(result.report, "redundant_tool_input");
      continue;
    }
    bool correct = false;
    switch (item.task_class) {
      case TaskClass::Web: {
        RewardRecord rec = reward_web(item.trajectory, item.question, item.gold,
                                      *verifiers.judge);
        if (!rec.error.empty()) {
          result.error = rec.error;
          return result;
        }
        if (rec.judge_unparseable) {
          count_drop(result.report, "judge_unparseable");
          continue;
        }
        correct = rec.score_answer == 1;
        break;
      }
      case TaskClass::Code: {
        RewardRecord rec =
            reward_code(item.trajectory, item.tests, *verifiers.sandbox);
        if (!rec.error.empty()) {
          result.error = rec.error;
          return result;
        }
        correct = rec.score_answer == 1;
        break;
      }
      case TaskClass::Math: {
        std::optional<std::string> answer = extract_answer(item.trajectory);
        correct = answer && verify_math_answer(*answer, item.gold) == 1;
        break;
      }
    }
    if (!correct) {
      count_drop(result.report, "wrong_answer");
      continue;
    }
    item.answer_verified = true;
    result.corpus.push_back(std::move(item));
  }
  result.report.output = result.corpus.size();
  return result;
}

StageResult enrich_reflection(std::vector<CorpusItem> corpus,
                              const FilterConfig& config, std::uint64_t seed) {
  StageResult result;
  result.report.stage = "reflection";
  result.report.input = corpus.size();
  for (CorpusItem& item : corpus) {
    if (has_reflection(item.trajectory)) {
      result.corpus.push_back(std::move(item));
      continue;
    }
    if (config.drop_no_reflection_for.count(item.task_class)) {
      count_drop(result.report, "no_reflection");
      continue;
    }
    if (record_unit(item.record_id, seed) < config.reflection_downsample_rate)
      result.corpus.push_back(std::move(item));
    else
      count_drop(result.report, "no_reflection_downsampled");
  }
  result.report.output = result.corpus.size();
  return result;
}

namespace {

bool qualifies_for_upsample(const CorpusItem& item, const FilterConfig& config) {
  if (!item.answer_verified) return false;
  for (const Segment& s : item.trajectory.segments) {
    if (s.kind != TagKind::DoubleCheck) continue;
    int score = config.credibility_scorer ? config.credibility_scorer(s)
                                          : double_check_score(s.body);
    if (score < config.credibility_threshold) return true;
  }
  return false;
}

}  // namespace

StageResult upsample_error_correction(std::vector<CorpusItem> corpus,
                                      const FilterConfig& config) {
  StageResult result;
  result.report.stage = "error_correction";
  result.report.input = corpus.size();
  for (CorpusItem& item : corpus) {
    if (!item.upsampled && qualifies_for_upsample(item, config)) {
      item.upsampled = true;
      CorpusItem original = item;
      result.corpus.push_back(std::move(item));
      for (std::uint64_t i = 1; i < config.error_correction_upsample_factor;
           ++i) {
        CorpusItem copy = original;
        copy.record_id = original.record_id + "#dup" + std::to_string(i);
        result.corpus.push_back(std::move(copy));
        ++result.report.added;
      }
    } else {
      result.corpus.push_back(std::move(item));
    }
  }
  result.report.output = result.corpus.size();
  return result;
}

PipelineResult run_filter_pipeline(std::vector<CorpusItem> corpus,
                                   const FilterConfig& config,
                                   const QualityVerifiers& verifiers,
                                   std::uint64_t seed) {
  PipelineResult out;
  StageResult stage = filter_complexity(std::move(corpus), config);
  out.report.stages.push_back(stage.report);

  stage = filter_quality(std::move(stage.corpus), config, verifiers);
  out.report.stages.push_back(stage.report);
  if (!stage.error.empty()) {
    out.error = stage.error;
    return out;
  }

  stage = enrich_reflection(std::move(stage.corpus), config, seed);
  out.report.stages.push_back(stage.report);

  stage = upsample_error_correction(std::move(stage.corpus), config);
  out.report.stages.push_back(stage.report);

  out.corpus = std::move(stage.corpus);
  return out;
}

nlohmann::json filter_report_to_json(const FilterReport& report) {
  nlohmann::json stages = nlohmann::json::array();
  for (const StageReport& s : report.stages) {
    nlohmann::json drops = nlohmann::json::object();
    for (const auto& [reason, count] : s.drops) drops[reason] = count;
    stages.push_back({{"stage", s.stage},
                      {"input", s.input},
                      {"output", s.output},
                      {"added", s.added},
                      {"drops", drops}});
  }
  return {{"stages", stages}};
}

std::string render_filter_report(const FilterReport& report) {
  std::ostringstream out;
  out << "stage             input  output  added  drops\n";
  for (const StageReport& s : report.stages) {
    std::string drops;
    for (const auto& [reason, count] : s.drops) {
      if (!drops.empty()) drops += " ";
      drops += reason + "=" + std::to_string(count);
    }
    if (drops.empty()) drops = "-";
    char line[128];
    std::snprintf(line, sizeof(line), "%-17s %-6llu %-7llu %-6llu ",
                  s.stage.c_str(),
                  static_cast<unsigned long long>(s.input),
                  static_cast<unsigned long long>(s.output),
                  static_cast<unsigned long long>(s.added));
    out << line << drops << "\n";
  }
  return out.str();
}

std::uint64_t trajectory_hops(const Trajectory& t) {
  std::uint64_t hops = 0;
  for (const Segment& s : t.segments)
    if (s.origin == Origin::Model && is_action_kind(s.kind)) ++hops;
  return hops;
}

nlohmann::json sft_record_to_json(const SftRecord& record) {
  nlohmann::json mask = nlohmann::json::array();
  for (const MaskSpan& span : record.mask)
    mask.push_back(
        {{"start", span.start}, {"end", span.end}, {"masked", span.masked}});
  return {{"prompt", record.prompt},
          {"completion", record.completion},
          {"mask", mask},
          {"hops", record.hops},
          {"source", record.source}};
}

std::vector<SftRecord> export_sft(const std::vector<CorpusItem>& corpus,
                                  const ExportConfig& config) {
  std::vector<SftRecord> records;
  records.reserve(corpus.size());
  for (const CorpusItem& item : corpus) {
    SftRecord rec;
    rec.source = item.source;
    rec.hops = trajectory_hops(item.trajectory);

    std::string task = item.question.empty() ? item.trajectory.task_id
                                             : item.question;
    auto tmpl = config.prompt_templates.find(item.trajectory.profile);
    if (tmpl == config.prompt_templates.end()) {
      rec.prompt = task;
    } else {
      rec.prompt = tmpl->second;
      size_t slot = rec.prompt.find("{task}");
      if (slot != std::string::npos) rec.prompt.replace(slot, 6, task);
    }

    std::vector<Span> spans;
    rec.completion = render_trajectory(item.trajectory, &spans);
    size_t pos = 0;
    auto push_span = [&rec](size_t start, size_t end, bool masked) {
      if (start >= end) return;
      if (!rec.mask.empty() && rec.mask.back().masked == masked &&
          rec.mask.back().end == start) {
        rec.mask.back().end = end;
        return;
      }
      rec.mask.push_back({start, end, masked});
    };
    for (size_t i = 0; i < spans.size(); ++i) {
      const Segment& seg = item.trajectory.segments[i];
      bool masked = seg.origin == Origin::Environment &&
                    (config.mask_double_check || seg.kind == TagKind::Observation);
      push_span(pos, spans[i].begin, false);
      push_span(spans[i].begin, spans[i].end, masked);
      pos = spans[i].end;
    }
    push_span(pos, rec.completion.size(), false);
    records.push_back(std::move(rec));
  }
  return records;
}

CorpusStats corpus_stats(const std::vector<CorpusItem>& corpus) {
  CorpusStats stats;
  stats.count = corpus.size();
  if (corpus.empty()) return stats;

  struct Accum {
    std::uint64_t count = 0;
    std::uint64_t hops = 0;
    std::uint64_t with_reflection = 0;
  };
  std::map<std::string, Accum> by_source;
  Accum total;
  for (const CorpusItem& item : corpus) {
    std::uint64_t hops = trajectory_hops(item.trajectory);
    bool reflective = has_reflection(item.trajectory);
    for (Accum* a : {&total, &by_source[item.source]}) {
      ++a->count;
      a->hops += hops;
      if (reflective) ++a->with_reflection;
    }
  }
  stats.avg_hops = static_cast<double>(total.hops) / total.count;
  stats.reflection_density =
      static_cast<double>(total.with_reflection) / total.count;
  for (const auto& [source, a] : by_source) {
    SourceStats s;
    s.source = source;
    s.count = a.count;
    s.avg_hops = static_cast<double>(a.hops) / a.count;
    s.reflection_density = static_cast<double>(a.with_reflection) / a.count;
    stats.per_source.push_back(std::move(s));
  }
  return stats;
}

nlohmann::json corpus_stats_to_json(const CorpusStats& stats) {
  nlohmann::json j{{"count", stats.count}};
  if (stats.avg_hops) j["avg_hops"] = *stats.avg_hops;
  if (stats.reflection_density)
    j["reflection_density"] = *stats.reflection_density;
  nlohmann::json sources = nlohmann::json::array();
  for (const SourceStats& s : stats.per_source)
    sources.push_back({{"source", s.source},
                       {"count", s.count},
                       {"avg_hops", s.avg_hops},
                       {"reflection_density", s.reflection_density}});
  j["per_source"] = sources;
  return j;
}

double merged_avg_hops(const std::vector<SourceStats>& sources) {
  double weighted = 0.0;
  std::uint64_t total = 0;
  for (const SourceStats& s : sources) {
    weighted += static_cast<double>(s.count) * s.avg_hops;
    total += s.count;
  }
  return total == 0 ? 0.0 : weighted / static_cast<double>(total);
}

}  // namespace coa
