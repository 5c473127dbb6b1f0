#include "orchestrator.h"

#include <algorithm>
#include <chrono>

#include "strutil.h"

namespace coa {

std::vector<std::string> default_episode_stops() {
  std::vector<std::string> stops;
  for (TagKind k : kAllKinds)
    if (is_action_kind(k)) stops.emplace_back(close_literal(k));
  stops.emplace_back(close_literal(TagKind::Answer));
  return stops;
}

std::string environment_insertion_text(Profile profile, TagKind kind,
                                       std::string_view body) {
  std::string_view pad = profile == Profile::CodeMath ? "\n" : "\n\n";
  std::string out = "\n\n";
  out.append(open_literal(kind));
  out.append(pad);
  out.append(body);
  out.append(pad);
  out.append(close_literal(kind));
  return out;
}

namespace {

class Stopwatch {
 public:
  explicit Stopwatch(bool enabled) : enabled_(enabled) {
    if (enabled_) start_ = std::chrono::steady_clock::now();
  }
  double seconds() const {
    if (!enabled_) return 0;
    return std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                         start_)
        .count();
  }

 private:
  bool enabled_;
  std::chrono::steady_clock::time_point start_{};
};

struct EpisodeRun {
  const std::string& task_id;
  const std::string& task;
  const EpisodeConfig& config;
  ModelClient& model;
  ToolSet& tools;

  StreamParser parser;
  std::string episode_text;
  std::uint64_t steps = 0;
  std::uint64_t tool_calls = 0;
  std::uint64_t tokens = 0;
  bool sequence_error = false;
  bool exhausted = false;
  bool answered = false;
  EpisodeResult result;

  EpisodeRun(const std::string& id, const std::string& t,
             const EpisodeConfig& cfg, ModelClient& m, ToolSet& ts)
      : task_id(id), task(t), config(cfg), model(m), tools(ts),
        parser(cfg.profile) {}

  PromptContext prompt() const {
    PromptContext ctx;
    ctx.task_id = task_id;
    ctx.user = episode_text.empty() ? task : task + "\n\n" + episode_text;
    return ctx;
  }

  GenerationParams params_for(bool final_phase) const {
    GenerationParams p = config.generation;
    if (final_phase) {
      p.stop = {std::string(close_literal(TagKind::Answer))};
      p.max_tokens = 0;  // the final answer is budgeted separately
    } else {
      if (p.stop.empty()) p.stop = default_episode_stops();
      p.max_tokens = config.max_generated_tokens - tokens;
    }
    return p;
  }

  // The most recent committed bodies feeding crawl summarization.
  CrawlContext crawl_context() const {
    CrawlContext ctx;
    const auto& segs = parser.segments();
    for (auto it = segs.rbegin(); it != segs.rend(); ++it) {
      if (ctx.query.empty() && it->kind == TagKind::WebSearch)
        ctx.query = trim(it->body);
      if (ctx.clues.empty() && it->kind == TagKind::Think)
        ctx.clues = trim(it->body);
      if (!ctx.query.empty() && !ctx.clues.empty()) break;
    }
    return ctx;
  }

  // Every generation costs at least one step so a silent model cannot stall
  // the loop; the counter never reports past the budget.
  void consume_steps(std::uint64_t actions) {
    steps = std::min(config.max_steps,
                     steps + std::max<std::uint64_t>(1, actions));
  }

  void insert_environment(TagKind kind, std::string_view body) {
    std::string text = environment_insertion_text(config.profile, kind, body);
    parser.set_origin(Origin::Environment);
    parser.feed(text);
    parser.set_origin(Origin::Model);
    episode_text += text;
  }

  // One generation; returns true while the episode should continue.
  bool turn(ModelSession& session, bool final_phase) {
    GenerationResult gen = session.generate(prompt(), params_for(final_phase));
    ++result.generations;
    if (gen.reason == FinishReason::Error) {
      result.error = gen.error;
      return false;
    }

    StreamParser staging = parser;
    staging.set_origin(Origin::Model);
    size_t before = staging.segments().size();
    staging.feed(gen.text);

    if (staging.has_fatal()) {
      commit(std::move(staging), gen.text);
      return false;  // ParseError surfaces in finish()
    }

    const auto& segs = staging.segments();
    std::uint64_t actions = 0;
    bool model_env_kind = false;
    for (size_t i = before; i < segs.size(); ++i) {
      if (is_action_kind(segs[i].kind)) ++actions;
      if (is_environment_kind(segs[i].kind)) model_env_kind = true;
    }

    Trajectory staged;
    staged.profile = config.profile;
    staged.segments = segs;
    ValidationReport report = validate_sequence(staged, /*allow_truncated=*/true);

    bool has_new = segs.size() > before;
    const Segment* last = has_new ? &segs.back() : nullptr;
    bool clean_answer = !model_env_kind && report.ok && last &&
                        last->kind == TagKind::Answer && !staging.in_body();

    if (final_phase) {
      // The budget has run out; only an answer that keeps the sequence legal
      // may still commit. Anything else is discarded.
      if (clean_answer) {
        commit(std::move(staging), gen.text);
        answered = true;
      }
      consume_steps(actions);
      return false;
    }

    if (model_env_kind || !report.ok) {
      commit(std::move(staging), gen.text);
      consume_steps(actions);
      sequence_error = true;
      return false;
    }

    if (clean_answer) {
      commit(std::move(staging), gen.text);
      consume_steps(actions);
      answered = true;
      return false;
    }

    bool wants_tool =
        last && requests_observation(last->kind) && !staging.in_body();
    bool wants_check = last && last->kind == TagKind::SuggestedAnswer &&
                       !staging.in_body();
    bool tool_affordable =
        !last || !counts_as_tool_call(last->kind) || tool_calls < config.max_tool_calls;
    bool steps_affordable =
        steps + std::max<std::uint64_t>(1, actions) <= config.max_steps;

    if (gen.reason == FinishReason::Length || !tool_affordable ||
        !steps_affordable) {
      consume_steps(actions);
      if (gen.reason == FinishReason::Length) tokens = config.max_generated_tokens;
      exhausted = true;
      return true;  // continue into the final-answer phase
    }

    TagKind pending_kind = last ? last->kind : TagKind::Think;
    std::string pending_payload = last ? last->body : std::string();
    commit(std::move(staging), gen.text);
    consume_steps(actions);
    tokens += token_estimate(gen.text);

    if (wants_tool) {
      if (counts_as_tool_call(pending_kind)) ++tool_calls;
      Stopwatch watch(!model.is_scripted());
      std::string obs = run_tool(tools, {pending_kind, pending_payload},
                                 crawl_context(), config.search_results);
      result.tool_seconds.push_back(watch.seconds());
      insert_environment(TagKind::Observation, obs);
    } else if (wants_check) {
      Stopwatch watch(!model.is_scripted());
      CheckVerdict verdict = tools.double_check(task, trim(pending_payload));
      result.tool_seconds.push_back(watch.seconds());
      if (!verdict.rationale.empty())
        insert_environment(TagKind::Think, verdict.rationale);
      insert_environment(TagKind::DoubleCheck, verdict.verdict);
    }
    return true;
  }

  void commit(StreamParser&& staging, const std::string& text) {
    parser = std::move(staging);
    episode_text += text;
  }

  EpisodeResult finish() {
    Trajectory traj = parser.finish();
    traj.task_id = task_id;
    traj.profile = config.profile;
    if (traj.status == Status::ParseError) {
      // keep it: highest priority
    } else if (sequence_error) {
      traj.status = Status::SequenceError;
    } else if (traj.status == Status::Answered) {
      // keep it
    } else if (exhausted) {
      traj.status = Status::BudgetExhausted;
    }
    traj.counters.steps = steps;
    traj.counters.generated_token_estimate = tokens;
    result.validation = validate_sequence(
        traj, /*allow_truncated=*/traj.status != Status::Answered);
    result.trajectory = std::move(traj);
    return std::move(result);
  }
};

}  // namespace

EpisodeResult run_episode(const std::string& task_id, const std::string& task,
                          const EpisodeConfig& config, ModelClient& model,
                          ToolSet& tools) {
  EpisodeRun run(task_id, task, config, model, tools);
  Stopwatch wall(!model.is_scripted());

  auto session = model.open_session(task_id);
  bool proceed = true;
  while (proceed && !run.exhausted) {
    if (run.steps >= config.max_steps ||
        run.tokens >= config.max_generated_tokens) {
      run.exhausted = true;
      break;
    }
    proceed = run.turn(*session, /*final_phase=*/false);
  }
  if (run.exhausted && run.result.error.empty()) {
    run.turn(*session, /*final_phase=*/true);
  }

  EpisodeResult result = run.finish();
  result.wall_seconds = wall.seconds();
  return result;
}

}  // namespace coa
