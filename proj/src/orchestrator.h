#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "model_client.h"
#include "parser.h"
#include "tools.h"
#include "trajectory.h"
#include "validate.h"

namespace coa {

// Budgets for one episode. One step is one model-emitted action segment
// (tool call, plan, reflection, suggested answer); thinking and the final
// answer are free. Every generation consumes at least one step, so an
// episode runs at most max_steps + 1 generations (the last being the forced
// final-answer phase).
struct EpisodeConfig {
  Profile profile = Profile::CodeMath;
  std::uint64_t max_steps = 24;
  std::uint64_t max_tool_calls = 12;
  std::uint64_t max_generated_tokens = 32768;
  GenerationParams generation;  // empty stop list = default_episode_stops()
  int search_results = kDefaultSearchResults;
};

// Close literals of every action kind plus the answer close, so the
// environment can interject after each action and the episode ends cleanly.
std::vector<std::string> default_episode_stops();

struct EpisodeResult {
  Trajectory trajectory;
  std::string error;  // transport or model failure; trajectory kept as-is
  std::uint64_t generations = 0;
  ValidationReport validation;
  double wall_seconds = 0;               // 0 when the model is scripted
  std::vector<double> tool_seconds;      // per environment insertion
};

// Runs one episode: alternates generation with environment insertions under
// the budgets, enforcing the grammar. The returned trajectory either passes
// validate_sequence or carries a parse/sequence error status.
EpisodeResult run_episode(const std::string& task_id, const std::string& task,
                          const EpisodeConfig& config, ModelClient& model,
                          ToolSet& tools);

// Canonical byte form of one environment insertion: a "\n\n" joint, the open
// literal, the profile's body padding, the body, padding, close literal.
std::string environment_insertion_text(Profile profile, TagKind kind,
                                       std::string_view body);

}  // namespace coa
