#pragma once

#include <array>
#include <optional>
#include <string_view>

namespace coa {

enum class TagKind {
  Think,
  Plan,
  Code,
  Observation,
  Reflection,
  Answer,
  SuggestedAnswer,
  DoubleCheck,
  WebSearch,
  CrawlPage,
  Tools,
};

inline constexpr std::array<TagKind, 11> kAllKinds = {
    TagKind::Think,      TagKind::Plan,        TagKind::Code,
    TagKind::Observation, TagKind::Reflection, TagKind::Answer,
    TagKind::SuggestedAnswer, TagKind::DoubleCheck, TagKind::WebSearch,
    TagKind::CrawlPage,  TagKind::Tools,
};

std::string_view open_literal(TagKind k);
std::string_view close_literal(TagKind k);

// Wire name, identical to the tag word: "think", "web_search", ...
std::string_view kind_name(TagKind k);
std::optional<TagKind> kind_from_name(std::string_view name);

// Kinds only the environment may produce in orchestrated episodes.
inline bool is_environment_kind(TagKind k) {
  return k == TagKind::Observation || k == TagKind::DoubleCheck;
}

// Kinds counted by the tool-call counter.
inline bool counts_as_tool_call(TagKind k) {
  return k == TagKind::WebSearch || k == TagKind::CrawlPage || k == TagKind::Code;
}

// Kinds whose segment requests an environment Observation.
inline bool requests_observation(TagKind k) {
  return counts_as_tool_call(k) || k == TagKind::Tools;
}

// Action kinds: one step each. Think and Answer are not actions.
inline bool is_action_kind(TagKind k) {
  return requests_observation(k) || k == TagKind::Plan ||
         k == TagKind::Reflection || k == TagKind::SuggestedAnswer;
}

struct LiteralMatch {
  TagKind kind;
  bool is_close;
  size_t length;
};

// Matches an exact tag literal at the start of `text` (which must begin with
// '<'). Literals are case-sensitive; nothing else is special.
std::optional<LiteralMatch> match_literal(std::string_view text);

// True when `tail` is a proper prefix of at least one tag literal; a
// streaming parser must wait for more input before deciding.
bool could_prefix_literal(std::string_view tail);

size_t max_literal_length();

}  // namespace coa
