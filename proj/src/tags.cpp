#include "tags.h"

#include <algorithm>

#include "strutil.h"

namespace coa {

namespace {

struct TagNames {
  TagKind kind;
  std::string_view word;   // "think"
  std::string_view open;   // "<think>"
  std::string_view close;  // "</think>"
};

constexpr TagNames kTable[] = {
    {TagKind::Think, "think", "<think>", "</think>"},
    {TagKind::Plan, "plan", "<plan>", "</plan>"},
    {TagKind::Code, "code", "<code>", "</code>"},
    {TagKind::Observation, "observation", "<observation>", "</observation>"},
    {TagKind::Reflection, "reflection", "<reflection>", "</reflection>"},
    {TagKind::Answer, "answer", "<answer>", "</answer>"},
    {TagKind::SuggestedAnswer, "suggested_answer", "<suggested_answer>",
     "</suggested_answer>"},
    {TagKind::DoubleCheck, "double_check", "<double_check>", "</double_check>"},
    {TagKind::WebSearch, "web_search", "<web_search>", "</web_search>"},
    {TagKind::CrawlPage, "crawl_page", "<crawl_page>", "</crawl_page>"},
    {TagKind::Tools, "tools", "<tools>", "</tools>"},
};

const TagNames& entry(TagKind k) { return kTable[static_cast<size_t>(k)]; }

}  // namespace

std::string_view open_literal(TagKind k) { return entry(k).open; }
std::string_view close_literal(TagKind k) { return entry(k).close; }
std::string_view kind_name(TagKind k) { return entry(k).word; }

std::optional<TagKind> kind_from_name(std::string_view name) {
  for (const auto& t : kTable)
    if (t.word == name) return t.kind;
  return std::nullopt;
}

std::optional<LiteralMatch> match_literal(std::string_view text) {
  for (const auto& t : kTable) {
    if (starts_with(text, t.open)) return LiteralMatch{t.kind, false, t.open.size()};
    if (starts_with(text, t.close)) return LiteralMatch{t.kind, true, t.close.size()};
  }
  return std::nullopt;
}

bool could_prefix_literal(std::string_view tail) {
  if (tail.empty()) return true;
  for (const auto& t : kTable) {
    if (tail.size() < t.open.size() && t.open.compare(0, tail.size(), tail) == 0)
      return true;
    if (tail.size() < t.close.size() && t.close.compare(0, tail.size(), tail) == 0)
      return true;
  }
  return false;
}

size_t max_literal_length() {
  size_t m = 0;
  for (const auto& t : kTable) m = std::max(m, t.close.size());
  return m;
}

}  // namespace coa
