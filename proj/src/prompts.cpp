#include "prompts.h"

#include <array>

namespace coa {

namespace {

constexpr std::string_view kJudgeTemplate =
    R"(Please determine if the predicted answer is equivalent to the labeled answer.

Question: {question}

Labeled Answer: {gt_answer}

Predicted Answer: {pred_answer}

Rules:

If the prediction and answer are semantically equivalent despite the expression order, the description format, and the use of measurement units and the order, then your judgement will be correct.

{
    "rationale": "your rationale for the judgement, as a text",
    "judgement": "your judgement result, can only be 'correct' or 'incorrect'"
})";

constexpr std::string_view kSummaryTemplate =
    R"(Target: Extract all content from a web page that matches a specific web search query, ensuring completeness and relevance. (No response/analysis required.)

web search query:
{query}

Clues and ideas:
{clues}

Searched Web Page:
{page}

Important Notes:
- Summarize all content (text, tables, lists, code blocks) into concise points that directly address the query and clues, and ideas.
- Preserve and list all relevant links ([text](url)) from the web page.
- Summarize in three points: web search query-related information, clues and ideas-related information, and relevant links with descriptions.
- If no relevant information exists, just output "No relevant information.")";

struct Slot {
  std::string_view name;
  std::string_view value;
};

// One left-to-right pass; each slot occurrence is replaced with its value
// verbatim, and replaced text is not rescanned.
std::string fill(std::string_view tmpl, std::initializer_list<Slot> slots) {
  std::string out;
  out.reserve(tmpl.size() + 256);
  size_t i = 0;
  while (i < tmpl.size()) {
    size_t brace = tmpl.find('{', i);
    if (brace == std::string_view::npos) {
      out.append(tmpl.substr(i));
      break;
    }
    out.append(tmpl.substr(i, brace - i));
    bool matched = false;
    for (const Slot& s : slots) {
      if (tmpl.compare(brace + 1, s.name.size(), s.name) == 0 &&
          brace + 1 + s.name.size() < tmpl.size() &&
          tmpl[brace + 1 + s.name.size()] == '}') {
        out.append(s.value);
        i = brace + s.name.size() + 2;
        matched = true;
        break;
      }
    }
    if (!matched) {
      out += '{';
      i = brace + 1;
    }
  }
  return out;
}

}  // namespace

std::string_view judge_prompt_template() { return kJudgeTemplate; }

std::string judge_prompt_fill(std::string_view question, std::string_view gold,
                              std::string_view prediction) {
  return fill(kJudgeTemplate, {{"question", question},
                               {"gt_answer", gold},
                               {"pred_answer", prediction}});
}

std::string_view summary_prompt_template() { return kSummaryTemplate; }

std::string summary_prompt_fill(std::string_view query, std::string_view clues,
                                std::string_view page) {
  return fill(kSummaryTemplate,
              {{"query", query}, {"clues", clues}, {"page", page}});
}

}  // namespace coa
