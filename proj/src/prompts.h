#pragma once

#include <string>
#include <string_view>

namespace coa {

// Answer-equivalence judge prompt. Slots: {question}, {gt_answer},
// {pred_answer}. Filling is a single simultaneous pass: brace text arriving
// via the values is never re-interpreted.
std::string_view judge_prompt_template();
std::string judge_prompt_fill(std::string_view question, std::string_view gold,
                              std::string_view prediction);

// Page-summarization prompt used by the crawl tool. Slots: {query}, {clues},
// {page}.
std::string_view summary_prompt_template();
std::string summary_prompt_fill(std::string_view query, std::string_view clues,
                                std::string_view page);

}  // namespace coa
