#include "parser.h"

namespace coa {

namespace {

// Longest window an unknown angle token may occupy before '<' is treated as
// plain text; bounds streaming lookahead.
constexpr size_t kUnknownTokenWindow = 64;

bool token_head_char(char c) {
  return c == '/' || c == '_' || (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z');
}

bool token_body_char(char c) {
  return token_head_char(c) || c == '-' || (c >= '0' && c <= '9');
}

}  // namespace

StreamParser::StreamParser(Profile profile) : profile_(profile) {
  traj_.profile = profile;
}

void StreamParser::feed(std::string_view chunk) {
  if (finished_ || chunk.empty()) return;
  buf_.append(chunk);
  pump(false);
}

void StreamParser::flush_gap() {
  if (gap_.empty()) return;
  traj_.gaps.push_back(Gap{traj_.segments.size(), std::move(gap_)});
  gap_.clear();
}

void StreamParser::pump(bool at_end) {
  size_t i = 0;
  const size_t max_lit = max_literal_length();
  while (i < buf_.size()) {
    if (fatal_) {
      gap_.append(buf_, i, std::string::npos);
      i = buf_.size();
      break;
    }
    size_t lt = buf_.find('<', i);
    std::string& sink = in_body_ ? body_ : gap_;
    if (lt == std::string::npos) {
      sink.append(buf_, i, std::string::npos);
      i = buf_.size();
      break;
    }
    sink.append(buf_, i, lt - i);
    i = lt;
    std::string_view tail(buf_.data() + i, buf_.size() - i);
    if (!at_end && tail.size() < max_lit && could_prefix_literal(tail)) break;
    auto m = match_literal(tail);
    if (in_body_) {
      if (m && m->is_close && m->kind == open_kind_) {
        Segment seg;
        seg.kind = open_kind_;
        seg.body = std::move(body_);
        seg.span = Span{open_start_, base_ + i + m->length};
        seg.origin = open_origin_;
        body_.clear();
        traj_.segments.push_back(std::move(seg));
        in_body_ = false;
        i += m->length;
        continue;
      }
      if (m) {
        fatal_ = true;
        diags_.push_back({ParseDiagnostic::Level::Error, "nested_special_token",
                          base_ + i,
                          std::string(m->is_close ? close_literal(m->kind)
                                                  : open_literal(m->kind))});
        // Round-trip: everything from the open literal onward becomes
        // trailing gap text.
        gap_.assign(open_literal(open_kind_));
        gap_ += body_;
        body_.clear();
        in_body_ = false;
        continue;
      }
      body_ += '<';
      ++i;
      continue;
    }
    if (m && !m->is_close) {
      flush_gap();
      in_body_ = true;
      open_kind_ = m->kind;
      open_origin_ = origin_;
      open_start_ = base_ + i;
      body_.clear();
      i += m->length;
      continue;
    }
    if (m && m->is_close) {
      diags_.push_back({ParseDiagnostic::Level::Warning, "stray_close_tag",
                        base_ + i, std::string(close_literal(m->kind))});
      gap_.append(buf_, i, m->length);
      i += m->length;
      continue;
    }
    // Unknown angle token: diagnostic only, bytes stay in the gap.
    size_t avail = buf_.size() - i;
    size_t window = std::min(avail, kUnknownTokenWindow + 1);
    size_t token_len = 0;
    bool undecided = false;
    if (avail >= 2 && token_head_char(buf_[i + 1])) {
      size_t j = 2;
      for (; j < window; ++j) {
        char c = buf_[i + j];
        if (c == '>') {
          token_len = j + 1;
          break;
        }
        if (!token_body_char(c)) break;
      }
      if (token_len == 0 && j == window && window < kUnknownTokenWindow + 1 &&
          !at_end)
        undecided = true;
    } else if (avail < 2 && !at_end) {
      undecided = true;
    }
    if (undecided) break;
    if (token_len > 0) {
      diags_.push_back({ParseDiagnostic::Level::Warning, "unknown_tag",
                        base_ + i, std::string(buf_.data() + i, token_len)});
      gap_.append(buf_, i, token_len);
      i += token_len;
      continue;
    }
    gap_ += '<';
    ++i;
  }
  base_ += i;
  buf_.erase(0, i);
}

Trajectory StreamParser::finish() {
  if (finished_) return std::move(traj_);
  pump(true);
  if (in_body_ && !fatal_) {
    fatal_ = true;
    diags_.push_back({ParseDiagnostic::Level::Error, "unclosed_tag",
                      open_start_, std::string(open_literal(open_kind_))});
    gap_.assign(open_literal(open_kind_));
    gap_ += body_;
    body_.clear();
    in_body_ = false;
  }
  flush_gap();
  finished_ = true;
  if (fatal_) {
    traj_.status = Status::ParseError;
  } else if (!traj_.segments.empty() &&
             traj_.segments.back().kind == TagKind::Answer) {
    traj_.status = Status::Answered;
  } else {
    traj_.status = Status::InProgress;
  }
  traj_.counters = derive_counters(traj_);
  return std::move(traj_);
}

Trajectory parse_text(std::string_view text, Profile profile,
                      std::vector<ParseDiagnostic>* diags) {
  StreamParser p(profile);
  p.feed(text);
  Trajectory t = p.finish();
  if (diags) *diags = p.diagnostics();
  return t;
}

}  // namespace coa
