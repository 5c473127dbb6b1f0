#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "trajectory.h"

namespace coa {

struct ParseDiagnostic {
  enum class Level { Warning, Error };
  Level level = Level::Warning;
  std::string code;    // "unknown_tag", "stray_close_tag",
                       // "nested_special_token", "unclosed_tag"
  size_t offset = 0;   // byte offset in the full stream
  std::string detail;
};

// Incremental parser for one trajectory. Chunk boundaries never change the
// result: feed(a+b) == feed(a), feed(b). Text outside tags is preserved in
// Gap entries so rendering the result reproduces the input byte-for-byte.
//
// Errors: an exact tag literal inside a body is fatal (nested_special_token);
// ending the stream inside a body is fatal (unclosed_tag). Unknown angle
// tokens at top level and stray close literals are warnings; their bytes stay
// in the gap. After a fatal error the remaining input accumulates as trailing
// gap text so the rendered output still matches the source.
class StreamParser {
 public:
  explicit StreamParser(Profile profile);

  // Origin stamped on segments whose open literal is consumed after this
  // call; orchestrators switch it around environment insertions.
  void set_origin(Origin origin) { origin_ = origin; }

  void feed(std::string_view chunk);

  // Finalizes the stream and returns the trajectory. status: ParseError on
  // fatal diagnostics, else Answered when the last segment is an Answer,
  // else InProgress. Counters are derived from the parsed segments.
  Trajectory finish();

  bool has_fatal() const { return fatal_; }

  // True while an open tag's body is still buffering; environment text must
  // not be inserted in this state.
  bool in_body() const { return in_body_; }

  const std::vector<ParseDiagnostic>& diagnostics() const { return diags_; }

  // Completed segments so far (valid before finish()).
  const std::vector<Segment>& segments() const { return traj_.segments; }

 private:
  void pump(bool at_end);
  void flush_gap();

  Profile profile_;
  Origin origin_ = Origin::Model;
  Trajectory traj_;
  std::string buf_;      // unconsumed suffix of the stream
  size_t base_ = 0;      // stream offset of buf_[0]
  std::string gap_;      // pending top-level text
  bool in_body_ = false;
  TagKind open_kind_ = TagKind::Think;
  Origin open_origin_ = Origin::Model;
  size_t open_start_ = 0;   // stream offset of the open literal
  std::string body_;
  bool fatal_ = false;
  bool finished_ = false;
  std::vector<ParseDiagnostic> diags_;
};

// One-shot convenience over StreamParser.
Trajectory parse_text(std::string_view text, Profile profile,
                      std::vector<ParseDiagnostic>* diags = nullptr);

}  // namespace coa
