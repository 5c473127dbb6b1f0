#pragma once

#include <cstdint>
#include <string>

namespace coa {

struct SandboxLimits {
  int cpu_seconds = 5;
  std::uint64_t memory_bytes = 5ull * 1024 * 1024 * 1024;
  int wall_seconds = 0;  // 0 = cpu_seconds + 5
  std::uint64_t file_size_bytes = 8ull * 1024 * 1024;
  std::uint64_t output_cap_bytes = 4ull * 1024 * 1024;
  std::string interpreter = "python3";
};

struct CodeExecResult {
  int status = -1;  // exit code, or 128 + signal when killed
  std::string stdout_text;
  std::string stderr_text;
  bool timed_out = false;
  bool output_truncated = false;
  std::string error;  // non-empty when the sandbox itself failed to run
};

// Runs one program per call in a throwaway working directory under kernel
// resource caps (CPU seconds, address space, file size, no core dumps).
// Partial stdout/stderr is preserved when the program is killed.
class PythonSandbox {
 public:
  explicit PythonSandbox(SandboxLimits limits = {});

  const SandboxLimits& limits() const { return limits_; }

  CodeExecResult run(const std::string& code, const std::string& stdin_data) const;

 private:
  SandboxLimits limits_;
};

}  // namespace coa
