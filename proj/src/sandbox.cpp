#include "sandbox.h"

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/resource.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <mutex>

namespace coa {

namespace {

// Writes to a pipe whose read end died must return EPIPE, not kill us.
void ignore_sigpipe_once() {
  static std::once_flag flag;
  std::call_once(flag, [] { ::signal(SIGPIPE, SIG_IGN); });
}

void set_nonblocking(int fd) {
  int flags = fcntl(fd, F_GETFL, 0);
  if (flags >= 0) fcntl(fd, F_SETFL, flags | O_NONBLOCK);
}

void close_fd(int& fd) {
  if (fd >= 0) {
    ::close(fd);
    fd = -1;
  }
}

void set_limit(int resource, rlim_t soft, rlim_t hard) {
  rlimit lim{soft, hard};
  setrlimit(resource, &lim);
}

}  // namespace

PythonSandbox::PythonSandbox(SandboxLimits limits) : limits_(std::move(limits)) {}

CodeExecResult PythonSandbox::run(const std::string& code,
                                  const std::string& stdin_data) const {
  ignore_sigpipe_once();
  CodeExecResult res;

  char dir_template[] = "/tmp/pysbx-XXXXXX";
  char* dir = mkdtemp(dir_template);
  if (!dir) {
    res.error = "sandbox temp dir unavailable";
    return res;
  }
  std::string workdir = dir;
  {
    std::ofstream f(workdir + "/main.py", std::ios::binary);
    f << code;
    f.flush();
    if (!f) {
      res.error = "sandbox could not stage program";
      std::error_code ec;
      std::filesystem::remove_all(workdir, ec);
      return res;
    }
  }

  int in_fds[2] = {-1, -1}, out_fds[2] = {-1, -1}, err_fds[2] = {-1, -1};
  if (pipe(in_fds) != 0 || pipe(out_fds) != 0 || pipe(err_fds) != 0) {
    res.error = "sandbox pipe setup failed";
    for (int* p : {in_fds, out_fds, err_fds}) {
      close_fd(p[0]);
      close_fd(p[1]);
    }
    std::error_code ec;
    std::filesystem::remove_all(workdir, ec);
    return res;
  }

  pid_t pid = fork();
  if (pid < 0) {
    res.error = "sandbox fork failed";
    for (int* p : {in_fds, out_fds, err_fds}) {
      close_fd(p[0]);
      close_fd(p[1]);
    }
    std::error_code ec;
    std::filesystem::remove_all(workdir, ec);
    return res;
  }

  if (pid == 0) {
    setpgid(0, 0);
    dup2(in_fds[0], STDIN_FILENO);
    dup2(out_fds[1], STDOUT_FILENO);
    dup2(err_fds[1], STDERR_FILENO);
    for (int* p : {in_fds, out_fds, err_fds}) {
      ::close(p[0]);
      ::close(p[1]);
    }
    if (chdir(workdir.c_str()) != 0) _exit(126);
    set_limit(RLIMIT_CPU, static_cast<rlim_t>(limits_.cpu_seconds),
              static_cast<rlim_t>(limits_.cpu_seconds) + 1);
    set_limit(RLIMIT_AS, limits_.memory_bytes, limits_.memory_bytes);
    set_limit(RLIMIT_FSIZE, limits_.file_size_bytes, limits_.file_size_bytes);
    set_limit(RLIMIT_CORE, 0, 0);
    execlp(limits_.interpreter.c_str(), limits_.interpreter.c_str(), "main.py",
           static_cast<char*>(nullptr));
    _exit(127);
  }

  setpgid(pid, pid);
  int stdin_fd = in_fds[1];
  int stdout_fd = out_fds[0];
  int stderr_fd = err_fds[0];
  close_fd(in_fds[0]);
  close_fd(out_fds[1]);
  close_fd(err_fds[1]);
  set_nonblocking(stdin_fd);
  set_nonblocking(stdout_fd);
  set_nonblocking(stderr_fd);
  if (stdin_data.empty()) close_fd(stdin_fd);

  int wall = limits_.wall_seconds > 0 ? limits_.wall_seconds
                                      : limits_.cpu_seconds + 5;
  auto deadline = std::chrono::steady_clock::now() + std::chrono::seconds(wall);
  // Once the group is killed the pipes must still drain to EOF; this bounds
  // the drain in case something keeps the write ends alive.
  auto hard_stop = deadline + std::chrono::seconds(5);
  size_t written = 0;
  bool killed = false;

  auto kill_group = [&] {
    if (!killed) {
      ::kill(-pid, SIGKILL);
      ::kill(pid, SIGKILL);
      killed = true;
    }
  };

  char buf[65536];
  while (stdout_fd >= 0 || stderr_fd >= 0) {
    auto now = std::chrono::steady_clock::now();
    if (!killed && now >= deadline) {
      res.timed_out = true;
      kill_group();
    }
    if (killed && now >= hard_stop) break;

    pollfd fds[3];
    nfds_t n = 0;
    int stdin_slot = -1, stdout_slot = -1, stderr_slot = -1;
    if (stdin_fd >= 0) {
      stdin_slot = static_cast<int>(n);
      fds[n++] = {stdin_fd, POLLOUT, 0};
    }
    if (stdout_fd >= 0) {
      stdout_slot = static_cast<int>(n);
      fds[n++] = {stdout_fd, POLLIN, 0};
    }
    if (stderr_fd >= 0) {
      stderr_slot = static_cast<int>(n);
      fds[n++] = {stderr_fd, POLLIN, 0};
    }
    int rc = poll(fds, n, 100);
    if (rc < 0) {
      if (errno == EINTR) continue;
      break;
    }
    if (rc == 0) continue;

    if (stdin_slot >= 0 && (fds[stdin_slot].revents & (POLLOUT | POLLERR | POLLHUP))) {
      ssize_t w = ::write(stdin_fd, stdin_data.data() + written,
                          stdin_data.size() - written);
      if (w > 0) written += static_cast<size_t>(w);
      if ((w < 0 && errno != EAGAIN && errno != EINTR) ||
          written >= stdin_data.size())
        close_fd(stdin_fd);
    }
    for (auto [slot, fd_ptr, sink] :
         {std::tuple{stdout_slot, &stdout_fd, &res.stdout_text},
          std::tuple{stderr_slot, &stderr_fd, &res.stderr_text}}) {
      if (slot < 0 || !(fds[slot].revents & (POLLIN | POLLERR | POLLHUP)))
        continue;
      ssize_t r = ::read(*fd_ptr, buf, sizeof buf);
      if (r > 0) {
        sink->append(buf, static_cast<size_t>(r));
        if (sink->size() > limits_.output_cap_bytes) {
          sink->resize(limits_.output_cap_bytes);
          res.output_truncated = true;
          kill_group();
        }
      } else if (r == 0 || (r < 0 && errno != EAGAIN && errno != EINTR)) {
        close_fd(*fd_ptr);
      }
    }
  }
  close_fd(stdin_fd);
  close_fd(stdout_fd);
  close_fd(stderr_fd);

  if (killed) {
    // The group is dead; reap without blocking forever.
    for (int i = 0; i < 50; ++i) {
      if (waitpid(pid, nullptr, WNOHANG) == pid) break;
      usleep(100 * 1000);
    }
    res.status = 128 + SIGKILL;
  } else {
    int st = 0;
    waitpid(pid, &st, 0);
    if (WIFEXITED(st)) {
      res.status = WEXITSTATUS(st);
    } else if (WIFSIGNALED(st)) {
      res.status = 128 + WTERMSIG(st);
      if (WTERMSIG(st) == SIGXCPU || WTERMSIG(st) == SIGKILL)
        res.timed_out = true;
    }
  }
  if (res.timed_out && res.status == 0) res.status = 128 + SIGKILL;
  if (res.status == 127 && res.stdout_text.empty() && res.stderr_text.empty())
    res.error = "sandbox interpreter not found: " + limits_.interpreter;

  std::error_code ec;
  std::filesystem::remove_all(workdir, ec);
  return res;
}

}  // namespace coa
