#pragma once

#include <fcntl.h>
#include <signal.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstring>
#include <optional>
#include <string>
#include <thread>

#include "biascope/augmentation.hpp"
#include "biascope/detection.hpp"
#include "biascope/error.hpp"
#include "biascope/json_io.hpp"

namespace biascope {

/// Line-oriented child process running `/bin/sh -c command`, with its stdin
/// and stdout attached to pipes. stderr is inherited.
class LineProcess {
 public:
  explicit LineProcess(std::string command) : command_(std::move(command)) {}
  LineProcess(const LineProcess&) = delete;
  LineProcess& operator=(const LineProcess&) = delete;
  ~LineProcess() { stop(); }

  const std::string& command() const { return command_; }
  bool running() const { return pid_ > 0; }

  /// Throws Error(code) when the pipes or the fork fail.
  void start(ErrorCode code) {
    if (running()) return;
    ::signal(SIGPIPE, SIG_IGN);
    int in_pipe[2], out_pipe[2];
    if (::pipe(in_pipe) != 0) throw Error(code, std::string("pipe: ") + std::strerror(errno));
    if (::pipe(out_pipe) != 0) {
      ::close(in_pipe[0]);
      ::close(in_pipe[1]);
      throw Error(code, std::string("pipe: ") + std::strerror(errno));
    }
    const pid_t pid = ::fork();
    if (pid < 0) throw Error(code, std::string("fork: ") + std::strerror(errno));
    if (pid == 0) {
      ::dup2(in_pipe[0], STDIN_FILENO);
      ::dup2(out_pipe[1], STDOUT_FILENO);
      ::close(in_pipe[0]);
      ::close(in_pipe[1]);
      ::close(out_pipe[0]);
      ::close(out_pipe[1]);
      ::execl("/bin/sh", "sh", "-c", command_.c_str(), static_cast<char*>(nullptr));
      ::_exit(127);
    }
    ::close(in_pipe[0]);
    ::close(out_pipe[1]);
    ::fcntl(in_pipe[1], F_SETFD, FD_CLOEXEC);
    ::fcntl(out_pipe[0], F_SETFD, FD_CLOEXEC);
    pid_ = pid;
    to_child_ = in_pipe[1];
    from_child_ = out_pipe[0];
    buffer_.clear();
  }

  bool write_line(const std::string& line) {
    std::string data = line + "\n";
    const char* p = data.data();
    std::size_t left = data.size();
    while (left > 0) {
      const ssize_t n = ::write(to_child_, p, left);
      if (n < 0) {
        if (errno == EINTR) continue;
        return false;
      }
      p += n;
      left -= static_cast<std::size_t>(n);
    }
    return true;
  }

  /// Next line from the child's stdout, or nullopt at end of stream.
  std::optional<std::string> read_line() {
    for (;;) {
      const auto nl = buffer_.find('\n');
      if (nl != std::string::npos) {
        std::string line = buffer_.substr(0, nl);
        buffer_.erase(0, nl + 1);
        return line;
      }
      char chunk[4096];
      const ssize_t n = ::read(from_child_, chunk, sizeof chunk);
      if (n < 0 && errno == EINTR) continue;
      if (n <= 0) {
        if (buffer_.empty()) return std::nullopt;
        std::string line = std::move(buffer_);
        buffer_.clear();
        return line;
      }
      buffer_.append(chunk, static_cast<std::size_t>(n));
    }
  }

  /// Closes the pipes and reaps the child, returning its exit status when
  /// it exited normally.
  std::optional<int> stop() {
    if (!running()) return std::nullopt;
    ::close(to_child_);
    ::close(from_child_);
    int status = 0;
    pid_t r = 0;
    for (int i = 0; i < 200 && (r = ::waitpid(pid_, &status, WNOHANG)) == 0; ++i) {
      std::this_thread::sleep_for(std::chrono::milliseconds(10));
    }
    if (r == 0) {
      ::kill(pid_, SIGKILL);
      ::waitpid(pid_, &status, 0);
    }
    pid_ = -1;
    if (WIFEXITED(status)) return WEXITSTATUS(status);
    return std::nullopt;
  }

 private:
  std::string command_;
  pid_t pid_ = -1;
  int to_child_ = -1;
  int from_child_ = -1;
  std::string buffer_;
};

namespace detail {

inline std::string exchange(LineProcess& proc, const Json& request, ErrorCode code) {
  proc.start(code);
  if (!proc.write_line(request.dump())) {
    const auto status = proc.stop();
    throw Error(code, "'" + proc.command() + "' closed its input" +
                          (status ? " (exit status " + std::to_string(*status) + ")" : std::string()));
  }
  auto line = proc.read_line();
  if (!line) {
    const auto status = proc.stop();
    std::string msg = "'" + proc.command() + "' produced no response";
    if (status) msg += " (exit status " + std::to_string(*status) + (*status == 127 ? ", command not found" : "") + ")";
    throw Error(code, msg);
  }
  return *line;
}

}  // namespace detail

/// Chat transport: {"system","user"} per request line, {"text"} per reply.
class SubprocessChatClient final : public ChatClient {
 public:
  explicit SubprocessChatClient(std::string command) : proc_(std::move(command)) {}

  std::string send(std::string_view system, std::string_view user) override {
    const std::string line = detail::exchange(proc_, Json{{"system", system}, {"user", user}}, ErrorCode::ClientError);
    const Json reply = Json::parse(line, nullptr, false);
    if (reply.is_discarded() || !reply.is_object()) {
      throw Error(ErrorCode::ClientError, "chat transport returned a non-JSON line");
    }
    if (reply.contains("error")) throw Error(ErrorCode::ClientError, "chat transport: " + reply["error"].dump());
    if (!reply.contains("text") || !reply["text"].is_string()) {
      throw Error(ErrorCode::ClientError, "chat reply lacks a \"text\" string");
    }
    return reply["text"].get<std::string>();
  }

 private:
  LineProcess proc_;
};

/// Generator transport: {"prompt","seed"} per request line,
/// {"embedding","artifact_ref"} per reply.
class SubprocessGenerator final : public Generator {
 public:
  explicit SubprocessGenerator(std::string command) : proc_(std::move(command)) {}

  /// Launches the command now so a missing binary is reported early.
  void start() { proc_.start(ErrorCode::GeneratorError); }

  GenResult generate(const GenRequest& request) override {
    const std::string line =
        detail::exchange(proc_, Json{{"prompt", request.prompt}, {"seed", request.seed}}, ErrorCode::GeneratorError);
    const Json reply = Json::parse(line, nullptr, false);
    if (reply.is_discarded() || !reply.is_object()) {
      throw Error(ErrorCode::GeneratorError, "generator returned a non-JSON line");
    }
    if (reply.contains("error")) throw Error(ErrorCode::GeneratorError, "generator: " + reply["error"].dump());
    GenResult out;
    out.request = request;
    try {
      out.embedding = io::require_floats(reply, "embedding", "generator reply");
    } catch (const Error& e) {
      throw Error(ErrorCode::GeneratorError, e.what());
    }
    if (reply.contains("artifact_ref") && reply["artifact_ref"].is_string()) {
      out.artifact_ref = reply["artifact_ref"].get<std::string>();
    }
    return out;
  }

 private:
  LineProcess proc_;
};

}  // namespace biascope
