#pragma once

#include <algorithm>
#include <cctype>
#include <cerrno>
#include <csignal>
#include <cstring>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <fcntl.h>
#include <netdb.h>
#include <sys/socket.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <nlohmann/json.hpp>

#include "pcgrpo/error.hpp"
#include "pcgrpo/io.hpp"
#include "pcgrpo/numeric.hpp"

namespace pcgrpo::rac {

struct RolloutRecord {
  std::string id;
  std::string question;
  std::string rationale;
  std::string answer;
  long step = 0;
  friend bool operator==(const RolloutRecord&, const RolloutRecord&) = default;
};

struct JudgeVerdict {
  int consistent = 0;
  std::string judge_id;
};

inline nlohmann::json record_to_json(const RolloutRecord& r) {
  return {{"id", r.id}, {"question", r.question}, {"rationale", r.rationale},
          {"answer", r.answer}, {"step", r.step}};
}

inline RolloutRecord record_from_json(const nlohmann::json& j) {
  try {
    RolloutRecord r{j.at("id").get<std::string>(), j.value("question", ""),
                    j.value("rationale", ""), j.at("answer").get<std::string>(),
                    j.at("step").get<long>()};
    if (r.answer.empty()) throw ValidationError("rollout record: empty answer");
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("rollout record: ") + e.what());
  }
}

inline std::string records_to_jsonl(std::span<const RolloutRecord> records) {
  std::string out;
  for (const auto& r : records) out += record_to_json(r).dump() + "\n";
  return out;
}

inline std::vector<RolloutRecord> records_from_jsonl(std::string_view text) {
  std::vector<RolloutRecord> out;
  for (const auto& line : split_lines(text)) {
    if (line.empty()) continue;
    try {
      out.push_back(record_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(std::string("rollout record: ") + e.what());
    }
  }
  return out;
}

namespace detail {

inline std::string normalize(std::string_view s) {
  std::string out;
  bool pending_space = false;
  for (unsigned char c : s) {
    if (std::isspace(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out += ' ';
    pending_space = false;
    out += static_cast<char>(std::tolower(c));
  }
  return out;
}

}  // namespace detail

inline constexpr std::string_view kHeuristicJudgeId = "heuristic-conclusion";

/// 1 iff the rationale's last non-empty line is "conclusion: X" and X equals
/// the answer after whitespace/case normalisation.
inline JudgeVerdict judge_heuristic(const RolloutRecord& record) {
  const auto lines = split_lines(record.rationale);
  auto last = std::find_if(lines.rbegin(), lines.rend(),
                           [](const std::string& l) { return !detail::normalize(l).empty(); });
  if (last == lines.rend()) return {0, std::string(kHeuristicJudgeId)};
  const std::string line = detail::normalize(*last);
  constexpr std::string_view prefix = "conclusion:";
  if (line.rfind(prefix, 0) != 0) return {0, std::string(kHeuristicJudgeId)};
  const std::string claimed = detail::normalize(std::string_view(line).substr(prefix.size()));
  return {claimed == detail::normalize(record.answer) ? 1 : 0, std::string(kHeuristicJudgeId)};
}

// ---------------------------------------------------------------------------
// External judge: one request line out, one reply line back.

/// Line channel to a judge process. Endpoints:
///   "tcp:HOST:PORT"  connect to a listening socket
///   "exec:COMMAND"   spawn COMMAND under /bin/sh, talk over its stdin/stdout
class JudgeChannel {
 public:
  explicit JudgeChannel(const std::string& endpoint) : endpoint_(endpoint) {
    if (endpoint.rfind("tcp:", 0) == 0) {
      open_tcp(endpoint.substr(4));
    } else if (endpoint.rfind("exec:", 0) == 0) {
      open_exec(endpoint.substr(5));
    } else {
      throw ValidationError("judge endpoint must start with 'tcp:' or 'exec:'");
    }
  }
  JudgeChannel(const JudgeChannel&) = delete;
  JudgeChannel& operator=(const JudgeChannel&) = delete;
  ~JudgeChannel() { close_all(); }

  const std::string& endpoint() const { return endpoint_; }

  void send_line(std::string_view line) {
    std::string buf(line);
    buf += '\n';
    std::size_t off = 0;
    while (off < buf.size()) {
      const ssize_t n = write_fd_ == sock_fd_ && sock_fd_ >= 0
                            ? ::send(write_fd_, buf.data() + off, buf.size() - off, MSG_NOSIGNAL)
                            : ::write(write_fd_, buf.data() + off, buf.size() - off);
      if (n < 0) {
        if (errno == EINTR) continue;
        throw TransportError("judge: write failed: " + std::string(std::strerror(errno)));
      }
      off += static_cast<std::size_t>(n);
    }
  }

  std::string recv_line() {
    for (;;) {
      const auto nl = pending_.find('\n');
      if (nl != std::string::npos) {
        std::string line = pending_.substr(0, nl);
        pending_.erase(0, nl + 1);
        if (!line.empty() && line.back() == '\r') line.pop_back();
        return line;
      }
      char chunk[4096];
      const ssize_t n = ::read(read_fd_, chunk, sizeof chunk);
      if (n < 0) {
        if (errno == EINTR) continue;
        throw TransportError("judge: read failed: " + std::string(std::strerror(errno)));
      }
      if (n == 0) throw TransportError("judge: connection closed before a reply");
      pending_.append(chunk, static_cast<std::size_t>(n));
    }
  }

 private:
  void open_tcp(const std::string& hostport) {
    const auto colon = hostport.rfind(':');
    if (colon == std::string::npos) throw ValidationError("judge: tcp endpoint needs HOST:PORT");
    const std::string host = hostport.substr(0, colon);
    const std::string port = hostport.substr(colon + 1);
    addrinfo hints{};
    hints.ai_family = AF_UNSPEC;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo* res = nullptr;
    if (::getaddrinfo(host.c_str(), port.c_str(), &hints, &res) != 0 || !res)
      throw TransportError("judge: cannot resolve " + hostport);
    int fd = -1;
    for (addrinfo* a = res; a; a = a->ai_next) {
      fd = ::socket(a->ai_family, a->ai_socktype | SOCK_CLOEXEC, a->ai_protocol);
      if (fd < 0) continue;
      if (::connect(fd, a->ai_addr, a->ai_addrlen) == 0) break;
      ::close(fd);
      fd = -1;
    }
    ::freeaddrinfo(res);
    if (fd < 0) throw TransportError("judge: cannot connect to " + hostport);
    sock_fd_ = read_fd_ = write_fd_ = fd;
  }

  void open_exec(const std::string& command) {
    int to_child[2], from_child[2];
    if (::pipe2(to_child, O_CLOEXEC) != 0) throw TransportError("judge: pipe failed");
    if (::pipe2(from_child, O_CLOEXEC) != 0) {
      ::close(to_child[0]);
      ::close(to_child[1]);
      throw TransportError("judge: pipe failed");
    }
    const pid_t pid = ::fork();
    if (pid < 0) throw TransportError("judge: fork failed");
    if (pid == 0) {
      ::dup2(to_child[0], STDIN_FILENO);
      ::dup2(from_child[1], STDOUT_FILENO);
      ::close(to_child[0]);
      ::close(to_child[1]);
      ::close(from_child[0]);
      ::close(from_child[1]);
      ::execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
      ::_exit(127);
    }
    ::close(to_child[0]);
    ::close(from_child[1]);
    child_ = pid;
    write_fd_ = to_child[1];
    read_fd_ = from_child[0];
    // A judge that exits early must surface as TransportError, not SIGPIPE.
    std::signal(SIGPIPE, SIG_IGN);
  }

  void close_all() {
    if (sock_fd_ >= 0) {
      ::close(sock_fd_);
    } else {
      if (write_fd_ >= 0) ::close(write_fd_);
      if (read_fd_ >= 0) ::close(read_fd_);
    }
    if (child_ > 0) {
      int status = 0;
      ::waitpid(child_, &status, 0);
    }
    sock_fd_ = read_fd_ = write_fd_ = -1;
    child_ = -1;
  }

  std::string endpoint_;
  int sock_fd_ = -1;
  int read_fd_ = -1;
  int write_fd_ = -1;
  pid_t child_ = -1;
  std::string pending_;
};

/// Substitutes {question}, {rationale}, {answer}; every placeholder must
/// appear in the template.
inline std::string fill_template(std::string_view tmpl, const RolloutRecord& record) {
  const std::pair<std::string_view, const std::string*> slots[] = {
      {"{question}", &record.question}, {"{rationale}", &record.rationale}, {"{answer}", &record.answer}};
  for (const auto& [ph, _] : slots)
    if (tmpl.find(ph) == std::string_view::npos)
      throw ValidationError("judge template lacks placeholder " + std::string(ph));
  std::string out;
  std::size_t i = 0;
  while (i < tmpl.size()) {
    bool matched = false;
    for (const auto& [ph, value] : slots) {
      if (tmpl.compare(i, ph.size(), ph) == 0) {
        out += *value;
        i += ph.size();
        matched = true;
        break;
      }
    }
    if (!matched) out += tmpl[i++];
  }
  return out;
}

/// Escapes backslash and newline so a request always fits on one line.
inline std::string escape_line(std::string_view s) {
  std::string out;
  for (char c : s) {
    if (c == '\\') out += "\\\\";
    else if (c == '\n') out += "\\n";
    else if (c == '\r') out += "\\r";
    else out += c;
  }
  return out;
}

/// The reply's first whitespace-separated token must be exactly 0 or 1.
inline int parse_verdict(std::string_view reply) {
  std::size_t b = 0;
  while (b < reply.size() && std::isspace(static_cast<unsigned char>(reply[b]))) ++b;
  std::size_t e = b;
  while (e < reply.size() && !std::isspace(static_cast<unsigned char>(reply[e]))) ++e;
  const std::string_view tok = reply.substr(b, e - b);
  if (tok == "1") return 1;
  if (tok == "0") return 0;
  throw JudgeProtocolError("judge: unparseable verdict '" + std::string(reply) + "'");
}

inline JudgeVerdict judge_external(const RolloutRecord& record, JudgeChannel& channel,
                                   std::string_view prompt_template) {
  channel.send_line(escape_line(fill_template(prompt_template, record)));
  return {parse_verdict(channel.recv_line()), channel.endpoint()};
}

inline JudgeVerdict judge_external(const RolloutRecord& record, const std::string& endpoint,
                                   std::string_view prompt_template) {
  JudgeChannel channel(endpoint);
  return judge_external(record, channel, prompt_template);
}

// ---------------------------------------------------------------------------
// Moving averages

/// Trailing mean over min(window, points so far); warm-up averages whatever
/// is available so the series starts at the first point. Missing values
/// (nullopt) are skipped; a window with no values yields nullopt.
inline std::vector<std::optional<double>> moving_average(std::span<const std::optional<double>> xs,
                                                         std::size_t window) {
  if (window < 1) throw ValidationError("moving average: window must be >= 1");
  std::vector<std::optional<double>> out(xs.size());
  std::vector<double> buf;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const std::size_t lo = i + 1 >= window ? i + 1 - window : 0;
    buf.clear();
    for (std::size_t j = lo; j <= i; ++j)
      if (xs[j]) buf.push_back(*xs[j]);
    if (!buf.empty()) out[i] = mean(buf);
  }
  return out;
}

inline std::vector<double> moving_average(std::span<const double> xs, std::size_t window) {
  std::vector<std::optional<double>> in(xs.begin(), xs.end());
  const auto tmp = moving_average(std::span<const std::optional<double>>(in), window);
  std::vector<double> out;
  out.reserve(tmp.size());
  for (const auto& v : tmp) out.push_back(*v);
  return out;
}

struct StepVerdict {
  long step = 0;
  int consistent = 0;
};

/// Trailing-window mean over verdicts (input in step order), reported once
/// per step at that step's last verdict.
inline std::vector<std::pair<long, double>> rac_series(std::span<const StepVerdict> verdicts,
                                                       std::size_t window) {
  if (window < 1) throw ValidationError("rac_series: window must be >= 1");
  std::vector<double> raw;
  raw.reserve(verdicts.size());
  for (std::size_t i = 0; i < verdicts.size(); ++i) {
    if (i && verdicts[i].step < verdicts[i - 1].step)
      throw ValidationError("rac_series: verdicts must be in step order");
    raw.push_back(verdicts[i].consistent);
  }
  const auto avg = moving_average(std::span<const double>(raw), window);
  std::vector<std::pair<long, double>> out;
  for (std::size_t i = 0; i < verdicts.size(); ++i)
    if (i + 1 == verdicts.size() || verdicts[i + 1].step != verdicts[i].step)
      out.emplace_back(verdicts[i].step, avg[i]);
  return out;
}

}  // namespace pcgrpo::rac
