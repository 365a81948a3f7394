#include "lanechange/dil_service.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <fmt/format.h>

#include "lanechange/json_util.hpp"
#include "lanechange/rng.hpp"

namespace lanechange::dil {
namespace {

using Clock = std::chrono::steady_clock;

constexpr char kAttributionRule[] =
    "a lane_change received between ticks k and k+1 is attributed to tick k+1";

std::int64_t wall_ms() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(
             std::chrono::system_clock::now().time_since_epoch())
      .count();
}

nlohmann::json relative(const sim::VehicleState& v, double ego_x) {
  return {{"x", v.x - ego_x}, {"v", v.v}};
}

bool valid_driver_id(const std::string& id) {
  if (id.empty() || id.size() > 64) return false;
  for (char c : id) {
    const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') ||
                    (c >= '0' && c <= '9') || c == '_' || c == '-';
    if (!ok) return false;
  }
  return true;
}

struct StartRequest {
  std::string driver_id;
  std::uint64_t seed = 0;
  int episodes = 0;
};

StartRequest parse_start(const nlohmann::json& j, int max_episodes) {
  reject_unknown_keys(j, {"type", "driver_id", "seed", "episodes"}, "start");
  StartRequest r;
  const auto& id = j.at("driver_id");
  if (!id.is_string() || !valid_driver_id(id.get<std::string>())) {
    throw std::invalid_argument(
        "start: driver_id must be 1-64 characters of [A-Za-z0-9_-]");
  }
  r.driver_id = id.get<std::string>();
  const auto& seed = j.at("seed");
  if (!seed.is_number_unsigned() && !(seed.is_number_integer() && seed.get<std::int64_t>() >= 0)) {
    throw std::invalid_argument("start: seed must be a non-negative integer");
  }
  r.seed = seed.get<std::uint64_t>();
  const auto& eps = j.at("episodes");
  if (!eps.is_number_integer() || eps.get<std::int64_t>() < 1 ||
      eps.get<std::int64_t>() > max_episodes) {
    throw std::invalid_argument(
        fmt::format("start: episodes must be an integer in [1, {}]", max_episodes));
  }
  r.episodes = eps.get<int>();
  return r;
}

// Parsed inbound message type; throws on anything malformed.
std::string message_type(const std::string& line) {
  const auto j = nlohmann::json::parse(line);
  if (!j.is_object() || !j.contains("type") || !j["type"].is_string()) {
    throw std::invalid_argument("message without a string 'type'");
  }
  return j["type"].get<std::string>();
}

class SessionLog {
 public:
  void open(const std::string& dir, const std::string& driver_id,
            const std::string& session_id) {
    std::filesystem::create_directories(dir);
    base_ = (std::filesystem::path(dir) / (driver_id + "_" + session_id))
                .string();
    out_.open(base_ + ".jsonl", std::ios::trunc);
    if (!out_) throw std::runtime_error("cannot open session log " + base_);
  }
  bool is_open() const { return out_.is_open(); }
  std::string path() const { return base_ + ".jsonl"; }

  void append(const indicators::DecisionRecord& r) {
    out_ << indicators::record_to_json(r).dump() << '\n';
    out_.flush();
  }

  void finish(const SessionResult& result) {
    if (!is_open()) return;
    out_.close();
    auto summary = summary_payload(result);
    summary.erase("type");
    summary["attribution"] = kAttributionRule;
    std::ofstream side(base_ + ".summary.json", std::ios::trunc);
    side << summary.dump(2) << '\n';
  }

 private:
  std::string base_;
  std::ofstream out_;
};

}  // namespace

std::string termination_label(const EpisodeSummary& e) {
  return e.stopped ? "stopped" : sim::to_string(e.termination);
}

LineChannel::LineChannel(int fd) : fd_(fd) {}

LineChannel::~LineChannel() {
  if (fd_ >= 0) ::close(fd_);
}

void LineChannel::close_gracefully(std::chrono::milliseconds linger) {
  if (fd_ < 0) return;
  // Closing with unread input makes the kernel send RST, which can discard
  // data the peer has not read yet. Half-close and drain first.
  ::shutdown(fd_, SHUT_WR);
  const auto deadline = Clock::now() + linger;
  char chunk[4096];
  while (Clock::now() < deadline) {
    pollfd p{fd_, POLLIN, 0};
    const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(
        deadline - Clock::now());
    if (::poll(&p, 1, static_cast<int>(left.count()) + 1) <= 0) break;
    if (::recv(fd_, chunk, sizeof(chunk), 0) <= 0) break;
  }
  ::close(fd_);
  fd_ = -1;
  closed_ = true;
}

bool LineChannel::send(const nlohmann::json& message) {
  if (closed_) return false;
  const std::string line = message.dump() + "\n";
  std::size_t sent = 0;
  while (sent < line.size()) {
    const ssize_t n =
        ::send(fd_, line.data() + sent, line.size() - sent, MSG_NOSIGNAL);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) {
      closed_ = true;
      return false;
    }
    sent += static_cast<std::size_t>(n);
  }
  return true;
}

std::optional<std::string> LineChannel::read_line(
    std::chrono::microseconds timeout) {
  const auto deadline = Clock::now() + timeout;
  while (true) {
    if (auto pos = buffer_.find('\n'); pos != std::string::npos) {
      std::string line = buffer_.substr(0, pos);
      buffer_.erase(0, pos + 1);
      if (!line.empty() && line.back() == '\r') line.pop_back();
      return line;
    }
    if (closed_) return std::nullopt;
    const auto left = std::max<std::chrono::nanoseconds::rep>(
        0, std::chrono::duration_cast<std::chrono::nanoseconds>(
               deadline - Clock::now()).count());
    pollfd p{fd_, POLLIN, 0};
    const timespec ts{static_cast<time_t>(left / 1000000000),
                      static_cast<long>(left % 1000000000)};
    const int ready = ::ppoll(&p, 1, &ts, nullptr);
    if (ready < 0 && errno == EINTR) continue;
    if (ready <= 0) return std::nullopt;
    char chunk[4096];
    const ssize_t n = ::recv(fd_, chunk, sizeof(chunk), 0);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) {
      closed_ = true;
      return std::nullopt;
    }
    buffer_.append(chunk, static_cast<std::size_t>(n));
  }
}

int connect_tcp(const std::string& host, int port) {
  const std::string addr = host == "localhost" ? "127.0.0.1" : host;
  sockaddr_in sa{};
  sa.sin_family = AF_INET;
  sa.sin_port = htons(static_cast<std::uint16_t>(port));
  if (::inet_pton(AF_INET, addr.c_str(), &sa.sin_addr) != 1) {
    throw std::invalid_argument("connect_tcp: bad address " + host);
  }
  const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd < 0) throw std::runtime_error("socket: " + std::string(std::strerror(errno)));
  if (::connect(fd, reinterpret_cast<sockaddr*>(&sa), sizeof(sa)) != 0) {
    const std::string err = std::strerror(errno);
    ::close(fd);
    throw std::runtime_error(fmt::format("connect {}:{}: {}", host, port, err));
  }
  return fd;
}

void ServiceConfig::validate() const {
  scenario.validate();
  if (!(tick_rate_hz > 0.0) || !std::isfinite(tick_rate_hz)) {
    throw ConfigError("serve: tick_rate_hz must be positive");
  }
  if (max_episodes < 1) throw ConfigError("serve: max_episodes must be >= 1");
}

void to_json(nlohmann::json& j, const ServiceConfig& c) {
  j = {{"scenario", c.scenario},
       {"tick_rate_hz", c.tick_rate_hz},
       {"log_dir", c.log_dir},
       {"max_episodes", c.max_episodes}};
}

void from_json(const nlohmann::json& j, ServiceConfig& c) {
  reject_unknown_keys(j, {"scenario", "tick_rate_hz", "log_dir", "max_episodes"},
                      "serve config");
  c = ServiceConfig{};
  read_if_present(j, "scenario", c.scenario);
  read_if_present(j, "tick_rate_hz", c.tick_rate_hz);
  read_if_present(j, "log_dir", c.log_dir);
  read_if_present(j, "max_episodes", c.max_episodes);
  c.validate();
}

std::string to_string(SessionStatus s) {
  switch (s) {
    case SessionStatus::kRunning:
      return "running";
    case SessionStatus::kCompleted:
      return "completed";
    case SessionStatus::kAborted:
      return "aborted";
  }
  return "unknown";
}

nlohmann::json tick_payload(const sim::ScenarioState& state, int episode,
                            const sim::ScenarioConfig& config) {
  const double ex = state.ego.x;
  const auto ind = indicators::compute_indicators(state, config);
  nlohmann::json j = {{"type", "tick"},
                      {"t", state.t},
                      {"episode", episode},
                      {"ego", relative(state.ego, ex)},
                      {"f", relative(state.front, ex)}};
  j["nf"] = state.target_front_present ? relative(state.target_front, ex)
                                       : nlohmann::json(nullptr);
  j["nb"] = relative(state.target_behind, ex);
  j["indicators"] = {{"tf", ind.t_f}, {"tnf", ind.t_nf}, {"dvnb", ind.dv_nb}};
  return j;
}

nlohmann::json summary_payload(const SessionResult& r) {
  nlohmann::json episodes = nlohmann::json::array();
  for (const auto& e : r.episodes) {
    nlohmann::json item = {{"episode", e.episode},
                           {"termination", termination_label(e)},
                           {"ticks", e.ticks}};
    item["decision_t"] = e.decision_t ? nlohmann::json(*e.decision_t)
                                      : nlohmann::json(nullptr);
    episodes.push_back(std::move(item));
  }
  nlohmann::json j = {{"type", "session_summary"},
                      {"session_id", r.session_id},
                      {"driver_id", r.driver_id},
                      {"seed", r.seed},
                      {"status", to_string(r.status)},
                      {"episodes", std::move(episodes)},
                      {"changes", r.records.size()},
                      {"log", r.log_path}};
  if (!r.error.empty()) j["error"] = r.error;
  return j;
}

sim::ScenarioState episode_start(const sim::ScenarioConfig& config,
                                 std::uint64_t seed, int episode) {
  sim::Rng rng(derive_seed(seed, "dil-episode",
                           static_cast<std::uint64_t>(episode)));
  return sim::sample_initial_state(config, rng);
}

SessionResult run_session(LineChannel& channel, const ServiceConfig& config,
                          const std::string& session_id) {
  SessionResult result;
  result.session_id = session_id;
  SessionLog log;
  auto abort = [&](const std::string& reason, bool tell_client) {
    result.status = SessionStatus::kAborted;
    result.error = reason;
    if (tell_client) channel.send({{"type", "error"}, {"reason", reason}});
    log.finish(result);
    return result;
  };

  StartRequest start;
  {
    const auto line = channel.read_line(config.start_timeout);
    if (!line) {
      return abort(channel.closed() ? "client disconnected before start"
                                    : "no start message before timeout",
                   !channel.closed());
    }
    try {
      const auto j = nlohmann::json::parse(*line);
      if (!j.is_object() || j.value("type", "") != "start") {
        throw std::invalid_argument("expected a start message");
      }
      start = parse_start(j, config.max_episodes);
    } catch (const std::exception& e) {
      return abort(e.what(), true);
    }
  }
  result.driver_id = start.driver_id;
  result.seed = start.seed;
  try {
    log.open(config.log_dir, start.driver_id, session_id);
  } catch (const std::exception& e) {
    return abort(e.what(), true);
  }
  result.log_path = log.path();

  const auto period = std::chrono::duration_cast<Clock::duration>(
      std::chrono::duration<double>(1.0 / config.tick_rate_hz));
  bool stop_requested = false;

  for (int episode = 1; episode <= start.episodes && !stop_requested;
       ++episode) {
    sim::ScenarioState state = episode_start(config.scenario, start.seed, episode);
    EpisodeSummary summary;
    summary.episode = episode;
    while (true) {
      // Sending blocks while the client is not reading, which pauses the
      // simulation instead of dropping ticks.
      if (!channel.send(tick_payload(state, episode, config.scenario))) {
        result.episodes.push_back(summary);
        return abort("client disconnected", false);
      }
      ++summary.ticks;
      const auto deadline = Clock::now() + period;
      bool change = false;
      try {
        while (true) {
          const auto left = std::max(
              std::chrono::microseconds(0),
              std::chrono::duration_cast<std::chrono::microseconds>(
                  deadline - Clock::now()));
          const auto line = channel.read_line(left);
          if (!line) break;
          const std::string type = message_type(*line);
          if (type == "lane_change") {
            change = true;  // repeats within one tick collapse to one
          } else if (type == "stop") {
            stop_requested = true;
          } else {
            throw std::invalid_argument("unexpected message type '" + type +
                                        "'");
          }
        }
      } catch (const std::exception& e) {
        result.episodes.push_back(summary);
        return abort(e.what(), true);
      }
      if (channel.closed()) {
        result.episodes.push_back(summary);
        return abort("client disconnected", false);
      }

      const sim::StepResult next =
          sim::step(state, Action::kKeep, config.scenario);
      if (next.terminal) {
        summary.termination = next.termination;
        break;
      }
      if (stop_requested && !change) {
        summary.stopped = true;
        break;
      }
      state = next.state;
      if (change) {
        if (!channel.send(tick_payload(state, episode, config.scenario))) {
          result.episodes.push_back(summary);
          return abort("client disconnected", false);
        }
        ++summary.ticks;
        indicators::DecisionRecord rec;
        rec.state = state;
        rec.indicators = indicators::compute_indicators(state, config.scenario);
        rec.v_e = state.ego.v;
        rec.decision = Action::kChange;
        rec.wall_time_ms = wall_ms();
        rec.driver_id = start.driver_id;
        log.append(rec);
        result.records.push_back(rec);
        summary.termination = sim::Termination::kChanged;
        summary.decision_t = state.t;
        break;
      }
    }
    result.episodes.push_back(summary);
    nlohmann::json end = {{"type", "episode_end"},
                          {"episode", episode},
                          {"termination", termination_label(summary)},
                          {"ticks", summary.ticks}};
    if (!channel.send(end)) return abort("client disconnected", false);
  }

  result.status = SessionStatus::kCompleted;
  log.finish(result);
  channel.send(summary_payload(result));
  return result;
}

Server::Server(ServiceConfig config) : config_(std::move(config)) {
  config_.validate();
}

Server::~Server() {
  stop();
  for (auto& t : workers_) {
    if (t.joinable()) t.join();
  }
  if (listen_fd_ >= 0) ::close(listen_fd_);
}

int Server::bind(int port) {
  listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (listen_fd_ < 0) {
    throw std::runtime_error("socket: " + std::string(std::strerror(errno)));
  }
  const int one = 1;
  ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
  sockaddr_in sa{};
  sa.sin_family = AF_INET;
  sa.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  sa.sin_port = htons(static_cast<std::uint16_t>(port));
  if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&sa), sizeof(sa)) != 0 ||
      ::listen(listen_fd_, 16) != 0) {
    throw std::runtime_error(
        fmt::format("bind 127.0.0.1:{}: {}", port, std::strerror(errno)));
  }
  socklen_t len = sizeof(sa);
  ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&sa), &len);
  return ntohs(sa.sin_port);
}

void Server::serve() {
  if (listen_fd_ < 0) throw std::logic_error("Server::serve before bind");
  while (!stopping_) {
    pollfd p{listen_fd_, POLLIN, 0};
    const int ready = ::poll(&p, 1, 100);
    if (ready <= 0) continue;
    const int fd = ::accept(listen_fd_, nullptr, nullptr);
    if (fd < 0) continue;
    const std::string id = fmt::format("s{:04d}", next_session_++);
    std::lock_guard<std::mutex> lock(mutex_);
    workers_.emplace_back([this, fd, id] {
      LineChannel channel(fd);
      SessionResult r = run_session(channel, config_, id);
      channel.close_gracefully(std::chrono::milliseconds(2000));
      std::lock_guard<std::mutex> inner(mutex_);
      finished_.push_back(std::move(r));
    });
  }
}

void Server::stop() { stopping_ = true; }

std::vector<SessionResult> Server::finished_sessions() const {
  std::lock_guard<std::mutex> lock(mutex_);
  return finished_;
}

}  // namespace lanechange::dil
