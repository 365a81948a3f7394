#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "lanechange/indicators.hpp"
#include "lanechange/sim.hpp"

namespace lanechange::dil {

// Newline-delimited JSON over a connected stream socket. Owns the fd.
class LineChannel {
 public:
  explicit LineChannel(int fd);
  ~LineChannel();
  LineChannel(const LineChannel&) = delete;
  LineChannel& operator=(const LineChannel&) = delete;

  // False once the peer has gone away.
  bool send(const nlohmann::json& message);
  // Waits up to `timeout` for one complete line. Empty on timeout; sets
  // closed() when the peer hung up.
  std::optional<std::string> read_line(std::chrono::microseconds timeout);
  // Half-closes, discards pending input until EOF or `linger`, then closes.
  void close_gracefully(std::chrono::milliseconds linger);
  bool closed() const { return closed_; }

 private:
  int fd_;
  bool closed_ = false;
  std::string buffer_;
};

// Connects to host:port (IPv4 dotted quad or "localhost").
int connect_tcp(const std::string& host, int port);

struct ServiceConfig {
  sim::ScenarioConfig scenario;
  double tick_rate_hz = 10.0;
  std::string log_dir = ".";
  int max_episodes = 500;  // upper bound accepted in a start message
  std::chrono::milliseconds start_timeout{30000};

  void validate() const;
};

void to_json(nlohmann::json& j, const ServiceConfig& c);
void from_json(const nlohmann::json& j, ServiceConfig& c);

enum class SessionStatus { kRunning, kCompleted, kAborted };

std::string to_string(SessionStatus s);

struct EpisodeSummary {
  int episode = 0;  // 1-based
  sim::Termination termination = sim::Termination::kNone;
  int ticks = 0;
  std::optional<double> decision_t;  // simulation time of the CHANGE
  bool stopped = false;              // cut short by a stop message
};

// "changed", "max_steps", "forced_stop" or "stopped".
std::string termination_label(const EpisodeSummary& e);

struct SessionResult {
  std::string session_id;
  std::string driver_id;
  std::uint64_t seed = 0;
  SessionStatus status = SessionStatus::kRunning;
  std::vector<EpisodeSummary> episodes;
  std::vector<indicators::DecisionRecord> records;
  std::string log_path;
  std::string error;
};

// Wire message for one simulation tick; positions are relative to ego.
nlohmann::json tick_payload(const sim::ScenarioState& state, int episode,
                            const sim::ScenarioConfig& config);

nlohmann::json summary_payload(const SessionResult& result);

// Runs one session to completion on an open channel. A lane_change that
// arrives between ticks k and k+1 is attributed to tick k+1. The log is
// written to <log_dir>/<driver_id>_<session_id>.jsonl plus a
// .summary.json sidecar, including on abort.
SessionResult run_session(LineChannel& channel, const ServiceConfig& config,
                          const std::string& session_id);

// Start of episode `episode` (1-based) for a session seed.
sim::ScenarioState episode_start(const sim::ScenarioConfig& config,
                                 std::uint64_t seed, int episode);

// Accept loop; one thread per connection.
class Server {
 public:
  explicit Server(ServiceConfig config);
  ~Server();
  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  // Binds 127.0.0.1:port (0 picks a free port) and returns the bound port.
  int bind(int port);
  // Blocks until stop() is called.
  void serve();
  void stop();

  std::vector<SessionResult> finished_sessions() const;

 private:
  ServiceConfig config_;
  int listen_fd_ = -1;
  std::atomic<bool> stopping_{false};
  std::atomic<int> next_session_{1};
  mutable std::mutex mutex_;
  std::vector<std::thread> workers_;
  std::vector<SessionResult> finished_;
};

}  // namespace lanechange::dil
