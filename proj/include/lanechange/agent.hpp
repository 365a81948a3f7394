#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "lanechange/indicators.hpp"
#include "lanechange/qnet.hpp"
#include "lanechange/reward.hpp"
#include "lanechange/sim.hpp"

namespace lanechange::agent {

struct Transition {
  sim::NormalizedState s{};
  Action a = Action::kKeep;
  double r = 0.0;  // total reward R in [0, 3]
  sim::NormalizedState s_next{};
  bool terminal = false;
};

// Fixed-capacity FIFO of transitions.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity);

  void push(const Transition& t);
  std::size_t size() const { return items_.size(); }
  std::size_t capacity() const { return capacity_; }
  std::uint64_t insertions() const { return insertions_; }
  // i = 0 is the oldest stored transition.
  const Transition& at(std::size_t i) const;
  std::vector<Transition> sample(std::size_t count, sim::Rng& rng) const;

 private:
  std::size_t capacity_;
  std::size_t head_ = 0;  // slot overwritten next once full
  std::uint64_t insertions_ = 0;
  std::vector<Transition> items_;
};

struct TrainingConfig {
  double learning_rate = 0.005;  // eta
  double epsilon_start = 0.8;    // epsilon_s
  double epsilon_end = 0.1;      // epsilon_e
  double gamma = 0.98;
  int replay_capacity = 10000;   // M_r
  int warmup = 2000;             // M_i
  int batch_size = 32;           // M_m
  int target_sync_episodes = 20; // N_u
  int episodes = 10000;          // N_e; N_s lives in scenario.max_steps
  std::uint64_t seed = 0;
  std::string style = "normal";  // builtin name or path to a profile file
  indicators::StyleProfile profile = indicators::normal_profile();
  reward::RewardParams reward;
  sim::ScenarioConfig scenario;
  qnet::OptimizerKind optimizer = qnet::OptimizerKind::kAdam;
  int checkpoint_every = 1000;   // episodes; 0 disables periodic checkpoints

  void validate() const;
};

void to_json(nlohmann::json& j, const TrainingConfig& c);
// Rejects unknown keys. A "style" that is not a builtin name is read as a
// profile file path relative to the working directory.
void from_json(const nlohmann::json& j, TrainingConfig& c);

struct EpsilonSchedule {
  double start = 0.8;
  double end = 0.1;
  int episodes = 10000;
};

double epsilon_at(const EpsilonSchedule& schedule, int episode);

// argmax over Q with ties resolved to KEEP.
Action greedy_action(const qnet::QValues& q);

Action select_action(const qnet::NetworkParams& params,
                     const sim::NormalizedState& state, double epsilon,
                     sim::Rng& rng);

// Bootstrap target for one transition: r when terminal, otherwise
// (1 - gamma) r + gamma max_a' Q_target(s', a').
double td_target(const Transition& t, double gamma,
                 const qnet::NetworkParams& target_net);

class Agent {
 public:
  explicit Agent(const TrainingConfig& config);
  Agent(const TrainingConfig& config, qnet::NetworkParams initial);

  const qnet::NetworkParams& online() const { return online_; }
  const qnet::NetworkParams& target() const { return target_; }
  qnet::NetworkParams& mutable_online() { return online_; }
  const TrainingConfig& config() const { return config_; }
  sim::Rng& replay_rng() { return replay_rng_; }

  // One minibatch update of the online network; returns the loss. Throws
  // std::logic_error before the buffer holds `warmup` transitions.
  double train_step(const ReplayBuffer& buffer);
  // Same update on an explicit minibatch.
  double train_on(const std::vector<Transition>& batch);
  void sync_target();

 private:
  TrainingConfig config_;
  qnet::NetworkParams online_;
  qnet::NetworkParams target_;
  qnet::OptimizerState optimizer_;
  sim::Rng replay_rng_;
};

struct EpisodeMetrics {
  int episode = 0;
  double step_reward = 0.0;  // mean R over the episode's steps
  std::optional<double> loss;  // mean train_step loss; empty before warmup
  int steps = 0;
  sim::Termination termination = sim::Termination::kNone;
  double epsilon = 0.0;
};

struct TrainingResult {
  qnet::NetworkParams params;
  std::vector<EpisodeMetrics> metrics;
};

struct TrainingHooks {
  // Directory for metrics.csv and checkpoints; empty keeps results in memory.
  std::string out_dir;
  std::function<void(const EpisodeMetrics&)> on_episode;
  std::function<void(int episode)> on_target_sync;
};

TrainingResult run_training(const TrainingConfig& config,
                            const TrainingHooks& hooks = {});

std::string metrics_csv_header();
std::string metrics_csv_row(const EpisodeMetrics& m);
void write_metrics_csv(const std::string& path,
                       const std::vector<EpisodeMetrics>& metrics);

// One-step greedy comparison of the personalisation reward; ties -> KEEP.
Action benchmark_decide(const sim::ScenarioState& state,
                        const indicators::StyleProfile& profile,
                        const reward::RewardParams& params,
                        const sim::ScenarioConfig& config);

// Frozen-network greedy policy on raw scenario states.
Action rl_decide(const qnet::NetworkParams& params,
                 const sim::ScenarioState& state,
                 const sim::ScenarioConfig& config);

}  // namespace lanechange::agent
