#include "lanechange/agent.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include <fmt/format.h>

#include "lanechange/json_util.hpp"
#include "lanechange/rng.hpp"

namespace lanechange::agent {
namespace {

// CHANGE is absorbing and keeps paying its reward, so values are kept on
// the per-step scale: y = (1 - gamma) r + gamma max Q'(s').
double bootstrap(double r, double gamma, double best_next) {
  return (1.0 - gamma) * r + gamma * best_next;
}

std::string rng_state_string(const sim::Rng& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

std::string format_double(double v) { return fmt::format("{}", v); }

}  // namespace

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw std::invalid_argument("replay buffer: capacity 0");
  items_.reserve(capacity);
}

void ReplayBuffer::push(const Transition& t) {
  ++insertions_;
  if (items_.size() < capacity_) {
    items_.push_back(t);
    return;
  }
  items_[head_] = t;
  head_ = (head_ + 1) % capacity_;
}

const Transition& ReplayBuffer::at(std::size_t i) const {
  if (i >= items_.size()) throw std::out_of_range("replay buffer index");
  return items_[(head_ + i) % items_.size()];
}

std::vector<Transition> ReplayBuffer::sample(std::size_t count,
                                             sim::Rng& rng) const {
  if (items_.empty()) throw std::logic_error("replay buffer is empty");
  std::uniform_int_distribution<std::size_t> pick(0, items_.size() - 1);
  std::vector<Transition> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(items_[pick(rng)]);
  return out;
}

void TrainingConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("training: eta must be > 0");
  if (!(gamma >= 0.0 && gamma <= 1.0)) {
    throw ConfigError("training: gamma must lie in [0, 1]");
  }
  if (!(epsilon_end >= 0.0 && epsilon_end <= epsilon_start &&
        epsilon_start <= 1.0)) {
    throw ConfigError("training: need 0 <= epsilon_e <= epsilon_s <= 1");
  }
  if (replay_capacity <= 0 || warmup <= 0 || batch_size <= 0) {
    throw ConfigError("training: M_r, M_i, M_m must be positive");
  }
  if (warmup > replay_capacity) throw ConfigError("training: need M_i <= M_r");
  if (batch_size > warmup) throw ConfigError("training: need M_m <= M_i");
  if (target_sync_episodes <= 0) throw ConfigError("training: N_u must be > 0");
  if (episodes <= 0) throw ConfigError("training: N_e must be > 0");
  if (checkpoint_every < 0) {
    throw ConfigError("training: checkpoint_every must be >= 0");
  }
  reward.validate();
  scenario.validate();
}

void to_json(nlohmann::json& j, const TrainingConfig& c) {
  j = nlohmann::json::object();
  j["eta"] = c.learning_rate;
  j["epsilon_s"] = c.epsilon_start;
  j["epsilon_e"] = c.epsilon_end;
  j["gamma"] = c.gamma;
  j["M_r"] = c.replay_capacity;
  j["M_i"] = c.warmup;
  j["M_m"] = c.batch_size;
  j["N_u"] = c.target_sync_episodes;
  j["N_s"] = c.scenario.max_steps;
  j["N_e"] = c.episodes;
  j["seed"] = c.seed;
  j["style"] = c.style;
  j["profile"] = c.profile;
  j["reward"] = c.reward;
  j["scenario"] = c.scenario;
  j["optimizer"] = c.optimizer == qnet::OptimizerKind::kAdam ? "adam" : "sgd";
  j["checkpoint_every"] = c.checkpoint_every;
}

void from_json(const nlohmann::json& j, TrainingConfig& c) {
  reject_unknown_keys(j,
                      {"eta", "epsilon_s", "epsilon_e", "gamma", "M_r", "M_i",
                       "M_m", "N_u", "N_s", "N_e", "seed", "style", "profile",
                       "reward", "scenario", "optimizer", "checkpoint_every"},
                      "training");
  read_if_present(j, "eta", c.learning_rate);
  read_if_present(j, "epsilon_s", c.epsilon_start);
  read_if_present(j, "epsilon_e", c.epsilon_end);
  read_if_present(j, "gamma", c.gamma);
  read_if_present(j, "M_r", c.replay_capacity);
  read_if_present(j, "M_i", c.warmup);
  read_if_present(j, "M_m", c.batch_size);
  read_if_present(j, "N_u", c.target_sync_episodes);
  read_if_present(j, "N_e", c.episodes);
  read_if_present(j, "seed", c.seed);
  read_if_present(j, "checkpoint_every", c.checkpoint_every);
  if (auto it = j.find("scenario"); it != j.end()) {
    c.scenario = it->get<sim::ScenarioConfig>();
  }
  read_if_present(j, "N_s", c.scenario.max_steps);
  if (auto it = j.find("reward"); it != j.end()) {
    c.reward = it->get<reward::RewardParams>();
  }
  if (auto it = j.find("optimizer"); it != j.end()) {
    const auto name = it->get<std::string>();
    if (name == "adam") {
      c.optimizer = qnet::OptimizerKind::kAdam;
    } else if (name == "sgd") {
      c.optimizer = qnet::OptimizerKind::kSgd;
    } else {
      throw ConfigError("training: unknown optimizer '" + name + "'");
    }
  }
  if (auto it = j.find("profile"); it != j.end()) {
    c.profile = it->get<indicators::StyleProfile>();
    read_if_present(j, "style", c.style);
  } else if (auto s = j.find("style"); s != j.end()) {
    c.style = s->get<std::string>();
    try {
      c.profile = indicators::resolve_profile(c.style);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("training: ") + e.what());
    }
  }
  c.validate();
}

double epsilon_at(const EpsilonSchedule& schedule, int episode) {
  const double frac =
      schedule.episodes > 0
          ? std::clamp(static_cast<double>(episode) / schedule.episodes, 0.0,
                       1.0)
          : 1.0;
  return schedule.start + (schedule.end - schedule.start) * frac;
}

Action greedy_action(const qnet::QValues& q) {
  return q[0] > q[1] ? Action::kChange : Action::kKeep;
}

Action select_action(const qnet::NetworkParams& params,
                     const sim::NormalizedState& state, double epsilon,
                     sim::Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  if (u(rng) < epsilon) {
    return u(rng) < 0.5 ? Action::kChange : Action::kKeep;
  }
  return greedy_action(qnet::forward(params, state));
}

double td_target(const Transition& t, double gamma,
                 const qnet::NetworkParams& target_net) {
  if (t.terminal) return t.r;
  const auto q = qnet::forward(target_net, t.s_next);
  const double next = std::max(q[0], q[1]);
  return bootstrap(t.r, gamma, next);
}

Agent::Agent(const TrainingConfig& config)
    : Agent(config, qnet::init(derive_seed(config.seed, "network-init"))) {}

Agent::Agent(const TrainingConfig& config, qnet::NetworkParams initial)
    : config_(config),
      online_(std::move(initial)),
      target_(online_),
      optimizer_(qnet::make_optimizer(config.learning_rate, config.optimizer)),
      replay_rng_(derive_seed(config.seed, "replay")) {}

double Agent::train_on(const std::vector<Transition>& batch) {
  // Bootstrap values for the whole minibatch in one target-network pass.
  Eigen::MatrixXd next(qnet::kLayerDims[0],
                       static_cast<Eigen::Index>(batch.size()));
  for (std::size_t i = 0; i < batch.size(); ++i) {
    for (std::size_t r = 0; r < sim::kStateSize; ++r) {
      next(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(i)) =
          batch[i].s_next[r];
    }
  }
  const Eigen::MatrixXd q_next = qnet::forward_batch(target_, next);
  std::vector<qnet::Sample> samples(batch.size());
  const double gamma = config_.gamma;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Transition& t = batch[i];
    samples[i].state = t.s;
    samples[i].action = t.a;
    if (t.terminal) {
      samples[i].target = t.r;
    } else {
      const auto col = static_cast<Eigen::Index>(i);
      const double best = std::max(q_next(0, col), q_next(1, col));
      samples[i].target = bootstrap(t.r, gamma, best);
    }
  }
  const qnet::Gradients g = qnet::backward(online_, samples);
  qnet::apply_update(online_, g.grad, optimizer_);
  return g.loss;
}

double Agent::train_step(const ReplayBuffer& buffer) {
  if (buffer.size() < static_cast<std::size_t>(config_.warmup)) {
    throw std::logic_error("train_step: replay buffer below warmup size M_i");
  }
  return train_on(
      buffer.sample(static_cast<std::size_t>(config_.batch_size), replay_rng_));
}

void Agent::sync_target() { target_ = online_; }

std::string metrics_csv_header() {
  return "episode,step_reward,loss,steps,termination,epsilon";
}

std::string metrics_csv_row(const EpisodeMetrics& m) {
  return fmt::format("{},{},{},{},{},{}", m.episode,
                     format_double(m.step_reward),
                     m.loss ? format_double(*m.loss) : std::string(), m.steps,
                     sim::to_string(m.termination), format_double(m.epsilon));
}

void write_metrics_csv(const std::string& path,
                       const std::vector<EpisodeMetrics>& metrics) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write metrics " + path);
  out << metrics_csv_header() << '\n';
  for (const auto& m : metrics) out << metrics_csv_row(m) << '\n';
}

TrainingResult run_training(const TrainingConfig& config,
                            const TrainingHooks& hooks) {
  config.validate();
  Agent agent(config);
  ReplayBuffer buffer(static_cast<std::size_t>(config.replay_capacity));
  sim::Rng env_rng(derive_seed(config.seed, "environment"));
  sim::Rng action_rng(derive_seed(config.seed, "exploration"));
  const EpsilonSchedule schedule{config.epsilon_start, config.epsilon_end,
                                 config.episodes};
  const sim::ScenarioConfig& scenario = config.scenario;
  const bool write_files = !hooks.out_dir.empty();
  std::ofstream csv;
  if (write_files) {
    std::filesystem::create_directories(hooks.out_dir);
    csv.open(std::filesystem::path(hooks.out_dir) / "metrics.csv");
    if (!csv) throw std::runtime_error("cannot write metrics.csv");
    csv << metrics_csv_header() << '\n';
  }
  auto checkpoint_path = [&](const std::string& name) {
    return (std::filesystem::path(hooks.out_dir) / name).string();
  };

  TrainingResult result;
  result.metrics.reserve(static_cast<std::size_t>(config.episodes));
  for (int episode = 0; episode < config.episodes; ++episode) {
    if (episode % config.target_sync_episodes == 0) {
      agent.sync_target();
      if (hooks.on_target_sync) hooks.on_target_sync(episode);
    }
    const double epsilon = epsilon_at(schedule, episode);
    sim::ScenarioState state = sim::sample_initial_state(scenario, env_rng);
    EpisodeMetrics m;
    m.episode = episode;
    m.epsilon = epsilon;
    double reward_sum = 0.0;
    double loss_sum = 0.0;
    int loss_count = 0;
    while (true) {
      const sim::NormalizedState s = sim::normalize_state(state, scenario);
      const Action a = select_action(agent.online(), s, epsilon, action_rng);
      const double r =
          reward::state_reward(state, a, config.profile, config.reward,
                               scenario)
              .total;
      const sim::StepResult next = sim::step(state, a, scenario);
      // Only a lane change ends the decision process; truncation by the
      // step cap or the front-gap guard still bootstraps.
      buffer.push({s, a, r, sim::normalize_state(next.state, scenario),
                   a == Action::kChange});
      reward_sum += r;
      ++m.steps;
      if (buffer.size() >= static_cast<std::size_t>(config.warmup)) {
        double loss = std::numeric_limits<double>::quiet_NaN();
        try {
          loss = agent.train_step(buffer);
        } catch (const qnet::NumericError&) {
          // handled below together with a non-finite loss
        }
        if (!std::isfinite(loss)) {
          if (write_files) {
            qnet::save(agent.online(), checkpoint_path("checkpoint_nan.json"),
                       rng_state_string(env_rng));
          }
          throw qnet::NumericError("training diverged at episode " +
                                   std::to_string(episode));
        }
        loss_sum += loss;
        ++loss_count;
      }
      state = next.state;
      if (next.terminal) {
        m.termination = next.termination;
        break;
      }
    }
    m.step_reward = reward_sum / m.steps;
    if (loss_count > 0) m.loss = loss_sum / loss_count;
    if (write_files) {
      csv << metrics_csv_row(m) << '\n';
      if (config.checkpoint_every > 0 && (episode + 1) % config.checkpoint_every == 0 &&
          episode + 1 < config.episodes) {
        qnet::save(agent.online(),
                   checkpoint_path(fmt::format("checkpoint_ep{:06d}.json",
                                               episode + 1)),
                   rng_state_string(env_rng));
      }
    }
    if (hooks.on_episode) hooks.on_episode(m);
    result.metrics.push_back(m);
  }
  if (write_files) {
    qnet::save(agent.online(), checkpoint_path("checkpoint_final.json"),
               rng_state_string(env_rng));
  }
  result.params = agent.online();
  return result;
}

Action benchmark_decide(const sim::ScenarioState& state,
                        const indicators::StyleProfile& profile,
                        const reward::RewardParams& params,
                        const sim::ScenarioConfig& config) {
  const double change =
      reward::state_reward(state, Action::kChange, profile, params, config)
          .total;
  const double keep =
      reward::state_reward(state, Action::kKeep, profile, params, config).total;
  return change > keep ? Action::kChange : Action::kKeep;
}

Action rl_decide(const qnet::NetworkParams& params,
                 const sim::ScenarioState& state,
                 const sim::ScenarioConfig& config) {
  return greedy_action(qnet::forward(params, sim::normalize_state(state, config)));
}

}  // namespace lanechange::agent
