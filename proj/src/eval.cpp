#include "lanechange/eval.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <optional>
#include <thread>

#include <fmt/format.h>
#include <json.hpp>

#include "lanechange/rng.hpp"

namespace lanechange::eval {
namespace {

EpisodeOutcome run_episode(const Policy& policy, AgentKind kind,
                           const sim::ScenarioConfig& config,
                           std::uint64_t seed, bool keep_records,
                           std::optional<LaneChangePoint>& point) {
  sim::Rng rng(seed);
  sim::ScenarioState state = sim::sample_initial_state(config, rng);
  EpisodeOutcome outcome;
  while (true) {
    const Action a = policy(state);
    if (keep_records || a == Action::kChange) {
      indicators::DecisionRecord rec;
      rec.state = state;
      rec.indicators = indicators::compute_indicators(state, config);
      rec.v_e = state.ego.v;
      rec.decision = a;
      rec.driver_id = to_string(kind);
      if (a == Action::kChange) {
        point = LaneChangePoint{rec.v_e, rec.indicators, kind};
      }
      if (keep_records) outcome.records.push_back(std::move(rec));
    }
    const sim::StepResult next = sim::step(state, a, config);
    ++outcome.steps_taken;
    state = next.state;
    if (next.terminal) {
      outcome.termination = next.termination;
      break;
    }
  }
  return outcome;
}

}  // namespace

std::string to_string(AgentKind k) {
  switch (k) {
    case AgentKind::kRl:
      return "rl";
    case AgentKind::kBenchmark:
      return "benchmark";
    case AgentKind::kReferenceDriver:
      return "reference_driver";
    case AgentKind::kHuman:
      return "human";
  }
  return "rl";
}

RolloutResult run_rollouts(const Policy& policy, AgentKind kind,
                           const sim::ScenarioConfig& config, int episodes,
                           std::uint64_t seed, int threads,
                           bool keep_records) {
  config.validate();
  if (episodes < 0) throw std::invalid_argument("run_rollouts: episodes < 0");
  const auto n = static_cast<std::size_t>(episodes);
  std::vector<EpisodeOutcome> outcomes(n);
  std::vector<std::optional<LaneChangePoint>> points(n);
  auto work = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      outcomes[i] = run_episode(policy, kind, config,
                                derive_seed(seed, "rollout", i), keep_records,
                                points[i]);
    }
  };
  const std::size_t workers =
      std::clamp<std::size_t>(static_cast<std::size_t>(std::max(threads, 1)),
                              1, std::max<std::size_t>(n, 1));
  if (workers == 1) {
    work(0, n);
  } else {
    std::vector<std::thread> pool;
    const std::size_t chunk = (n + workers - 1) / workers;
    for (std::size_t w = 0; w < workers; ++w) {
      const std::size_t begin = w * chunk;
      const std::size_t end = std::min(n, begin + chunk);
      if (begin >= end) break;
      pool.emplace_back(work, begin, end);
    }
    for (auto& t : pool) t.join();
  }

  RolloutResult result;
  for (std::size_t i = 0; i < n; ++i) {
    if (points[i]) result.points.push_back(*points[i]);
    switch (outcomes[i].termination) {
      case sim::Termination::kChanged:
        ++result.changed;
        break;
      case sim::Termination::kMaxSteps:
        ++result.max_steps;
        break;
      case sim::Termination::kForcedStop:
        ++result.forced_stop;
        break;
      case sim::Termination::kNone:
        break;
    }
  }
  result.outcomes = std::move(outcomes);
  return result;
}

double mae(const std::vector<LaneChangePoint>& points,
           const indicators::StyleProfile& profile, Indicator which,
           const sim::ScenarioConfig& config) {
  double sum = 0.0;
  std::size_t count = 0;
  for (const auto& p : points) {
    if (which == Indicator::kTnf && p.indicators.target_front_missing()) continue;
    if (which == Indicator::kDvnb && !p.indicators.nb_relevant) continue;
    const auto ref = indicators::reference_values(
        profile, p.v_e, config.reference_speed_scale);
    const auto idx = static_cast<std::size_t>(which);
    sum += std::abs(p.indicators.values()[idx] - ref.values()[idx]);
    ++count;
  }
  if (count == 0) throw std::invalid_argument("mae: no usable points");
  return sum / static_cast<double>(count);
}

Action reference_driver_decide(const sim::ScenarioState& state,
                               const indicators::StyleProfile& profile,
                               const Tolerances& tolerances,
                               const sim::ScenarioConfig& config) {
  const auto actual = indicators::compute_indicators(state, config);
  const auto ref = indicators::reference_values(profile, state.ego.v,
                                                config.reference_speed_scale);
  if (std::abs(actual.t_f - ref.t_f) > tolerances.band[0]) return Action::kKeep;
  if (!actual.target_front_missing() &&
      std::abs(actual.t_nf - ref.t_nf) > tolerances.band[1]) {
    return Action::kKeep;
  }
  if (actual.nb_relevant &&
      std::abs(actual.dv_nb - ref.dv_nb) > tolerances.band[2]) {
    return Action::kKeep;
  }
  return Action::kChange;
}

bool is_out_of_domain(const sim::ScenarioState& state,
                      const sim::ScenarioConfig& config) {
  return !state.target_front_present ||
         state.behind_gap() > config.behind_relevance_limit;
}

AgreementReport agreement(const Policy& policy_a, const Policy& policy_b,
                          const std::vector<sim::ScenarioState>& states,
                          const sim::ScenarioConfig& config) {
  AgreementReport report;
  for (const auto& s : states) {
    const Action a = policy_a(s);
    const Action b = policy_b(s);
    ++report.total;
    if (a == b) {
      ++report.agree;
      continue;
    }
    report.disagreements.push_back({s, a, b, s.behind_gap(),
                                    s.target_front_present,
                                    is_out_of_domain(s, config)});
  }
  report.accuracy = report.total > 0
                        ? static_cast<double>(report.agree) / report.total
                        : 0.0;
  return report;
}

std::vector<sim::ScenarioState> sample_evaluation_states(
    const sim::ScenarioConfig& config, int count, std::uint64_t seed) {
  std::vector<sim::ScenarioState> out;
  out.reserve(static_cast<std::size_t>(std::max(count, 0)));
  for (int i = 0; i < count; ++i) {
    sim::Rng rng(derive_seed(seed, "rollout", static_cast<std::uint64_t>(i)));
    out.push_back(sim::sample_initial_state(config, rng));
  }
  return out;
}

std::vector<sim::ScenarioState> sample_out_of_domain_states(
    const sim::ScenarioConfig& config, int count, std::uint64_t seed) {
  std::vector<sim::ScenarioState> out;
  sim::Rng rng(derive_seed(seed, "out-of-domain"));
  std::uniform_real_distribution<double> far(
      config.behind_relevance_limit * 1.01,
      config.behind_relevance_limit * 1.6);
  for (int i = 0; i < count; ++i) {
    sim::ScenarioState s = sim::sample_initial_state(config, rng);
    if (i % 2 == 0) {
      s.target_behind.x = s.ego.x - far(rng);
    } else {
      s.target_front_present = false;
      s.target_front = sim::VehicleState{sim::Role::kTargetFront};
    }
    out.push_back(s);
  }
  return out;
}

void export_results(const std::vector<ExportItem>& items,
                    const std::vector<StyleSummary>& summaries,
                    const std::string& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream csv(std::filesystem::path(dir) / "points.csv");
  if (!csv) throw std::runtime_error("cannot write points.csv in " + dir);
  csv << "v_e,t_f,t_nf,dv_nb,agent_kind,style\n";
  for (const auto& item : items) {
    for (const auto& p : item.points) {
      csv << fmt::format("{},{},{},{},{},{}\n", p.v_e, p.indicators.t_f,
                         p.indicators.t_nf, p.indicators.dv_nb,
                         to_string(p.agent_kind), item.style);
    }
  }
  nlohmann::json summary = nlohmann::json::array();
  for (const auto& s : summaries) {
    summary.push_back({{"style", s.style},
                       {"agent", s.agent},
                       {"mae", {{"tf", s.mae[0]}, {"tnf", s.mae[1]},
                                {"dvnb", s.mae[2]}}},
                       {"accuracy", s.accuracy},
                       {"n", s.n}});
  }
  std::ofstream js(std::filesystem::path(dir) / "summary.json");
  if (!js) throw std::runtime_error("cannot write summary.json in " + dir);
  js << summary.dump(2) << '\n';
}

}  // namespace lanechange::eval
