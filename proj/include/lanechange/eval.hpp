#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "lanechange/indicators.hpp"
#include "lanechange/sim.hpp"

namespace lanechange::eval {

enum class AgentKind { kRl, kBenchmark, kReferenceDriver, kHuman };

std::string to_string(AgentKind k);

// Indicators at the instant an agent decided to change lane.
struct LaneChangePoint {
  double v_e = 0.0;
  indicators::IndicatorVector indicators;
  AgentKind agent_kind = AgentKind::kRl;
};

struct EpisodeOutcome {
  sim::Termination termination = sim::Termination::kNone;
  int steps_taken = 0;
  std::vector<indicators::DecisionRecord> records;
};

// Must be safe to call concurrently on distinct states.
using Policy = std::function<Action(const sim::ScenarioState&)>;

struct RolloutResult {
  std::vector<LaneChangePoint> points;
  std::vector<EpisodeOutcome> outcomes;  // one per episode, in seed order
  int changed = 0;
  int max_steps = 0;
  int forced_stop = 0;
};

// Runs `episodes` greedy episodes; episode i draws its start from a seed
// derived from (seed, i), so results do not depend on `threads`.
RolloutResult run_rollouts(const Policy& policy, AgentKind kind,
                           const sim::ScenarioConfig& config, int episodes,
                           std::uint64_t seed, int threads = 1,
                           bool keep_records = false);

enum class Indicator { kTf = 0, kTnf = 1, kDvnb = 2 };

// Mean absolute deviation from the style's reference line. Points whose
// selected indicator is out of domain (missing car, distant follower) are
// skipped. Throws std::invalid_argument when nothing remains.
double mae(const std::vector<LaneChangePoint>& points,
           const indicators::StyleProfile& profile, Indicator which,
           const sim::ScenarioConfig& config);

struct Tolerances {
  std::array<double, 3> band{0.5, 0.5, 1.0};
};

// Synthetic driver: changes lane iff every relevant indicator lies within
// its band around the reference value.
Action reference_driver_decide(const sim::ScenarioState& state,
                               const indicators::StyleProfile& profile,
                               const Tolerances& tolerances,
                               const sim::ScenarioConfig& config);

struct Disagreement {
  sim::ScenarioState state;
  Action expected = Action::kKeep;  // policy a
  Action actual = Action::kKeep;    // policy b
  double d_nb = 0.0;
  bool target_front_present = true;
  bool out_of_domain = false;
};

struct AgreementReport {
  int total = 0;
  int agree = 0;
  double accuracy = 0.0;
  std::vector<Disagreement> disagreements;
};

AgreementReport agreement(const Policy& policy_a, const Policy& policy_b,
                          const std::vector<sim::ScenarioState>& states,
                          const sim::ScenarioConfig& config);

// Initial states of freshly sampled episodes.
std::vector<sim::ScenarioState> sample_evaluation_states(
    const sim::ScenarioConfig& config, int count, std::uint64_t seed);

// States outside the training domain: alternately a target-lane follower
// beyond the relevance limit and a missing target-lane leader.
std::vector<sim::ScenarioState> sample_out_of_domain_states(
    const sim::ScenarioConfig& config, int count, std::uint64_t seed);

bool is_out_of_domain(const sim::ScenarioState& state,
                      const sim::ScenarioConfig& config);

struct StyleSummary {
  std::string style;
  std::string agent;  // "rl" or "benchmark"
  std::array<double, 3> mae{};
  double accuracy = 0.0;
  int n = 0;
};

struct ExportItem {
  std::string style;
  std::vector<LaneChangePoint> points;
};

// Writes <dir>/points.csv and <dir>/summary.json. Output bytes depend only
// on the inputs.
void export_results(const std::vector<ExportItem>& items,
                    const std::vector<StyleSummary>& summaries,
                    const std::string& dir);

}  // namespace lanechange::eval
