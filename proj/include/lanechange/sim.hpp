#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

namespace lanechange {

// Output order of the Q-network is [CHANGE, KEEP].
enum class Action : int { kChange = 0, kKeep = 1 };

std::string to_string(Action a);
Action action_from_string(const std::string& s);

namespace sim {

enum class Role { kEgo, kFront, kTargetFront, kTargetBehind };

struct VehicleState {
  Role role = Role::kEgo;
  double x = 0.0;  // m
  double v = 0.0;  // m/s

  bool operator==(const VehicleState&) const = default;
};

struct ScenarioState {
  VehicleState ego{Role::kEgo};
  VehicleState front{Role::kFront};
  VehicleState target_front{Role::kTargetFront};
  VehicleState target_behind{Role::kTargetBehind};
  double t = 0.0;
  int step_index = 0;
  // Only false for injected out-of-domain evaluation states; sampled
  // training states always carry all three neighbours.
  bool target_front_present = true;

  double front_gap() const { return front.x - ego.x; }
  double target_front_gap() const { return target_front.x - ego.x; }
  double behind_gap() const { return ego.x - target_behind.x; }

  bool operator==(const ScenarioState&) const = default;
};

struct Range {
  double min = 0.0;
  double max = 0.0;
};

struct ScenarioConfig {
  double dt = 0.1;
  double v_max = 30.0;
  double sensing_range = 200.0;
  Range ego_speed{15.0, 27.0};
  Range neighbor_speed{5.0, 30.0};
  Range front_gap{10.0, 120.0};
  Range target_front_gap{10.0, 120.0};
  Range target_behind_gap{5.0, 100.0};
  double behind_relevance_limit = 100.0;
  double min_front_gap = 5.0;
  int max_steps = 200;
  std::uint64_t rng_seed = 0;

  // Indicator conventions. The reference lines take v_e multiplied by
  // reference_speed_scale (1 = m/s, 3.6 = kph).
  double ttc_cap = 99.0;
  double reference_speed_scale = 1.0;
  bool invert_dv_nb = false;

  // Throws std::invalid_argument describing the first violated constraint.
  void validate() const;
};

void to_json(nlohmann::json& j, const ScenarioConfig& c);
// Rejects unknown keys; missing keys keep their defaults.
void from_json(const nlohmann::json& j, ScenarioConfig& c);

void to_json(nlohmann::json& j, const ScenarioState& s);
void from_json(const nlohmann::json& j, ScenarioState& s);

inline constexpr std::size_t kStateSize = 8;
inline constexpr double kNormalizationFloor = 1e-6;

// [v_e, x_e, v_f, x_f, v_nf, x_nf, v_nb, x_nb], every entry in (0, 1].
using NormalizedState = std::array<double, kStateSize>;

// kForcedStop covers a front gap below min_front_gap and any overtake
// between ego and a target-lane neighbour.
enum class Termination { kNone, kChanged, kMaxSteps, kForcedStop };

std::string to_string(Termination t);

struct StepResult {
  ScenarioState state;
  bool terminal = false;
  Termination termination = Termination::kNone;
};

using Rng = std::mt19937_64;

// Draws a fresh episode start. Throws std::runtime_error if the configured
// ranges cannot produce a valid state within the retry budget.
ScenarioState sample_initial_state(const ScenarioConfig& config, Rng& rng);

StepResult step(const ScenarioState& state, Action action,
                const ScenarioConfig& config);

NormalizedState normalize_state(const ScenarioState& state,
                                const ScenarioConfig& config);

// Checks the ScenarioState invariants for the training domain.
bool is_valid(const ScenarioState& state);

// One line of an exported episode trace.
struct TraceRecord {
  ScenarioState state;
  Action action = Action::kKeep;
  bool terminal = false;
};

nlohmann::json trace_record_to_json(const TraceRecord& r);
TraceRecord trace_record_from_json(const nlohmann::json& j);

struct ReplayReport {
  std::size_t steps_checked = 0;
  std::size_t mismatches = 0;
  std::vector<std::string> details;
};

// Re-steps a logged episode from its first record and compares every
// subsequent state and terminal flag bit-exactly.
ReplayReport replay_trace(const std::vector<TraceRecord>& trace,
                          const ScenarioConfig& config);

}  // namespace sim
}  // namespace lanechange
