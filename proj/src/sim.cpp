#include "lanechange/sim.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "lanechange/json_util.hpp"

namespace lanechange {

std::string to_string(Action a) {
  return a == Action::kChange ? "CHANGE" : "KEEP";
}

Action action_from_string(const std::string& s) {
  if (s == "CHANGE") return Action::kChange;
  if (s == "KEEP") return Action::kKeep;
  throw std::invalid_argument("unknown action '" + s + "'");
}

namespace sim {
namespace {

constexpr int kMaxSampleAttempts = 1000;

void check_range(const Range& r, const char* name) {
  if (!std::isfinite(r.min) || !std::isfinite(r.max) || r.min > r.max) {
    throw ConfigError(std::string("scenario: range '") + name +
                      "' must be finite with min <= max");
  }
}

void range_to_json(nlohmann::json& j, const char* key, const Range& r) {
  j[key] = {r.min, r.max};
}

void range_from_json(const nlohmann::json& j, const char* key, Range& r) {
  auto it = j.find(key);
  if (it == j.end()) return;
  if (!it->is_array() || it->size() != 2) {
    throw ConfigError(std::string("scenario: '") + key +
                      "' must be a [min, max] pair");
  }
  r.min = (*it)[0].get<double>();
  r.max = (*it)[1].get<double>();
}

double clamp_unit(double value) {
  if (!(value > kNormalizationFloor)) return kNormalizationFloor;  // NaN too
  return std::min(value, 1.0);
}

void vehicle_to_json(nlohmann::json& j, const char* key,
                     const VehicleState& v) {
  j[key] = {{"x", v.x}, {"v", v.v}};
}

void vehicle_from_json(const nlohmann::json& j, const char* key,
                       VehicleState& v) {
  const auto& o = j.at(key);
  v.x = o.at("x").get<double>();
  v.v = o.at("v").get<double>();
}

}  // namespace

std::string to_string(Termination t) {
  switch (t) {
    case Termination::kNone:
      return "none";
    case Termination::kChanged:
      return "changed";
    case Termination::kMaxSteps:
      return "max_steps";
    case Termination::kForcedStop:
      return "forced_stop";
  }
  return "none";
}

void ScenarioConfig::validate() const {
  if (!(dt > 0.0)) throw ConfigError("scenario: dt must be > 0");
  if (!(v_max > 0.0)) throw ConfigError("scenario: v_max must be > 0");
  if (!(sensing_range > 0.0)) {
    throw ConfigError("scenario: sensing_range must be > 0");
  }
  check_range(ego_speed, "ego_speed_range");
  check_range(neighbor_speed, "neighbor_speed_range");
  check_range(front_gap, "front_gap_range");
  check_range(target_front_gap, "target_front_gap_range");
  check_range(target_behind_gap, "target_behind_gap_range");
  if (ego_speed.min < 0.0 || neighbor_speed.min < 0.0) {
    throw ConfigError("scenario: speeds must be non-negative");
  }
  if (!(behind_relevance_limit > 0.0)) {
    throw ConfigError("scenario: behind_relevance_limit must be > 0");
  }
  if (!(min_front_gap >= 0.0)) {
    throw ConfigError("scenario: min_front_gap must be >= 0");
  }
  if (max_steps <= 0) throw ConfigError("scenario: max_steps must be > 0");
  if (!(ttc_cap > 0.0)) throw ConfigError("scenario: ttc_cap must be > 0");
  if (!(reference_speed_scale > 0.0)) {
    throw ConfigError("scenario: reference_speed_scale must be > 0");
  }
}

void to_json(nlohmann::json& j, const ScenarioConfig& c) {
  j = nlohmann::json::object();
  j["dt"] = c.dt;
  j["v_max"] = c.v_max;
  j["sensing_range"] = c.sensing_range;
  range_to_json(j, "ego_speed_range", c.ego_speed);
  range_to_json(j, "neighbor_speed_range", c.neighbor_speed);
  range_to_json(j, "front_gap_range", c.front_gap);
  range_to_json(j, "target_front_gap_range", c.target_front_gap);
  range_to_json(j, "target_behind_gap_range", c.target_behind_gap);
  j["behind_relevance_limit"] = c.behind_relevance_limit;
  j["min_front_gap"] = c.min_front_gap;
  j["max_steps"] = c.max_steps;
  j["rng_seed"] = c.rng_seed;
  j["ttc_cap"] = c.ttc_cap;
  j["reference_speed_scale"] = c.reference_speed_scale;
  j["invert_dv_nb"] = c.invert_dv_nb;
}

void from_json(const nlohmann::json& j, ScenarioConfig& c) {
  reject_unknown_keys(
      j,
      {"dt", "v_max", "sensing_range", "ego_speed_range",
       "neighbor_speed_range", "front_gap_range", "target_front_gap_range",
       "target_behind_gap_range", "behind_relevance_limit", "min_front_gap",
       "max_steps", "rng_seed", "ttc_cap", "reference_speed_scale",
       "invert_dv_nb"},
      "scenario");
  read_if_present(j, "dt", c.dt);
  read_if_present(j, "v_max", c.v_max);
  read_if_present(j, "sensing_range", c.sensing_range);
  range_from_json(j, "ego_speed_range", c.ego_speed);
  range_from_json(j, "neighbor_speed_range", c.neighbor_speed);
  range_from_json(j, "front_gap_range", c.front_gap);
  range_from_json(j, "target_front_gap_range", c.target_front_gap);
  range_from_json(j, "target_behind_gap_range", c.target_behind_gap);
  read_if_present(j, "behind_relevance_limit", c.behind_relevance_limit);
  read_if_present(j, "min_front_gap", c.min_front_gap);
  read_if_present(j, "max_steps", c.max_steps);
  read_if_present(j, "rng_seed", c.rng_seed);
  read_if_present(j, "ttc_cap", c.ttc_cap);
  read_if_present(j, "reference_speed_scale", c.reference_speed_scale);
  read_if_present(j, "invert_dv_nb", c.invert_dv_nb);
}

void to_json(nlohmann::json& j, const ScenarioState& s) {
  j = nlohmann::json::object();
  j["t"] = s.t;
  j["step"] = s.step_index;
  vehicle_to_json(j, "ego", s.ego);
  vehicle_to_json(j, "f", s.front);
  if (s.target_front_present) {
    vehicle_to_json(j, "nf", s.target_front);
  } else {
    j["nf"] = nullptr;
  }
  vehicle_to_json(j, "nb", s.target_behind);
}

void from_json(const nlohmann::json& j, ScenarioState& s) {
  s = ScenarioState{};
  s.t = j.at("t").get<double>();
  s.step_index = j.at("step").get<int>();
  vehicle_from_json(j, "ego", s.ego);
  vehicle_from_json(j, "f", s.front);
  if (j.at("nf").is_null()) {
    s.target_front_present = false;
  } else {
    vehicle_from_json(j, "nf", s.target_front);
  }
  vehicle_from_json(j, "nb", s.target_behind);
}

bool is_valid(const ScenarioState& s) {
  const VehicleState* all[] = {&s.ego, &s.front, &s.target_front,
                               &s.target_behind};
  for (const auto* v : all) {
    if (!std::isfinite(v->x) || !std::isfinite(v->v) || v->v < 0.0) {
      return false;
    }
  }
  return s.target_front_present && s.front.x > s.ego.x &&
         s.target_front.x > s.ego.x && s.target_behind.x < s.ego.x;
}

ScenarioState sample_initial_state(const ScenarioConfig& config, Rng& rng) {
  config.validate();
  auto uniform = [&rng](const Range& r) {
    return std::uniform_real_distribution<double>(r.min, r.max)(rng);
  };
  for (int attempt = 0; attempt < kMaxSampleAttempts; ++attempt) {
    ScenarioState s;
    s.ego.v = uniform(config.ego_speed);
    s.front.v = uniform(config.neighbor_speed);
    s.target_front.v = uniform(config.neighbor_speed);
    s.target_behind.v = uniform(config.neighbor_speed);
    const double front_gap = uniform(config.front_gap);
    const double target_front_gap = uniform(config.target_front_gap);
    const double behind_gap = uniform(config.target_behind_gap);
    s.ego.x = 0.0;
    s.front.x = front_gap;
    s.target_front.x = target_front_gap;
    s.target_behind.x = -behind_gap;
    if (front_gap < config.min_front_gap || front_gap <= 0.0 ||
        target_front_gap <= 0.0 || behind_gap <= 0.0 ||
        behind_gap > config.behind_relevance_limit) {
      continue;
    }
    return s;
  }
  throw std::runtime_error(
      "sample_initial_state: no valid state after " +
      std::to_string(kMaxSampleAttempts) +
      " attempts; check gap ranges against min_front_gap and "
      "behind_relevance_limit");
}

StepResult step(const ScenarioState& state, Action action,
                const ScenarioConfig& config) {
  if (action == Action::kChange) {
    return {state, true, Termination::kChanged};
  }
  StepResult out{state, false, Termination::kNone};
  ScenarioState& s = out.state;
  for (VehicleState* v :
       {&s.ego, &s.front, &s.target_front, &s.target_behind}) {
    v->x += v->v * config.dt;
  }
  s.step_index += 1;
  s.t = s.step_index * config.dt;
  // Overtaking in the target lane would leave the four-car layout.
  const bool lane_order_broken =
      s.behind_gap() <= 0.0 ||
      (s.target_front_present && s.target_front_gap() <= 0.0);
  if (s.front_gap() < config.min_front_gap || lane_order_broken) {
    out.terminal = true;
    out.termination = Termination::kForcedStop;
  } else if (s.step_index >= config.max_steps) {
    out.terminal = true;
    out.termination = Termination::kMaxSteps;
  }
  return out;
}

NormalizedState normalize_state(const ScenarioState& s,
                                const ScenarioConfig& config) {
  const double span = 2.0 * config.sensing_range;
  auto speed = [&](double v) { return clamp_unit(v / config.v_max); };
  auto position = [&](double x) {
    return clamp_unit((x - s.ego.x + config.sensing_range) / span);
  };
  // A missing target-lane leader is placed at the edge of the sensing
  // range, moving at ego speed.
  const double nf_x = s.target_front_present
                          ? s.target_front.x
                          : s.ego.x + config.sensing_range;
  const double nf_v = s.target_front_present ? s.target_front.v : s.ego.v;
  return {speed(s.ego.v),         0.5,
          speed(s.front.v),       position(s.front.x),
          speed(nf_v),            position(nf_x),
          speed(s.target_behind.v), position(s.target_behind.x)};
}

nlohmann::json trace_record_to_json(const TraceRecord& r) {
  nlohmann::json j = r.state;
  j["action"] = to_string(r.action);
  j["terminal"] = r.terminal;
  return j;
}

TraceRecord trace_record_from_json(const nlohmann::json& j) {
  TraceRecord r;
  r.state = j.get<ScenarioState>();
  r.action = action_from_string(j.at("action").get<std::string>());
  r.terminal = j.at("terminal").get<bool>();
  return r;
}

ReplayReport replay_trace(const std::vector<TraceRecord>& trace,
                          const ScenarioConfig& config) {
  ReplayReport report;
  if (trace.empty()) return report;
  ScenarioState current = trace.front().state;
  for (std::size_t i = 0; i < trace.size(); ++i) {
    const TraceRecord& rec = trace[i];
    ++report.steps_checked;
    if (!(current == rec.state)) {
      ++report.mismatches;
      std::ostringstream msg;
      msg << "step " << i << ": state differs from re-simulated state";
      report.details.push_back(msg.str());
      current = rec.state;
    }
    const StepResult next = step(current, rec.action, config);
    if (next.terminal != rec.terminal) {
      ++report.mismatches;
      report.details.push_back("step " + std::to_string(i) +
                               ": terminal flag differs");
    }
    current = next.state;
  }
  return report;
}

}  // namespace sim
}  // namespace lanechange
