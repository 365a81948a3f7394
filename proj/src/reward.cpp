#include "lanechange/reward.hpp"

#include <cmath>
#include <stdexcept>

#include "lanechange/json_util.hpp"

namespace lanechange::reward {

void RewardParams::validate() const {
  for (std::size_t i = 0; i < 3; ++i) {
    if (!(m[i] >= 0.0) || !(m[i] < n[i]) || !std::isfinite(n[i])) {
      throw ConfigError("reward: need 0 <= m < n for every indicator");
    }
  }
}

void to_json(nlohmann::json& j, const RewardParams& p) {
  j = nlohmann::json{{"m", p.m}, {"n", p.n}};
}

void from_json(const nlohmann::json& j, RewardParams& p) {
  reject_unknown_keys(j, {"m", "n"}, "reward");
  read_if_present(j, "m", p.m);
  read_if_present(j, "n", p.n);
  p.validate();
}

double absolute_error(double actual, double reference) {
  return std::abs(actual - reference);
}

double indicator_reward(double error, Action action, double m, double n) {
  if (!(m >= 0.0) || !(m < n)) {
    throw std::invalid_argument("indicator_reward: need 0 <= m < n");
  }
  double change;
  if (error <= m) {
    change = 1.0;
  } else if (error >= n) {
    change = 0.0;
  } else {
    change = (n - error) / (n - m);
  }
  if (action == Action::kChange) return change;
  if (error <= m) return 0.0;
  if (error >= n) return 1.0;
  return (error - m) / (n - m);
}

std::array<double, 3> indicator_errors(
    const indicators::IndicatorVector& actual,
    const indicators::IndicatorVector& reference) {
  return {absolute_error(actual.t_f, reference.t_f),
          actual.target_front_missing()
              ? 0.0
              : absolute_error(actual.t_nf, reference.t_nf),
          actual.nb_relevant ? absolute_error(actual.dv_nb, reference.dv_nb)
                             : 0.0};
}

RewardBreakdown total_reward(const indicators::IndicatorVector& actual,
                             const indicators::IndicatorVector& reference,
                             Action action, const RewardParams& params) {
  const auto e = indicator_errors(actual, reference);
  RewardBreakdown out;
  out.r_f = indicator_reward(e[0], action, params.m[0], params.n[0]);
  out.r_nf = indicator_reward(e[1], action, params.m[1], params.n[1]);
  out.r_nb = indicator_reward(e[2], action, params.m[2], params.n[2]);
  out.total = out.r_f + out.r_nf + out.r_nb;
  return out;
}

RewardBreakdown state_reward(const sim::ScenarioState& state, Action action,
                             const indicators::StyleProfile& profile,
                             const RewardParams& params,
                             const sim::ScenarioConfig& config) {
  const auto actual = indicators::compute_indicators(state, config);
  const auto reference = indicators::reference_values(
      profile, state.ego.v, config.reference_speed_scale);
  return total_reward(actual, reference, action, params);
}

}  // namespace lanechange::reward
