#pragma once

#include <array>

#include <json.hpp>

#include "lanechange/indicators.hpp"
#include "lanechange/sim.hpp"

namespace lanechange::reward {

// m: largest error still counted as a perfect match; n: error at which the
// indicator no longer matches at all. Order is (t_f, t_nf, dv_nb).
struct RewardParams {
  std::array<double, 3> m{0.2, 0.2, 0.5};
  std::array<double, 3> n{2.0, 2.0, 5.0};

  void validate() const;
};

void to_json(nlohmann::json& j, const RewardParams& p);
void from_json(const nlohmann::json& j, RewardParams& p);

struct RewardBreakdown {
  double r_f = 0.0;
  double r_nf = 0.0;
  double r_nb = 0.0;
  double total = 0.0;
};

double absolute_error(double actual, double reference);

// Piecewise-linear reward for one indicator. CHANGE and KEEP are exact
// complements: reward(CHANGE) + reward(KEEP) == 1 for every error.
double indicator_reward(double error, Action action, double m, double n);

// Per-indicator errors with the out-of-domain terms (missing target-lane
// leader, distant target-lane follower) forced to zero.
std::array<double, 3> indicator_errors(
    const indicators::IndicatorVector& actual,
    const indicators::IndicatorVector& reference);

RewardBreakdown total_reward(const indicators::IndicatorVector& actual,
                             const indicators::IndicatorVector& reference,
                             Action action, const RewardParams& params);

// Convenience: reward of taking `action` in `state` for a given style.
RewardBreakdown state_reward(const sim::ScenarioState& state, Action action,
                             const indicators::StyleProfile& profile,
                             const RewardParams& params,
                             const sim::ScenarioConfig& config);

}  // namespace lanechange::reward
