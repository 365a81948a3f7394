#pragma once

#include <array>
#include <chrono>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "lanechange/sim.hpp"

namespace lanechange::indicators {

// Value of t_nf when the target lane has no leading car.
inline constexpr double kMissingCar = -1.0;

// Personalisation triple (t_f, t_nf, dv_nb) at a decision instant.
struct IndicatorVector {
  double t_f = 0.0;    // s
  double t_nf = 0.0;   // s, or kMissingCar
  double dv_nb = 0.0;  // m/s
  // False when the target-lane follower is beyond the relevance limit;
  // its term then contributes no error downstream.
  bool nb_relevant = true;

  bool target_front_missing() const { return t_nf == kMissingCar; }
  std::array<double, 3> values() const { return {t_f, t_nf, dv_nb}; }

  bool operator==(const IndicatorVector&) const = default;
};

enum class ProfileSource { kBuiltin, kFitted };

// Reference line I = A * v_e + b for one driving style.
struct StyleProfile {
  std::string name;
  std::array<double, 3> A{};
  std::array<double, 3> b{};
  ProfileSource source = ProfileSource::kFitted;
};

void to_json(nlohmann::json& j, const StyleProfile& p);
void from_json(const nlohmann::json& j, StyleProfile& p);

StyleProfile defensive_profile();
StyleProfile normal_profile();
StyleProfile aggressive_profile();
std::vector<StyleProfile> builtin_profiles();
// "defensive" | "normal" | "aggressive" (case-insensitive). Throws
// std::invalid_argument for anything else.
StyleProfile builtin_profile(const std::string& name);
// Builtin name, or else a path to a profile JSON file. Throws
// std::invalid_argument when neither works.
StyleProfile resolve_profile(const std::string& style_or_path);

struct DecisionRecord {
  sim::ScenarioState state;
  IndicatorVector indicators;
  double v_e = 0.0;
  Action decision = Action::kKeep;
  std::int64_t wall_time_ms = 0;  // unix epoch milliseconds
  std::string driver_id;
};

nlohmann::json record_to_json(const DecisionRecord& r);
// Parses and re-derives the indicators from the logged state; throws
// std::invalid_argument if the logged indicators do not recompute exactly.
DecisionRecord record_from_json(const nlohmann::json& j,
                                const sim::ScenarioConfig& config);

std::vector<DecisionRecord> read_records(const std::string& path,
                                         const sim::ScenarioConfig& config);
void write_records(const std::string& path,
                   const std::vector<DecisionRecord>& records);

IndicatorVector compute_indicators(const sim::ScenarioState& state,
                                   const sim::ScenarioConfig& config);

IndicatorVector reference_values(const StyleProfile& profile, double v_e,
                                 double speed_scale = 1.0);

// Per-indicator simple linear regression on v_e over CHANGE records.
// Records with a missing target-lane leader are dropped, irrelevant dv_nb
// entries are dropped from that row, and capped TTCs are dropped from
// their row. Throws std::invalid_argument when a row has fewer than two
// distinct speeds.
StyleProfile fit_profile_ols(const std::vector<DecisionRecord>& records,
                             const sim::ScenarioConfig& config,
                             const std::string& name = "fitted");

struct Correlation {
  double r = 0.0;
  double p_value = 1.0;
};

Correlation pearson_correlation(const std::vector<double>& xs,
                                const std::vector<double>& ys);

using Feature = std::array<double, 3>;

struct Clustering {
  std::vector<int> assignment;
  std::vector<Feature> centroids;  // original units
  std::vector<std::string> labels;
  std::vector<bool> degenerate;    // cluster received no points
  int iterations = 0;
};

// k-means with k-means++ seeding on per-dimension standardised features.
// Clusters are ordered by ascending t_f centroid; for k = 3 they are named
// Aggressive, Normal, Defensive. Result is independent of input order.
Clustering cluster_styles(const std::vector<Feature>& features, int k,
                          std::uint64_t seed, int max_iterations = 100);

}  // namespace lanechange::indicators
