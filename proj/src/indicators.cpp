#include "lanechange/indicators.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <stdexcept>

#include <boost/math/distributions/students_t.hpp>

#include "lanechange/json_util.hpp"

namespace lanechange::indicators {
namespace {

double time_to_collision(double gap, double closing_speed, double cap) {
  if (closing_speed <= 0.0) return cap;
  return std::min(gap / closing_speed, cap);
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return std::tolower(c); });
  return s;
}

struct LineFit {
  double slope = 0.0;
  double intercept = 0.0;
};

LineFit ols_line(const std::vector<double>& xs, const std::vector<double>& ys,
                 const char* row) {
  const std::size_t n = xs.size();
  if (n < 2) {
    throw std::invalid_argument(std::string("fit_profile_ols: row '") + row +
                                "' needs at least two usable records");
  }
  const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
  const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / n;
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxx += (xs[i] - mx) * (xs[i] - mx);
    sxy += (xs[i] - mx) * (ys[i] - my);
  }
  if (!(sxx > 0.0)) {
    throw std::invalid_argument(std::string("fit_profile_ols: row '") + row +
                                "' has a degenerate design (all v_e equal)");
  }
  const double slope = sxy / sxx;
  return {slope, my - slope * mx};
}

double squared_distance(const Feature& a, const Feature& b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d += (a[i] - b[i]) * (a[i] - b[i]);
  return d;
}

}  // namespace

void to_json(nlohmann::json& j, const StyleProfile& p) {
  j = nlohmann::json{{"name", p.name},
                     {"A", p.A},
                     {"b", p.b},
                     {"source", p.source == ProfileSource::kBuiltin
                                    ? "builtin"
                                    : "fitted"}};
}

void from_json(const nlohmann::json& j, StyleProfile& p) {
  reject_unknown_keys(j, {"name", "A", "b", "source"}, "style profile");
  p.name = j.at("name").get<std::string>();
  p.A = j.at("A").get<std::array<double, 3>>();
  p.b = j.at("b").get<std::array<double, 3>>();
  const std::string source = j.value("source", std::string("fitted"));
  if (source == "builtin") {
    p.source = ProfileSource::kBuiltin;
  } else if (source == "fitted") {
    p.source = ProfileSource::kFitted;
  } else {
    throw ConfigError("style profile: unknown source '" + source + "'");
  }
  for (std::size_t i = 0; i < 3; ++i) {
    if (!std::isfinite(p.A[i]) || !std::isfinite(p.b[i])) {
      throw ConfigError("style profile: A and b must be finite");
    }
  }
}

StyleProfile defensive_profile() {
  return {"Defensive", {0.45, 0.24, 1.01}, {-3.26, 0.42, -9.02},
          ProfileSource::kBuiltin};
}

StyleProfile normal_profile() {
  return {"Normal", {0.23, 0.16, 0.90}, {-0.75, 1.11, -6.18},
          ProfileSource::kBuiltin};
}

StyleProfile aggressive_profile() {
  return {"Aggressive", {0.14, 0.12, 1.01}, {-0.25, 0.86, -9.25},
          ProfileSource::kBuiltin};
}

std::vector<StyleProfile> builtin_profiles() {
  return {defensive_profile(), normal_profile(), aggressive_profile()};
}

StyleProfile builtin_profile(const std::string& name) {
  const std::string key = lower(name);
  if (key == "defensive") return defensive_profile();
  if (key == "normal") return normal_profile();
  if (key == "aggressive") return aggressive_profile();
  throw std::invalid_argument("unknown builtin style '" + name + "'");
}

StyleProfile resolve_profile(const std::string& style_or_path) {
  const std::string key = lower(style_or_path);
  if (key == "defensive" || key == "normal" || key == "aggressive") {
    return builtin_profile(key);
  }
  std::ifstream in(style_or_path);
  if (!in) {
    throw std::invalid_argument("style '" + style_or_path +
                                "' is neither a builtin style nor a readable "
                                "profile file");
  }
  try {
    return nlohmann::json::parse(in).get<StyleProfile>();
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument("profile file '" + style_or_path +
                                "': " + e.what());
  }
}

IndicatorVector compute_indicators(const sim::ScenarioState& s,
                                   const sim::ScenarioConfig& config) {
  IndicatorVector out;
  out.t_f = time_to_collision(s.front_gap(), s.ego.v - s.front.v,
                              config.ttc_cap);
  out.t_nf = s.target_front_present
                 ? time_to_collision(s.target_front_gap(),
                                     s.ego.v - s.target_front.v,
                                     config.ttc_cap)
                 : kMissingCar;
  out.dv_nb = s.ego.v - s.target_behind.v;
  if (config.invert_dv_nb) out.dv_nb = -out.dv_nb;
  out.nb_relevant = s.behind_gap() <= config.behind_relevance_limit;
  return out;
}

IndicatorVector reference_values(const StyleProfile& p, double v_e,
                                 double speed_scale) {
  const double v = v_e * speed_scale;
  return {p.A[0] * v + p.b[0], p.A[1] * v + p.b[1], p.A[2] * v + p.b[2],
          true};
}

nlohmann::json record_to_json(const DecisionRecord& r) {
  return {{"state", r.state},
          {"indicators",
           {{"tf", r.indicators.t_f},
            {"tnf", r.indicators.t_nf},
            {"dvnb", r.indicators.dv_nb},
            {"nb_relevant", r.indicators.nb_relevant}}},
          {"v_e", r.v_e},
          {"decision", to_string(r.decision)},
          {"wall_time_ms", r.wall_time_ms},
          {"driver_id", r.driver_id}};
}

DecisionRecord record_from_json(const nlohmann::json& j,
                                const sim::ScenarioConfig& config) {
  reject_unknown_keys(j,
                      {"state", "indicators", "v_e", "decision",
                       "wall_time_ms", "driver_id"},
                      "decision record");
  DecisionRecord r;
  r.state = j.at("state").get<sim::ScenarioState>();
  const auto& ind = j.at("indicators");
  r.indicators.t_f = ind.at("tf").get<double>();
  r.indicators.t_nf = ind.at("tnf").get<double>();
  r.indicators.dv_nb = ind.at("dvnb").get<double>();
  r.indicators.nb_relevant = ind.value("nb_relevant", true);
  r.v_e = j.at("v_e").get<double>();
  r.decision = action_from_string(j.at("decision").get<std::string>());
  r.wall_time_ms = j.value("wall_time_ms", std::int64_t{0});
  r.driver_id = j.value("driver_id", std::string());
  if (!(compute_indicators(r.state, config) == r.indicators)) {
    throw std::invalid_argument(
        "decision record: indicators do not recompute from the logged state");
  }
  if (r.v_e != r.state.ego.v) {
    throw std::invalid_argument("decision record: v_e differs from ego speed");
  }
  return r;
}

std::vector<DecisionRecord> read_records(const std::string& path,
                                         const sim::ScenarioConfig& config) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open records file " + path);
  std::vector<DecisionRecord> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(record_from_json(nlohmann::json::parse(line), config));
    } catch (const std::exception& e) {
      throw std::invalid_argument(path + ":" + std::to_string(line_no) + ": " +
                                  e.what());
    }
  }
  return out;
}

void write_records(const std::string& path,
                   const std::vector<DecisionRecord>& records) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write records file " + path);
  for (const auto& r : records) out << record_to_json(r).dump() << '\n';
}

StyleProfile fit_profile_ols(const std::vector<DecisionRecord>& records,
                             const sim::ScenarioConfig& config,
                             const std::string& name) {
  std::array<std::vector<double>, 3> xs, ys;
  for (const auto& r : records) {
    if (r.decision != Action::kChange) continue;
    if (r.indicators.target_front_missing()) continue;
    const double v = r.v_e * config.reference_speed_scale;
    if (r.indicators.t_f < config.ttc_cap) {
      xs[0].push_back(v);
      ys[0].push_back(r.indicators.t_f);
    }
    if (r.indicators.t_nf < config.ttc_cap) {
      xs[1].push_back(v);
      ys[1].push_back(r.indicators.t_nf);
    }
    if (r.indicators.nb_relevant) {
      xs[2].push_back(v);
      ys[2].push_back(r.indicators.dv_nb);
    }
  }
  static constexpr const char* kRows[] = {"t_f", "t_nf", "dv_nb"};
  StyleProfile p;
  p.name = name;
  p.source = ProfileSource::kFitted;
  for (std::size_t i = 0; i < 3; ++i) {
    const LineFit line = ols_line(xs[i], ys[i], kRows[i]);
    p.A[i] = line.slope;
    p.b[i] = line.intercept;
  }
  return p;
}

Correlation pearson_correlation(const std::vector<double>& xs,
                                const std::vector<double>& ys) {
  if (xs.size() != ys.size()) {
    throw std::invalid_argument("pearson_correlation: length mismatch");
  }
  const std::size_t n = xs.size();
  if (n < 3) {
    throw std::invalid_argument("pearson_correlation: need at least 3 pairs");
  }
  const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
  const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / n;
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = xs[i] - mx;
    const double dy = ys[i] - my;
    sxx += dx * dx;
    syy += dy * dy;
    sxy += dx * dy;
  }
  if (!(sxx > 0.0) || !(syy > 0.0)) {
    throw std::invalid_argument("pearson_correlation: zero variance");
  }
  Correlation c;
  c.r = std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
  const double dof = static_cast<double>(n - 2);
  const double one_minus_r2 = 1.0 - c.r * c.r;
  if (one_minus_r2 <= 0.0) {
    c.p_value = 0.0;
    return c;
  }
  const double t = c.r * std::sqrt(dof / one_minus_r2);
  boost::math::students_t dist(dof);
  c.p_value = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t)));
  return c;
}

Clustering cluster_styles(const std::vector<Feature>& features, int k,
                          std::uint64_t seed, int max_iterations) {
  const std::size_t n = features.size();
  if (k <= 0) throw std::invalid_argument("cluster_styles: k must be > 0");
  if (static_cast<std::size_t>(k) > n) {
    throw std::invalid_argument("cluster_styles: k exceeds number of points");
  }
  const std::size_t kk = static_cast<std::size_t>(k);

  // Canonical ordering makes the seeding independent of input order.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a,
                                                   std::size_t b) {
    return features[a] < features[b];
  });

  Feature mean{}, scale{};
  for (const auto& f : features) {
    for (std::size_t d = 0; d < 3; ++d) mean[d] += f[d] / n;
  }
  for (const auto& f : features) {
    for (std::size_t d = 0; d < 3; ++d) {
      scale[d] += (f[d] - mean[d]) * (f[d] - mean[d]) / n;
    }
  }
  for (auto& s : scale) s = s > 0.0 ? std::sqrt(s) : 1.0;

  std::vector<Feature> z(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t d = 0; d < 3; ++d) {
      z[i][d] = (features[order[i]][d] - mean[d]) / scale[d];
    }
  }

  sim::Rng rng(seed);
  std::vector<Feature> centers;
  centers.push_back(
      z[std::uniform_int_distribution<std::size_t>(0, n - 1)(rng)]);
  std::vector<double> d2(n);
  while (centers.size() < kk) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& c : centers) best = std::min(best, squared_distance(z[i], c));
      d2[i] = best;
      total += best;
    }
    if (!(total > 0.0)) {
      // Every point coincides with a chosen centre.
      centers.push_back(centers.front());
      continue;
    }
    double pick = std::uniform_real_distribution<double>(0.0, total)(rng);
    std::size_t chosen = n - 1;
    for (std::size_t i = 0; i < n; ++i) {
      pick -= d2[i];
      if (pick < 0.0 && d2[i] > 0.0) {
        chosen = i;
        break;
      }
    }
    centers.push_back(z[chosen]);
  }

  std::vector<int> assign(n, -1);
  int iterations = 0;
  for (; iterations < max_iterations; ++iterations) {
    bool changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      int best = 0;
      double best_d = squared_distance(z[i], centers[0]);
      for (std::size_t c = 1; c < kk; ++c) {
        const double d = squared_distance(z[i], centers[c]);
        if (d < best_d) {
          best_d = d;
          best = static_cast<int>(c);
        }
      }
      if (assign[i] != best) {
        assign[i] = best;
        changed = true;
      }
    }
    std::vector<Feature> sums(kk, Feature{});
    std::vector<std::size_t> counts(kk, 0);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t d = 0; d < 3; ++d) sums[assign[i]][d] += z[i][d];
      ++counts[assign[i]];
    }
    for (std::size_t c = 0; c < kk; ++c) {
      if (counts[c] == 0) continue;
      for (std::size_t d = 0; d < 3; ++d) centers[c][d] = sums[c][d] / counts[c];
    }
    if (!changed) break;
  }

  std::vector<std::size_t> counts(kk, 0);
  for (int a : assign) ++counts[a];

  // Order clusters by ascending t_f centroid.
  std::vector<std::size_t> rank(kk);
  std::iota(rank.begin(), rank.end(), 0);
  std::stable_sort(rank.begin(), rank.end(), [&](std::size_t a, std::size_t b) {
    if ((counts[a] == 0) != (counts[b] == 0)) return counts[b] == 0;
    return centers[a][0] < centers[b][0];
  });
  std::vector<int> relabel(kk);
  for (std::size_t r = 0; r < kk; ++r) relabel[rank[r]] = static_cast<int>(r);

  Clustering out;
  out.iterations = iterations;
  out.assignment.assign(n, 0);
  for (std::size_t i = 0; i < n; ++i) out.assignment[order[i]] = relabel[assign[i]];
  for (std::size_t r = 0; r < kk; ++r) {
    const Feature& c = centers[rank[r]];
    Feature original;
    for (std::size_t d = 0; d < 3; ++d) original[d] = c[d] * scale[d] + mean[d];
    out.centroids.push_back(original);
    out.degenerate.push_back(counts[rank[r]] == 0);
    if (kk == 3) {
      static constexpr const char* kNames[] = {"Aggressive", "Normal",
                                               "Defensive"};
      out.labels.emplace_back(kNames[r]);
    } else {
      out.labels.push_back("cluster_" + std::to_string(r));
    }
  }
  return out;
}

}  // namespace lanechange::indicators
