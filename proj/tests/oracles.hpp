#pragma once

// Test-only reference computations, written independently of the library
// code paths they check.

#include <algorithm>
#include <array>
#include <cmath>
#include <random>
#include <span>
#include <vector>

#include "lanechange/qnet.hpp"
#include "lanechange/reward.hpp"

namespace oracle {

using lanechange::qnet::NetworkParams;
using lanechange::qnet::Sample;

struct NaiveForward {
  std::array<double, 2> q{};
  std::vector<double> last_hidden;
  std::vector<bool> pattern;  // ReLU on/off for every hidden unit
};

// Scalar loops over the parameters, no Eigen arithmetic.
inline NaiveForward naive_forward(const NetworkParams& p,
                                  const std::array<double, 8>& x) {
  NaiveForward out;
  std::vector<double> a(x.begin(), x.end());
  const std::size_t layers = p.layers.size();
  for (std::size_t l = 0; l < layers; ++l) {
    const auto& w = p.layers[l].weight;
    const auto& b = p.layers[l].bias;
    std::vector<double> z(static_cast<std::size_t>(w.rows()));
    for (long r = 0; r < w.rows(); ++r) {
      double acc = b(r);
      for (long c = 0; c < w.cols(); ++c) acc += w(r, c) * a[c];
      z[r] = acc;
    }
    if (l + 1 < layers) {
      for (double& v : z) {
        out.pattern.push_back(v > 0.0);
        v = std::max(v, 0.0);
      }
      a = z;
    } else {
      out.last_hidden = a;
      out.q = {z[0], z[1]};
    }
  }
  return out;
}

inline double naive_loss(const NetworkParams& p, std::span<const Sample> batch,
                         std::vector<bool>* pattern = nullptr) {
  double sum = 0.0;
  if (pattern) pattern->clear();
  for (const Sample& s : batch) {
    const NaiveForward f = naive_forward(p, s.state);
    const double d = f.q[static_cast<int>(s.action)] - s.target;
    sum += d * d;
    if (pattern) {
      pattern->insert(pattern->end(), f.pattern.begin(), f.pattern.end());
    }
  }
  return sum / static_cast<double>(batch.size());
}

struct GradientCheck {
  double max_relative_error = 0.0;
  int checked = 0;
  int skipped_kinks = 0;
};

// Central differences at step h on a random subset of coordinates. Any
// coordinate whose perturbation flips a ReLU is skipped (the loss is not
// differentiable across the kink) and counted.
inline GradientCheck finite_difference_check(NetworkParams params,
                                             const NetworkParams& analytic,
                                             std::span<const Sample> batch,
                                             double h, int per_matrix,
                                             std::mt19937_64& rng) {
  GradientCheck out;
  std::vector<bool> base_pattern, plus_pattern, minus_pattern;
  naive_loss(params, batch, &base_pattern);
  auto probe = [&](double& param, double grad) {
    const double saved = param;
    param = saved + h;
    const double lp = naive_loss(params, batch, &plus_pattern);
    param = saved - h;
    const double lm = naive_loss(params, batch, &minus_pattern);
    param = saved;
    if (plus_pattern != base_pattern || minus_pattern != base_pattern) {
      ++out.skipped_kinks;
      return;
    }
    const double fd = (lp - lm) / (2.0 * h);
    const double scale = std::max({std::abs(fd), std::abs(grad), 1e-6});
    out.max_relative_error =
        std::max(out.max_relative_error, std::abs(fd - grad) / scale);
    ++out.checked;
  };
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    auto& w = params.layers[l].weight;
    auto& b = params.layers[l].bias;
    const auto& gw = analytic.layers[l].weight;
    const auto& gb = analytic.layers[l].bias;
    std::uniform_int_distribution<long> row(0, w.rows() - 1);
    std::uniform_int_distribution<long> col(0, w.cols() - 1);
    const long count = std::min<long>(per_matrix, w.size());
    for (long i = 0; i < count; ++i) {
      const long r = row(rng), c = col(rng);
      probe(w(r, c), gw(r, c));
    }
    for (long r = 0; r < std::min<long>(per_matrix / 4 + 1, b.size()); ++r) {
      const long rr = row(rng);
      probe(b(rr), gb(rr));
    }
  }
  return out;
}

// Reward computed straight from the piecewise definition, used to check
// the greedy benchmark and the library reward.
inline double piecewise_change_reward(double e, double m, double n) {
  if (e <= m) return 1.0;
  if (e >= n) return 0.0;
  return (1.0 / (m - n)) * e - n / (m - n);
}

}  // namespace oracle
