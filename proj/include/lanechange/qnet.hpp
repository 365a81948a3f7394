#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "lanechange/sim.hpp"

namespace lanechange::qnet {

// 8 inputs, three ReLU hidden layers of 128, 2 linear outputs.
inline constexpr std::array<int, 5> kLayerDims{8, 128, 128, 128, 2};
inline constexpr int kNumLayers = static_cast<int>(kLayerDims.size()) - 1;
inline constexpr int kCheckpointVersion = 1;

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Layer {
  Eigen::MatrixXd weight;  // out x in
  Eigen::VectorXd bias;    // out
};

struct NetworkParams {
  std::vector<Layer> layers;

  bool operator==(const NetworkParams& other) const;
  std::size_t parameter_count() const;
};

// Parameter-shaped container reused for gradients and Adam moments.
NetworkParams zeros_like_network();

// He-uniform weights U(-sqrt(6/fan_in), sqrt(6/fan_in)), zero biases.
NetworkParams init(std::uint64_t seed);

// Q-values in action order [CHANGE, KEEP].
using QValues = std::array<double, 2>;

QValues forward(const NetworkParams& params, const sim::NormalizedState& state);

// states: 8 x B column batch; returns 2 x B.
Eigen::MatrixXd forward_batch(const NetworkParams& params,
                              const Eigen::MatrixXd& states);

struct Sample {
  sim::NormalizedState state{};
  Action action = Action::kKeep;
  double target = 0.0;
};

struct Gradients {
  NetworkParams grad;
  double loss = 0.0;  // mean over the minibatch of (target - Q(s, a))^2
};

// Exact gradient of the minibatch loss. Targets are constants. Throws
// NumericError if the forward pass produces a non-finite value.
Gradients backward(const NetworkParams& params, std::span<const Sample> batch);

enum class OptimizerKind { kAdam, kSgd };

struct OptimizerState {
  OptimizerKind kind = OptimizerKind::kAdam;
  double learning_rate = 0.005;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  NetworkParams first_moment;
  NetworkParams second_moment;
  std::int64_t step = 0;
};

OptimizerState make_optimizer(double learning_rate,
                              OptimizerKind kind = OptimizerKind::kAdam);

void apply_update(NetworkParams& params, const NetworkParams& grads,
                  OptimizerState& opt);

nlohmann::json to_checkpoint(const NetworkParams& params,
                             const std::optional<std::string>& rng_state = {});
NetworkParams from_checkpoint(const nlohmann::json& j,
                              std::string* rng_state = nullptr);

void save(const NetworkParams& params, const std::string& path,
          const std::optional<std::string>& rng_state = {});
NetworkParams load(const std::string& path, std::string* rng_state = nullptr);

}  // namespace lanechange::qnet
