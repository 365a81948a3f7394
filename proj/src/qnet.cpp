#include "lanechange/qnet.hpp"

#include <cmath>
#include <fstream>
#include <random>

namespace lanechange::qnet {
namespace {

bool all_finite(const Eigen::MatrixXd& m) { return m.allFinite(); }

Eigen::MatrixXd to_matrix(std::span<const Sample> batch) {
  Eigen::MatrixXd x(kLayerDims[0], static_cast<Eigen::Index>(batch.size()));
  for (std::size_t i = 0; i < batch.size(); ++i) {
    for (int r = 0; r < kLayerDims[0]; ++r) {
      x(r, static_cast<Eigen::Index>(i)) = batch[i].state[r];
    }
  }
  return x;
}

void check_shape(const NetworkParams& p) {
  if (p.layers.size() != static_cast<std::size_t>(kNumLayers)) {
    throw std::invalid_argument("network: wrong number of layers");
  }
  for (int l = 0; l < kNumLayers; ++l) {
    const Layer& layer = p.layers[l];
    if (layer.weight.rows() != kLayerDims[l + 1] ||
        layer.weight.cols() != kLayerDims[l] ||
        layer.bias.size() != kLayerDims[l + 1]) {
      throw std::invalid_argument("network: layer " + std::to_string(l) +
                                  " has the wrong shape");
    }
  }
}

}  // namespace

bool NetworkParams::operator==(const NetworkParams& other) const {
  if (layers.size() != other.layers.size()) return false;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const Layer& a = layers[l];
    const Layer& b = other.layers[l];
    if (a.weight.rows() != b.weight.rows() ||
        a.weight.cols() != b.weight.cols() || a.bias.size() != b.bias.size()) {
      return false;
    }
    if (a.weight != b.weight || a.bias != b.bias) return false;
  }
  return true;
}

std::size_t NetworkParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.weight.size() + l.bias.size();
  return n;
}

NetworkParams zeros_like_network() {
  NetworkParams p;
  for (int l = 0; l < kNumLayers; ++l) {
    p.layers.push_back({Eigen::MatrixXd::Zero(kLayerDims[l + 1], kLayerDims[l]),
                        Eigen::VectorXd::Zero(kLayerDims[l + 1])});
  }
  return p;
}

NetworkParams init(std::uint64_t seed) {
  sim::Rng rng(seed);
  NetworkParams p = zeros_like_network();
  for (int l = 0; l < kNumLayers; ++l) {
    const double bound = std::sqrt(6.0 / kLayerDims[l]);
    std::uniform_real_distribution<double> dist(-bound, bound);
    Eigen::MatrixXd& w = p.layers[l].weight;
    // Row-major fill order so the stream maps onto the checkpoint layout.
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = dist(rng);
    }
  }
  return p;
}

Eigen::MatrixXd forward_batch(const NetworkParams& params,
                              const Eigen::MatrixXd& states) {
  if (states.rows() != kLayerDims[0]) {
    throw std::invalid_argument("forward: input must have 8 rows");
  }
  Eigen::MatrixXd a = states;
  for (int l = 0; l < kNumLayers; ++l) {
    const Layer& layer = params.layers[l];
    Eigen::MatrixXd z = layer.weight * a;
    z.colwise() += layer.bias;
    if (l + 1 < kNumLayers) {
      a = z.cwiseMax(0.0);
    } else {
      a = std::move(z);
    }
  }
  return a;
}

QValues forward(const NetworkParams& params, const sim::NormalizedState& s) {
  Eigen::MatrixXd x(kLayerDims[0], 1);
  for (int r = 0; r < kLayerDims[0]; ++r) x(r, 0) = s[r];
  const Eigen::MatrixXd q = forward_batch(params, x);
  return {q(0, 0), q(1, 0)};
}

Gradients backward(const NetworkParams& params, std::span<const Sample> batch) {
  if (batch.empty()) throw std::invalid_argument("backward: empty minibatch");
  const auto count = static_cast<Eigen::Index>(batch.size());

  // Keep pre-activations for the ReLU masks.
  std::vector<Eigen::MatrixXd> acts;
  std::vector<Eigen::MatrixXd> pre;
  acts.push_back(to_matrix(batch));
  for (int l = 0; l < kNumLayers; ++l) {
    const Layer& layer = params.layers[l];
    Eigen::MatrixXd z = layer.weight * acts.back();
    z.colwise() += layer.bias;
    if (!all_finite(z)) {
      throw NumericError("backward: non-finite value in layer " +
                         std::to_string(l) + " forward pass");
    }
    pre.push_back(z);
    acts.push_back(l + 1 < kNumLayers ? Eigen::MatrixXd(z.cwiseMax(0.0)) : z);
  }

  const Eigen::MatrixXd& q = acts.back();
  Eigen::MatrixXd delta = Eigen::MatrixXd::Zero(q.rows(), count);
  double loss = 0.0;
  for (Eigen::Index i = 0; i < count; ++i) {
    const Sample& s = batch[static_cast<std::size_t>(i)];
    if (!std::isfinite(s.target)) {
      throw NumericError("backward: non-finite target");
    }
    const int a = static_cast<int>(s.action);
    const double diff = q(a, i) - s.target;
    loss += diff * diff;
    delta(a, i) = 2.0 * diff / static_cast<double>(count);
  }

  Gradients out;
  out.loss = loss / static_cast<double>(count);
  out.grad = zeros_like_network();
  for (int l = kNumLayers - 1; l >= 0; --l) {
    out.grad.layers[l].weight.noalias() = delta * acts[l].transpose();
    out.grad.layers[l].bias = delta.rowwise().sum();
    if (l > 0) {
      Eigen::MatrixXd upstream = params.layers[l].weight.transpose() * delta;
      delta = upstream.cwiseProduct(
          (pre[l - 1].array() > 0.0).cast<double>().matrix());
    }
  }
  return out;
}

OptimizerState make_optimizer(double learning_rate, OptimizerKind kind) {
  OptimizerState opt;
  opt.kind = kind;
  opt.learning_rate = learning_rate;
  opt.first_moment = zeros_like_network();
  opt.second_moment = zeros_like_network();
  return opt;
}

void apply_update(NetworkParams& params, const NetworkParams& grads,
                  OptimizerState& opt) {
  check_shape(params);
  check_shape(grads);
  if (opt.kind == OptimizerKind::kSgd) {
    for (int l = 0; l < kNumLayers; ++l) {
      params.layers[l].weight -= opt.learning_rate * grads.layers[l].weight;
      params.layers[l].bias -= opt.learning_rate * grads.layers[l].bias;
    }
    ++opt.step;
    return;
  }
  check_shape(opt.first_moment);
  check_shape(opt.second_moment);
  ++opt.step;
  const double c1 = 1.0 - std::pow(opt.beta1, static_cast<double>(opt.step));
  const double c2 = 1.0 - std::pow(opt.beta2, static_cast<double>(opt.step));
  auto update = [&](auto& theta, const auto& g, auto& m, auto& v) {
    m = opt.beta1 * m + (1.0 - opt.beta1) * g;
    v = opt.beta2 * v + (1.0 - opt.beta2) * g.cwiseProduct(g);
    theta.array() -= opt.learning_rate * (m.array() / c1) /
                     ((v.array() / c2).sqrt() + opt.epsilon);
  };
  for (int l = 0; l < kNumLayers; ++l) {
    update(params.layers[l].weight, grads.layers[l].weight,
           opt.first_moment.layers[l].weight,
           opt.second_moment.layers[l].weight);
    update(params.layers[l].bias, grads.layers[l].bias,
           opt.first_moment.layers[l].bias, opt.second_moment.layers[l].bias);
  }
}

nlohmann::json to_checkpoint(const NetworkParams& params,
                             const std::optional<std::string>& rng_state) {
  check_shape(params);
  nlohmann::json j;
  j["version"] = kCheckpointVersion;
  j["dims"] = kLayerDims;
  j["layers"] = nlohmann::json::array();
  for (const Layer& layer : params.layers) {
    std::vector<double> w;
    w.reserve(static_cast<std::size_t>(layer.weight.size()));
    for (Eigen::Index r = 0; r < layer.weight.rows(); ++r) {
      for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) {
        w.push_back(layer.weight(r, c));
      }
    }
    std::vector<double> b(layer.bias.data(),
                          layer.bias.data() + layer.bias.size());
    j["layers"].push_back({{"weights", w}, {"biases", b}});
  }
  j["rng_state"] = rng_state ? nlohmann::json(*rng_state) : nullptr;
  return j;
}

NetworkParams from_checkpoint(const nlohmann::json& j, std::string* rng_state) {
  if (j.at("version").get<int>() != kCheckpointVersion) {
    throw std::invalid_argument("checkpoint: unsupported version");
  }
  if (j.at("dims").get<std::vector<int>>() !=
      std::vector<int>(kLayerDims.begin(), kLayerDims.end())) {
    throw std::invalid_argument("checkpoint: unexpected layer dims");
  }
  const auto& layers = j.at("layers");
  if (layers.size() != static_cast<std::size_t>(kNumLayers)) {
    throw std::invalid_argument("checkpoint: wrong number of layers");
  }
  NetworkParams p = zeros_like_network();
  for (int l = 0; l < kNumLayers; ++l) {
    const auto w = layers[l].at("weights").get<std::vector<double>>();
    const auto b = layers[l].at("biases").get<std::vector<double>>();
    Layer& layer = p.layers[l];
    if (w.size() != static_cast<std::size_t>(layer.weight.size()) ||
        b.size() != static_cast<std::size_t>(layer.bias.size())) {
      throw std::invalid_argument("checkpoint: layer " + std::to_string(l) +
                                  " size mismatch");
    }
    std::size_t k = 0;
    for (Eigen::Index r = 0; r < layer.weight.rows(); ++r) {
      for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) {
        layer.weight(r, c) = w[k++];
      }
    }
    for (Eigen::Index r = 0; r < layer.bias.size(); ++r) layer.bias(r) = b[r];
    if (!layer.weight.allFinite() || !layer.bias.allFinite()) {
      throw std::invalid_argument("checkpoint: non-finite parameter");
    }
  }
  if (rng_state != nullptr) {
    const auto& rs = j.at("rng_state");
    *rng_state = rs.is_null() ? std::string() : rs.get<std::string>();
  }
  return p;
}

void save(const NetworkParams& params, const std::string& path,
          const std::optional<std::string>& rng_state) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path);
  out << to_checkpoint(params, rng_state).dump() << '\n';
}

NetworkParams load(const std::string& path, std::string* rng_state) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path);
  return from_checkpoint(nlohmann::json::parse(in), rng_state);
}

}  // namespace lanechange::qnet
