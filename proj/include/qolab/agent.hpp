#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "qolab/env.hpp"
#include "qolab/network.hpp"
#include "qolab/rng.hpp"

namespace qolab {

struct AgentConfig {
  std::vector<int> hidden{128, 64};
  double learning_rate = 1e-3;
  double momentum = 0.9;
  int batch_size = 64;
  double epsilon_start = 0.2;
  double epsilon_end = 0.01;
  double epsilon_decay_fraction = 0.5;  // of the run's episodes

  bool operator==(const AgentConfig&) const = default;
};

// Momentum SGD state; velocity mirrors the parameter shapes.
struct TrainerState {
  double learning_rate = 1e-3;
  double momentum = 0.9;
  NetworkParams velocity;
  std::uint64_t steps = 0;

  bool operator==(const TrainerState&) const = default;
};

// Glorot-uniform weights, zero biases.
NetworkParams init_network(int input_size, const std::vector<int>& hidden, std::uint64_t seed);
TrainerState init_trainer(const NetworkParams& params, double learning_rate, double momentum);

double predict(const NetworkParams& params, std::span<const double> features);

struct TrainingSample {
  std::vector<double> features;
  double target = 0.0;
};

// One momentum step on mean squared error; returns the loss before the step.
double train_batch(NetworkParams& params, TrainerState& trainer, std::span<const TrainingSample> batch);
double train_batch(NetworkParams& params, TrainerState& trainer, const FeatureMatrix& features,
                   std::span<const double> targets);

// velocity = momentum * velocity - lr * grad; params += velocity.
void apply_gradient(NetworkParams& params, TrainerState& trainer, const NetworkParams& grad);

// d/dparams of (f(x) - target)^2.
using GradientFn = std::function<NetworkParams(const NetworkParams&, std::span<const double>, double)>;
NetworkParams squared_error_gradient(const NetworkParams& params, std::span<const double> features, double target);

// Max relative error between `analytic` and central differences (h = 1e-5)
// over every parameter; pairs with both magnitudes below 1e-10 are skipped.
double gradient_check(const NetworkParams& params, std::span<const double> features, double target,
                      const GradientFn& analytic = squared_error_gradient);

using Featurizer = std::function<void(const EnvState&, const Action&, std::span<double>)>;

// Predicted-outcome argmin (ties to the smallest index) with probability
// 1 - epsilon, otherwise uniform over the other actions.
Action select_action(const NetworkParams& params, const EnvState& state, std::span<const Action> legal,
                     const Featurizer& featurize, double epsilon, Rng& rng);

// Predictions for every legal action, in order.
std::vector<double> score_actions(const NetworkParams& params, const EnvState& state, std::span<const Action> legal,
                                  const Featurizer& featurize);

Featurizer featurizer_for(const Environment& env);

// The value predictor plus its optimizer state and target normalization:
// targets are regressed as log(1+t) / log(1+target_cap).
struct ValueAgent {
  AgentConfig config;
  NetworkParams params;
  TrainerState trainer;
  double target_cap = 0.0;  // 0 until calibrated

  static ValueAgent create(int feature_size, const AgentConfig& config, std::uint64_t seed);
  bool calibrated() const { return target_cap > 0.0; }
  // 99th percentile of the warm-up targets.
  void calibrate(std::vector<double> raw_targets);
  double normalize(double raw_target) const;
  double epsilon_at(std::int64_t episode, std::int64_t total_episodes) const;
};

struct CheckpointMetadata {
  std::int64_t episodes_seen = 0;
  std::uint64_t agent_seed = 0;
  std::string label;
};

struct Checkpoint {
  std::string env_fingerprint;
  ValueAgent agent;
  CheckpointMetadata metadata;
};

void save_checkpoint(const Checkpoint& checkpoint, const std::string& path);
// Throws IoError: MissingFile, Malformed, VersionMismatch, FingerprintMismatch.
Checkpoint load_checkpoint(const std::string& path, const std::string& expected_fingerprint);

}  // namespace qolab
