#include "qolab/agent.hpp"

#include <algorithm>
#include <cmath>

#include "json_io.hpp"
#include "qolab/errors.hpp"
#include "qolab/kernels.hpp"

namespace qolab {

using detail::json;

NetworkParams init_network(int input_size, const std::vector<int>& hidden, std::uint64_t seed) {
  if (input_size < 1) throw ContractError("init_network: input size must be >= 1");
  if (hidden.empty()) throw ContractError("init_network: at least one hidden layer is required");
  for (int h : hidden)
    if (h < 1) throw ContractError("init_network: hidden sizes must be >= 1");
  Rng rng(mix_seed(seed, 0x1417));
  NetworkParams net;
  int in = input_size;
  std::vector<int> sizes = hidden;
  sizes.push_back(1);
  for (int out : sizes) {
    Layer l;
    l.in = in;
    l.out = out;
    const double bound = std::sqrt(6.0 / (in + out));
    l.weights.resize(static_cast<std::size_t>(in) * out);
    for (auto& w : l.weights) w = (2.0 * uniform01(rng) - 1.0) * bound;
    l.biases.assign(static_cast<std::size_t>(out), 0.0);
    net.layers.push_back(std::move(l));
    in = out;
  }
  return net;
}

TrainerState init_trainer(const NetworkParams& params, double learning_rate, double momentum) {
  TrainerState t;
  t.learning_rate = learning_rate;
  t.momentum = momentum;
  t.velocity = params;
  t.velocity.set_zero();
  return t;
}

double predict(const NetworkParams& params, std::span<const double> features) {
  return kernels::forward(params, features);
}

void apply_gradient(NetworkParams& params, TrainerState& trainer, const NetworkParams& grad) {
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    auto& p = params.layers[l];
    auto& v = trainer.velocity.layers[l];
    const auto& g = grad.layers[l];
    for (std::size_t k = 0; k < p.weights.size(); ++k) {
      v.weights[k] = trainer.momentum * v.weights[k] - trainer.learning_rate * g.weights[k];
      p.weights[k] += v.weights[k];
    }
    for (std::size_t k = 0; k < p.biases.size(); ++k) {
      v.biases[k] = trainer.momentum * v.biases[k] - trainer.learning_rate * g.biases[k];
      p.biases[k] += v.biases[k];
    }
  }
  ++trainer.steps;
}

double train_batch(NetworkParams& params, TrainerState& trainer, const FeatureMatrix& features,
                   std::span<const double> targets) {
  const std::size_t n = features.rows();
  if (n == 0) throw ContractError("train_batch: empty batch");
  if (targets.size() != n) throw ContractError("train_batch: target count does not match batch");
  for (double t : targets)
    if (!std::isfinite(t)) throw ContractError("train_batch: non-finite target");
  std::vector<double> pred(n);
  kernels::parallel::predict_batch(params, features, pred);
  std::vector<double> weights(n);
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double err = pred[i] - targets[i];
    loss += err * err;
    weights[i] = 2.0 * err / static_cast<double>(n);
  }
  apply_gradient(params, trainer, kernels::parallel::weighted_gradient(params, features, weights));
  return loss / static_cast<double>(n);
}

double train_batch(NetworkParams& params, TrainerState& trainer, std::span<const TrainingSample> batch) {
  if (batch.empty()) throw ContractError("train_batch: empty batch");
  FeatureMatrix x(static_cast<int>(batch.front().features.size()));
  std::vector<double> targets;
  for (const auto& s : batch) {
    if (static_cast<int>(s.features.size()) != x.cols) throw ContractError("train_batch: ragged feature lengths");
    auto row = x.append_row();
    std::copy(s.features.begin(), s.features.end(), row.begin());
    targets.push_back(s.target);
  }
  return train_batch(params, trainer, x, targets);
}

NetworkParams squared_error_gradient(const NetworkParams& params, std::span<const double> features, double target) {
  kernels::Activations acts;
  const double f = kernels::forward(params, features, &acts);
  NetworkParams grad = params;
  grad.set_zero();
  kernels::backward_accumulate(params, acts, 2.0 * (f - target), grad);
  return grad;
}

double gradient_check(const NetworkParams& params, std::span<const double> features, double target,
                      const GradientFn& analytic) {
  constexpr double h = 1e-5;
  constexpr double floor = 1e-10;
  const NetworkParams grad = analytic(params, features, target);
  NetworkParams probe = params;
  auto loss = [&] {
    const double e = kernels::forward(probe, features) - target;
    return e * e;
  };
  double worst = 0.0;
  for (std::size_t k = 0; k < params.parameter_count(); ++k) {
    const double orig = probe.at(k);
    probe.at(k) = orig + h;
    const double up = loss();
    probe.at(k) = orig - h;
    const double down = loss();
    probe.at(k) = orig;
    const double numeric = (up - down) / (2.0 * h);
    const double a = grad.at(k);
    const double scale = std::max(std::abs(a), std::abs(numeric));
    if (scale < floor) continue;
    worst = std::max(worst, std::abs(a - numeric) / scale);
  }
  return worst;
}

std::vector<double> score_actions(const NetworkParams& params, const EnvState& state, std::span<const Action> legal,
                                  const Featurizer& featurize) {
  FeatureMatrix x(params.input_size());
  for (const auto& a : legal) featurize(state, a, x.append_row());
  std::vector<double> scores(legal.size());
  kernels::parallel::predict_batch(params, x, scores);
  return scores;
}

Action select_action(const NetworkParams& params, const EnvState& state, std::span<const Action> legal,
                     const Featurizer& featurize, double epsilon, Rng& rng) {
  if (legal.empty()) throw ContractError("select_action: no legal actions");
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw ContractError("select_action: epsilon outside [0,1]");
  std::size_t best = 0;
  if (legal.size() > 1) {
    const auto scores = score_actions(params, state, legal, featurize);
    for (std::size_t i = 1; i < scores.size(); ++i)
      if (scores[i] < scores[best]) best = i;
  }
  const double u = uniform01(rng);
  if (u < epsilon && legal.size() > 1) {
    const auto k = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(legal.size()) - 2));
    return legal[k < best ? k : k + 1];
  }
  return legal[best];
}

Featurizer featurizer_for(const Environment& env) {
  return [&env](const EnvState& s, const Action& a, std::span<double> out) { env.featurize_into(s, a, out); };
}

ValueAgent ValueAgent::create(int feature_size, const AgentConfig& config, std::uint64_t seed) {
  ValueAgent a;
  a.config = config;
  a.params = init_network(feature_size, config.hidden, seed);
  a.trainer = init_trainer(a.params, config.learning_rate, config.momentum);
  return a;
}

void ValueAgent::calibrate(std::vector<double> raw) {
  if (raw.empty()) {
    target_cap = 1.0;
    return;
  }
  std::sort(raw.begin(), raw.end());
  const auto idx = static_cast<std::size_t>(std::ceil(0.99 * static_cast<double>(raw.size()))) - 1;
  target_cap = std::max(raw[std::min(idx, raw.size() - 1)], 1e-9);
}

double ValueAgent::normalize(double raw) const {
  if (!calibrated()) throw ContractError("agent target scale is not calibrated");
  return std::log1p(std::max(0.0, raw)) / std::log1p(target_cap);
}

double ValueAgent::epsilon_at(std::int64_t episode, std::int64_t total) const {
  const double span = config.epsilon_decay_fraction * static_cast<double>(total);
  const double f = span <= 0.0 ? 1.0 : std::min(1.0, static_cast<double>(episode) / span);
  return config.epsilon_start + (config.epsilon_end - config.epsilon_start) * f;
}

// ---- checkpoints ----------------------------------------------------------

namespace {

json network_json(const NetworkParams& net) {
  json layers = json::array();
  for (const auto& l : net.layers)
    layers.push_back({{"in", l.in}, {"out", l.out}, {"weights", l.weights}, {"biases", l.biases}});
  return layers;
}

NetworkParams network_from_json(const json& j) {
  NetworkParams net;
  for (const auto& jl : j) {
    Layer l;
    l.in = jl.at("in").get<int>();
    l.out = jl.at("out").get<int>();
    l.weights = jl.at("weights").get<std::vector<double>>();
    l.biases = jl.at("biases").get<std::vector<double>>();
    if (l.weights.size() != static_cast<std::size_t>(l.in) * l.out || l.biases.size() != static_cast<std::size_t>(l.out))
      throw IoError(IoErrorKind::Malformed, "checkpoint layer shape mismatch");
    net.layers.push_back(std::move(l));
  }
  for (std::size_t i = 1; i < net.layers.size(); ++i)
    if (net.layers[i].in != net.layers[i - 1].out) throw IoError(IoErrorKind::Malformed, "checkpoint layers do not chain");
  return net;
}

}  // namespace

void save_checkpoint(const Checkpoint& c, const std::string& path) {
  const auto& a = c.agent;
  json doc = {{"format_version", kFormatVersion},
              {"kind", "checkpoint"},
              {"env_fingerprint", c.env_fingerprint},
              {"agent_config",
               {{"hidden", a.config.hidden},
                {"learning_rate", a.config.learning_rate},
                {"momentum", a.config.momentum},
                {"batch_size", a.config.batch_size},
                {"epsilon_start", a.config.epsilon_start},
                {"epsilon_end", a.config.epsilon_end},
                {"epsilon_decay_fraction", a.config.epsilon_decay_fraction}}},
              {"target_cap", a.target_cap},
              {"params", network_json(a.params)},
              {"trainer",
               {{"learning_rate", a.trainer.learning_rate},
                {"momentum", a.trainer.momentum},
                {"steps", a.trainer.steps},
                {"velocity", network_json(a.trainer.velocity)}}},
              {"metadata",
               {{"episodes_seen", c.metadata.episodes_seen},
                {"agent_seed", c.metadata.agent_seed},
                {"label", c.metadata.label}}}};
  detail::write_text_file(path, doc.dump() + "\n");
}

Checkpoint load_checkpoint(const std::string& path, const std::string& expected_fingerprint) {
  const json doc = detail::read_versioned_json(path, "checkpoint");
  Checkpoint c = detail::guarded_parse("checkpoint", [&] {
    Checkpoint ck;
    ck.env_fingerprint = doc.at("env_fingerprint").get<std::string>();
    const auto& jc = doc.at("agent_config");
    auto& a = ck.agent;
    a.config.hidden = jc.at("hidden").get<std::vector<int>>();
    a.config.learning_rate = jc.at("learning_rate").get<double>();
    a.config.momentum = jc.at("momentum").get<double>();
    a.config.batch_size = jc.at("batch_size").get<int>();
    a.config.epsilon_start = jc.at("epsilon_start").get<double>();
    a.config.epsilon_end = jc.at("epsilon_end").get<double>();
    a.config.epsilon_decay_fraction = jc.at("epsilon_decay_fraction").get<double>();
    a.target_cap = doc.at("target_cap").get<double>();
    a.params = network_from_json(doc.at("params"));
    const auto& jt = doc.at("trainer");
    a.trainer.learning_rate = jt.at("learning_rate").get<double>();
    a.trainer.momentum = jt.at("momentum").get<double>();
    a.trainer.steps = jt.at("steps").get<std::uint64_t>();
    a.trainer.velocity = network_from_json(jt.at("velocity"));
    const auto& jm = doc.at("metadata");
    ck.metadata.episodes_seen = jm.at("episodes_seen").get<std::int64_t>();
    ck.metadata.agent_seed = jm.at("agent_seed").get<std::uint64_t>();
    ck.metadata.label = jm.at("label").get<std::string>();
    return ck;
  });
  if (c.env_fingerprint != expected_fingerprint)
    throw IoError(IoErrorKind::FingerprintMismatch,
                  "checkpoint was trained for '" + c.env_fingerprint + "', environment is '" + expected_fingerprint + "'");
  return c;
}

}  // namespace qolab
