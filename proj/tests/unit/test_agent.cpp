#include <cmath>
#include <fstream>

#include "doctest.h"
#include "qolab/agent.hpp"
#include "qolab/errors.hpp"
#include "support.hpp"

using namespace qolab;

namespace {

// Glorot weights plus random biases, so no unit sits exactly on the rectifier kink
NetworkParams random_network(int in, std::vector<int> hidden, Rng& rng) {
  auto p = init_network(in, hidden, rng());
  for (auto& l : p.layers)
    for (auto& b : l.biases) b = uniform01(rng) - 0.5;
  return p;
}

std::vector<double> random_input(int n, Rng& rng) {
  std::vector<double> x(n);
  for (auto& v : x) v = 2.0 * uniform01(rng) - 1.0;
  return x;
}

// the feature is the action index; with the identity network the prediction is too
const Featurizer by_index = [](const EnvState&, const Action& a, std::span<double> out) { out[0] = a.index; };

NetworkParams identity() {
  NetworkParams p;
  p.layers = {Layer{1, 1, {1.0}, {0.0}}};
  return p;
}

std::vector<Action> actions(int n) {
  std::vector<Action> out(n);
  for (int i = 0; i < n; ++i) out[i].index = i;
  return out;
}

}  // namespace

TEST_SUITE("agent") {

TEST_CASE("init") {
  const auto a = init_network(20, {16, 8}, 3);
  CHECK(a == init_network(20, {16, 8}, 3));
  CHECK_FALSE(a == init_network(20, {16, 8}, 4));
  REQUIRE(a.layers.size() == 3);
  CHECK(a.parameter_count() == 20 * 16 + 16 + 16 * 8 + 8 + 8 + 1);
  for (const auto& l : a.layers) {
    const double bound = std::sqrt(6.0 / (l.in + l.out));
    for (double w : l.weights) CHECK(std::abs(w) <= bound);
    for (double b : l.biases) CHECK(b == 0.0);
  }
  CHECK_THROWS_AS(init_network(0, {4}, 1), ContractError);
  CHECK_THROWS_AS(init_network(4, {0}, 1), ContractError);
}

TEST_CASE("forward") {
  auto p = init_network(3, {4}, 1);
  p.set_zero();
  CHECK(predict(p, std::vector<double>{1, 2, 3}) == 0.0);

  // relu(1*1 - 1*2) = 0, relu(2*1 + 0.5*2) = 3 -> 2*0 + 3*(-1) + 0.5
  NetworkParams h;
  h.layers = {Layer{2, 2, {1, -1, 2, 0.5}, {0, 0}}, Layer{2, 1, {2, -1}, {0.5}}};
  CHECK(predict(h, std::vector<double>{1, 2}) == -2.5);
}

TEST_CASE("memorizes a small batch") {
  Rng rng(5);
  auto p = init_network(6, {16}, 2);
  auto t = init_trainer(p, 0.05, 0.9);
  std::vector<TrainingSample> batch;
  for (int i = 0; i < 10; ++i) batch.push_back({random_input(6, rng), uniform01(rng)});
  double loss = 0;
  for (int step = 0; step < 2000; ++step) loss = train_batch(p, t, batch);
  CHECK(loss < 1e-3);
  CHECK(t.steps == 2000);
}

TEST_CASE("zero learning rate changes nothing") {
  Rng rng(5);
  auto p = init_network(4, {8}, 2);
  const auto before = p;
  auto t = init_trainer(p, 0.0, 0.9);
  std::vector<TrainingSample> batch{{random_input(4, rng), 3.0}};
  train_batch(p, t, batch);
  CHECK(p == before);
}

TEST_CASE("bad batches") {
  auto p = init_network(4, {8}, 2);
  auto t = init_trainer(p, 0.1, 0.9);
  CHECK_THROWS_AS(train_batch(p, t, std::span<const TrainingSample>{}), ContractError);
  std::vector<TrainingSample> nan{{{0, 0, 0, 0}, std::nan("")}};
  CHECK_THROWS_AS(train_batch(p, t, nan), ContractError);
  std::vector<TrainingSample> inf{{{0, 0, 0, 0}, INFINITY}};
  CHECK_THROWS_AS(train_batch(p, t, inf), ContractError);
}

TEST_CASE("gradient check") {
  Rng rng(17);
  for (int i = 0; i < 100; ++i) {
    const int in = 2 + static_cast<int>(uniform_int(rng, 0, 6));
    const auto p = random_network(
        in, {3 + static_cast<int>(uniform_int(rng, 0, 5)), 2 + static_cast<int>(uniform_int(rng, 0, 3))}, rng);
    CHECK(gradient_check(p, random_input(in, rng), uniform01(rng) * 4 - 2) <= 1e-4);
  }
  const auto p = random_network(5, {6}, rng);
  const auto x = random_input(5, rng);
  const GradientFn corrupted = [](const NetworkParams& net, std::span<const double> f, double t) {
    auto g = squared_error_gradient(net, f, t);
    g.at(0) += 1.0;
    return g;
  };
  CHECK(gradient_check(p, x, 1.0, corrupted) > 1e-2);
}

TEST_CASE("selection") {
  const auto acts = actions(3);
  const EnvState state;
  NetworkParams p = identity();
  Rng rng(1);
  // prediction = index, so the argmin is action 0
  CHECK(select_action(p, state, acts, by_index, 0.0, rng).index == 0);
  // all equal: smallest index
  p.layers[0].weights = {0.0};
  CHECK(select_action(p, state, acts, by_index, 0.0, rng).index == 0);
  // reversed
  p.layers[0].weights = {-1.0};
  CHECK(select_action(p, state, acts, by_index, 0.0, rng).index == 2);
  // a constant shift of every prediction does not move the argmin
  p.layers[0].biases = {1e6};
  CHECK(select_action(p, state, acts, by_index, 0.0, rng).index == 2);

  p.layers[0].weights = {1.0};
  p.layers[0].biases = {0.0};
  std::vector<int> hits(3, 0);
  const int draws = 30000;
  for (int i = 0; i < draws; ++i) ++hits[select_action(p, state, acts, by_index, 1.0, rng).index];
  CHECK(hits[0] == 0);
  CHECK(std::abs(hits[1] / double(draws) - 0.5) < 0.05);
  CHECK(std::abs(hits[2] / double(draws) - 0.5) < 0.05);

  const auto scores = score_actions(p, state, acts, by_index);
  CHECK(scores == std::vector<double>{0, 1, 2});
}

TEST_CASE("epsilon greedy mix") {
  // 4 actions, epsilon 0.3: argmin 0.7, others 0.1 each
  const auto acts = actions(4);
  const NetworkParams p = identity();
  Rng rng(9);
  std::vector<int> hits(4, 0);
  const int draws = 40000;
  for (int i = 0; i < draws; ++i) ++hits[select_action(p, {}, acts, by_index, 0.3, rng).index];
  CHECK(hits[0] / double(draws) == doctest::Approx(0.7).epsilon(0.03));
  for (int i = 1; i < 4; ++i) CHECK(hits[i] / double(draws) == doctest::Approx(0.1).epsilon(0.1));
}

TEST_CASE("single action") {
  Rng rng(1);
  const auto one = actions(1);
  CHECK(select_action(identity(), {}, one, by_index, 1.0, rng).index == 0);
}

TEST_CASE("target normalization") {
  auto agent = ValueAgent::create(8, {}, 1);
  CHECK_FALSE(agent.calibrated());
  CHECK_THROWS_AS(agent.normalize(1.0), ContractError);
  std::vector<double> raw;
  for (int i = 1; i <= 100; ++i) raw.push_back(i);
  agent.calibrate(raw);
  CHECK(agent.target_cap == 99.0);
  CHECK(agent.normalize(99.0) == doctest::Approx(1.0));
  CHECK(agent.normalize(0.0) == 0.0);
}

TEST_CASE("epsilon schedule") {
  AgentConfig c;
  c.epsilon_start = 0.5;
  c.epsilon_end = 0.1;
  c.epsilon_decay_fraction = 0.5;
  const auto agent = ValueAgent::create(8, c, 1);
  CHECK(agent.epsilon_at(0, 100) == 0.5);
  CHECK(agent.epsilon_at(25, 100) == doctest::Approx(0.3));
  CHECK(agent.epsilon_at(50, 100) == doctest::Approx(0.1));
  CHECK(agent.epsilon_at(99, 100) == doctest::Approx(0.1));
}

TEST_CASE("checkpoint") {
  testing::TempDir dir("checkpoint");
  auto agent = ValueAgent::create(88, {}, 7);
  agent.calibrate({1.0, 2.0, 3.0});
  std::vector<TrainingSample> batch{{std::vector<double>(88, 0.25), 0.5}};
  train_batch(agent.params, agent.trainer, batch);
  const Checkpoint cp{EnvConfig{}.fingerprint(), agent, {12, 7, "unit"}};
  save_checkpoint(cp, dir.file("cp.json"));
  const auto back = load_checkpoint(dir.file("cp.json"), EnvConfig{}.fingerprint());
  CHECK(back.agent.params == agent.params);
  CHECK(back.agent.trainer == agent.trainer);
  CHECK(back.agent.config == agent.config);
  CHECK(back.agent.target_cap == agent.target_cap);
  CHECK(back.metadata.episodes_seen == 12);
  CHECK(back.metadata.label == "unit");

  EnvConfig other;
  other.enabled_stages = 3;
  try {
    load_checkpoint(dir.file("cp.json"), other.fingerprint());
    FAIL("expected an error");
  } catch (const IoError& e) {
    CHECK(e.kind == IoErrorKind::FingerprintMismatch);
  }

  std::ifstream in(dir.file("cp.json"));
  const std::string text((std::istreambuf_iterator<char>(in)), {});
  std::ofstream(dir.file("trunc.json")) << text.substr(0, text.size() - 40);
  try {
    load_checkpoint(dir.file("trunc.json"), EnvConfig{}.fingerprint());
    FAIL("expected an error");
  } catch (const IoError& e) {
    CHECK(e.kind == IoErrorKind::Malformed);
  }
}

}
