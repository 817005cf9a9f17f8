#include <set>

#include "doctest.h"
#include "qolab/env.hpp"
#include "qolab/errors.hpp"
#include "qolab/expert.hpp"
#include "support.hpp"

using namespace qolab;

namespace {

Action find(const std::vector<Action>& actions, const std::string& text) {
  for (const auto& a : actions)
    if (a.to_string() == text) return a;
  FAIL("no action " << text);
  return {};
}

}  // namespace

TEST_SUITE("env") {

TEST_CASE("figure one sequence") {
  const auto cat = testing::small_catalog();
  Environment env({}, cat);
  const auto q = testing::query_of(cat, 0, {0, 1, 2, 3});
  auto s = env.reset(q);
  CHECK(env.legal_actions(s).size() == 6);
  s = env.step(s, find(env.legal_actions(s), "join[1,3]"));
  CHECK(env.legal_actions(s).size() == 3);
  s = env.step(s, find(env.legal_actions(s), "join[2,3]"));
  CHECK(env.legal_actions(s).size() == 1);
  s = env.step(s, find(env.legal_actions(s), "join[1,2]"));
  REQUIRE(s.terminal);

  const auto plan = env.extract_plan(s);
  const auto tree = plan.join_tree();
  auto l = tree_leaves(*tree->left), r = tree_leaves(*tree->right);
  std::sort(l.begin(), l.end());
  std::sort(r.begin(), r.end());
  std::set<std::vector<int>> halves{l, r};
  CHECK(halves == std::set<std::vector<int>>{{0, 2}, {1, 3}});

  // remaining stages come from the expert given this order
  PartialDecisions d;
  d.stages = 1;
  d.join_order = tree;
  CHECK(plan == complete_partial(cat, q, d));
}

TEST_CASE("pair counts") {
  const auto cat = testing::small_catalog();
  Environment env({}, cat);
  CHECK(env.legal_actions(env.reset(testing::query_of(cat, 1, {0, 1, 2}))).size() == 3);
  CHECK(env.reset(testing::query_of(cat, 2, {1})).terminal);
}

TEST_CASE("episode length with all stages") {
  const auto cat = testing::small_catalog();
  EnvConfig cfg;
  cfg.enabled_stages = 4;
  Environment env(cfg, cat);
  for (bool agg : {false, true}) {
    const auto q = testing::query_of(cat, agg ? 11 : 10, {0, 1, 2, 3}, agg);
    auto s = env.reset(q);
    int steps = 0, joins = 0;
    while (!s.terminal) {
      const auto acts = env.legal_actions(s);
      if (acts[0].kind == Action::Kind::JoinPair) ++joins;
      if (s.stage == Stage::Aggregate) CHECK(acts.size() == 2);
      s = env.step(s, acts.back());
      ++steps;
    }
    CHECK(joins == 3);
    CHECK(steps == 3 + 4 + 3 + (agg ? 1 : 0));
    CHECK(validate_plan(env.extract_plan(s), q, cat).ok);
  }
}

TEST_CASE("access path actions per relation") {
  const auto cat = testing::small_catalog();
  EnvConfig cfg;
  cfg.enabled_stages = 2;
  Environment env(cfg, cat);
  Query q;
  q.id = 3;
  q.relation_ids = {0};
  q.selection_predicates.push_back({0, 0, 0.01});
  const auto s = env.reset(q);
  REQUIRE(s.stage == Stage::AccessPath);
  const auto acts = env.legal_actions(s);
  CHECK(acts.size() == 2);
  CHECK(acts[0].to_string() == "access[0,seq]");
  CHECK(acts[1].to_string() == "access[0,idx0]");
}

TEST_CASE("features") {
  EnvConfig cfg;
  cfg.max_relations = 10;
  CHECK(cfg.feature_size() == 128);
  CHECK(EnvConfig{}.feature_size() == 88);

  const auto cat = generate_catalog({}, 3);
  WorkloadSpec ws;
  ws.min_relations = 3;
  ws.max_relations = 6;
  ws.query_count = 20;
  cfg.enabled_stages = 4;
  Environment env(cfg, cat);
  for (const auto& q : generate_workload(cat, ws, 4).queries) {
    auto s = env.reset(q);
    while (!s.terminal) {
      const auto acts = env.legal_actions(s);
      std::set<FeatureVector> seen;
      for (const auto& a : acts) {
        const auto f = env.featurize(s, a);
        CHECK(f.size() == 128);
        CHECK(f == env.featurize(s, a));
        seen.insert(f);
      }
      CHECK(seen.size() == acts.size());
      s = env.step(s, acts.front());
    }
  }
}

TEST_CASE("illegal actions") {
  const auto cat = testing::small_catalog();
  Environment env({}, cat);
  const auto s = env.reset(testing::query_of(cat, 0, {0, 1, 2}));
  const auto before = s.snapshot();
  Action bad;
  bad.first = 0;
  bad.second = 5;
  CHECK_THROWS_AS(env.step(s, bad), ContractError);
  CHECK_THROWS_AS(env.featurize(s, bad), ContractError);
  CHECK(s.snapshot() == before);

  EnvConfig small;
  small.max_relations = 2;
  Environment tight(small, cat);
  CHECK_THROWS_AS(tight.reset(testing::query_of(cat, 0, {0, 1, 2})), ContractError);
  EnvConfig broken;
  broken.enabled_stages = 5;
  CHECK_THROWS_AS(broken.validate(), ConfigError);
}

TEST_CASE("rewards") {
  Catalog cat;
  cat.relations = {testing::relation(0, 1000, {testing::attr(0, 1000)}), testing::relation(1, 500, {testing::attr(0, 500)})};
  cat.join_edges = {testing::edge(0, 0, 1, 0.01)};
  const auto q = testing::query_of(cat, 0, {0, 1});
  PhysicalPlan p;
  const int a = p.add_scan(0, AccessPath::sequential());
  const int b = p.add_scan(1, AccessPath::sequential());
  p.root = p.add_join(JoinOperator::Hash, a, b);

  Environment cost_env({}, cat);
  CHECK(cost_env.episode_reward(p, q, 1) == -3500.0);

  LatencyConfig lc;
  lc.gamma = 1.0;
  lc.noise_sigma = lc.error_sigma = lc.heavy_error_probability = 0.0;
  const auto model = build_latency_model(cat, lc, 1);
  EnvConfig latency;
  latency.reward = RewardKind::Latency;
  CHECK(Environment(latency, cat, &model).episode_reward(p, q, 1) == doctest::Approx(-3.5).epsilon(1e-12));
  CHECK_THROWS_AS(Environment(latency, cat).episode_reward(p, q, 1), ContractError);

  EnvConfig scaled;
  scaled.reward = RewardKind::ScaledLatency;
  scaled.calibration = BootstrapCalibration{10, 50, 1, 5};
  // l = 3.5 -> 10 + 2.5/4 * 40 = 35
  CHECK(Environment(scaled, cat, &model).episode_reward(p, q, 1) == doctest::Approx(-35.0).epsilon(1e-12));
}

TEST_CASE("fingerprint covers stages and size") {
  EnvConfig a, b;
  b.enabled_stages = 2;
  CHECK(a.fingerprint() != b.fingerprint());
  b = a;
  b.max_relations = 9;
  CHECK(a.fingerprint() != b.fingerprint());
  CHECK(a.fingerprint() == EnvConfig{}.fingerprint());
}

}
