// Frozen reference values. Anything here changing means results changed.

#include "doctest.h"
#include "qolab/catalog.hpp"
#include "qolab/costmodel.hpp"
#include "qolab/expert.hpp"
#include "qolab/experiment.hpp"
#include "qolab/env.hpp"
#include "qolab/plans.hpp"
#include "qolab/reward.hpp"

using namespace qolab;

TEST_SUITE("oracles") {

TEST_CASE("join ordering counts") {
  CHECK(count_join_orderings(2) == 2);
  CHECK(count_join_orderings(3) == 12);
  CHECK(count_join_orderings(4) == 120);
  CHECK(count_join_orderings(5) == 1680);
  CHECK(count_join_orderings(10) == boost::multiprecision::cpp_int("17643225600"));
}

TEST_CASE("feature lengths") {
  EnvConfig c;
  CHECK(c.feature_size() == 88);
  c.max_relations = 10;
  CHECK(c.feature_size() == 128);
}

TEST_CASE("worked calibration") {
  const BootstrapCalibration cal{10, 50, 100, 200};
  CHECK(scale_latency_reward(cal, 150) == 30.0);
}

TEST_CASE("cost formula worked example") {
  Catalog c;
  c.relations = {{0, "A", 1000, {{0, "a", 1000, {}}}}, {1, "B", 500, {{0, "b", 500, {}}}}};
  c.join_edges = {{0, 0, 0, 1, 0, 0.01}};
  Query q;
  q.relation_ids = {0, 1};
  q.join_predicates = c.join_edges;
  PhysicalPlan p;
  const int a = p.add_scan(0, AccessPath::sequential());
  const int b = p.add_scan(1, AccessPath::sequential());
  p.root = p.add_join(JoinOperator::Hash, a, b);
  CHECK(cost_plan(c, q, p).value == 3500.0);
  LatencyConfig lc;
  lc.gamma = 1.0;
  lc.noise_sigma = 0.0;
  CHECK(latency_from_true_cost(lc, 3500.0, 1) == doctest::Approx(3.5).epsilon(1e-12));
}

// generator output for the default config, seeds 1 and 2
TEST_CASE("default world") {
  const auto cat = generate_catalog({}, 1);
  const auto w = generate_workload(cat, {}, 2);
  CHECK(sha256_hex(catalog_to_text(cat)) == "61642d448a4ea059642dd471b62ed6ee17baf184afcf91cd46ac8cc0487d81c9");
  CHECK(sha256_hex(workload_to_text(w)) == "de87984c7d55028fc440b38017638dbf7444f3f97319677a8eb232316e0b18bc");
  CHECK(optimize_dp(cat, w.queries[0]).to_string() == "NL(NL(NL(IDX(7.1),SEQ(0)),SEQ(10)),SEQ(9))");
  CHECK(cost_plan(cat, w.queries[0], optimize_dp(cat, w.queries[0])).value == doctest::Approx(109404.71053750013).epsilon(1e-12));
  CHECK(optimize_dp(cat, w.queries[1]).to_string() == "HJ(NL(SEQ(11),SEQ(2)),SEQ(3))");
  CHECK(cost_plan(cat, w.queries[1], optimize_dp(cat, w.queries[1])).value == doctest::Approx(135470.45451540488).epsilon(1e-12));
}

}
