#include <set>

#include "doctest.h"
#include "qolab/errors.hpp"
#include "qolab/expert.hpp"
#include "qolab/plans.hpp"
#include "support.hpp"

using namespace qolab;

namespace {

Query chain(int n) {
  Query q;
  for (int i = 0; i < n; ++i) q.relation_ids.push_back(i);
  return q;
}

bool has_violation(const PlanValidationReport& r, const std::string& text) {
  for (const auto& v : r.violations)
    if (v == text) return true;
  return false;
}

}  // namespace

TEST_SUITE("plans") {

TEST_CASE("tree counts match the closed form") {
  const int expected[] = {1, 2, 12, 120, 1680};
  for (int n = 1; n <= 5; ++n) {
    const auto trees = enumerate_join_trees(chain(n));
    CHECK(trees.size() == static_cast<std::size_t>(expected[n - 1]));
    CHECK(count_join_orderings(n) == expected[n - 1]);
    std::set<std::string> distinct;
    for (const auto& t : trees) {
      distinct.insert(to_string(*t));
      auto leaves = tree_leaves(*t);
      std::sort(leaves.begin(), leaves.end());
      CHECK(leaves == chain(n).relation_ids);
    }
    CHECK(distinct.size() == trees.size());
  }
  CHECK(enumerate_join_trees(chain(6)).size() == 30240);
}

TEST_CASE("large counts") {
  CHECK(count_join_orderings(7) == 665280);
  CHECK(count_join_orderings(10) == boost::multiprecision::cpp_int("17643225600"));
  CHECK(count_join_orderings(1) == 1);
}

TEST_CASE("enumeration refuses past the guard") {
  CHECK_THROWS_AS(enumerate_join_trees(chain(kMaxEnumerationRelations + 1)), RefusalError);
}

TEST_CASE("validate_plan") {
  const auto cat = testing::small_catalog();
  const auto q = testing::query_of(cat, 0, {0, 1, 2});
  const auto good = optimize_dp(cat, q);
  CHECK(validate_plan(good, q, cat).ok);

  PhysicalPlan missing;
  const int a = missing.add_scan(0, AccessPath::sequential());
  const int b = missing.add_scan(1, AccessPath::sequential());
  missing.root = missing.add_join(JoinOperator::Hash, a, b);
  const auto r1 = validate_plan(missing, q, cat);
  CHECK_FALSE(r1.ok);
  CHECK(has_violation(r1, "leaf set mismatch"));

  PhysicalPlan unindexed;
  const int x = unindexed.add_scan(1, AccessPath::index(0));
  const int y = unindexed.add_scan(0, AccessPath::sequential());
  unindexed.root = unindexed.add_join(JoinOperator::Hash, x, y);
  CHECK(has_violation(validate_plan(unindexed, testing::query_of(cat, 1, {0, 1}), cat), "no such index"));

  auto agg = testing::query_of(cat, 2, {0, 1}, true);
  CHECK(has_violation(validate_plan(unindexed, agg, cat), "missing aggregate node"));
}

TEST_CASE("access paths need a matching predicate") {
  auto cat = testing::small_catalog();
  Query q;
  q.relation_ids = {0};
  CHECK(available_access_paths(cat, q, 0).size() == 1);
  q.selection_predicates.push_back({0, 0, 0.01});
  const auto paths = available_access_paths(cat, q, 0);
  REQUIRE(paths.size() == 2);
  CHECK(paths[0] == AccessPath::sequential());
  CHECK(paths[1] == AccessPath::index(0));
}

TEST_CASE("physical plan enumeration") {
  const auto cat = testing::small_catalog();
  auto q = testing::query_of(cat, 0, {0, 1}, true);
  const auto trees = enumerate_join_trees(q);
  int count = 0;
  // A has seq + index (join on A.a0), B seq only; 2 join ops; 2 aggregates.
  for_each_physical_plan(cat, q, *trees[0], [&](const PhysicalPlan& p) {
    CHECK(validate_plan(p, q, cat).ok);
    ++count;
  });
  CHECK(count == 2 * 1 * 2 * 2);
}

TEST_CASE("plan json round trip") {
  const auto cat = testing::small_catalog();
  const auto q = testing::query_of(cat, 0, {0, 1, 2, 3}, true);
  const auto p = optimize_dp(cat, q);
  const auto back = plan_from_json(plan_to_json(p));
  CHECK(back == p);
  CHECK(back.to_string() == p.to_string());
}

}
