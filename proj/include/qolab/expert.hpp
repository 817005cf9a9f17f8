#pragma once

#include <map>
#include <optional>
#include <utility>
#include <vector>

#include "qolab/catalog.hpp"
#include "qolab/costmodel.hpp"
#include "qolab/plans.hpp"

namespace qolab {

enum class ExpertKind { DynamicProgramming, Greedy };

inline constexpr int kMaxDpRelations = 14;

// Cost-optimal plan over bushy orders x access paths x join operators x
// aggregate operator. Exhaustive subset DP; refuses above kMaxDpRelations.
PhysicalPlan optimize_dp(const Catalog& catalog, const Query& query);

// Bottom-up greedy: repeatedly joins the pair of subtrees whose joined result
// is cheapest. O(n^2) pair evaluations per step.
PhysicalPlan optimize_greedy(const Catalog& catalog, const Query& query);

PhysicalPlan optimize(ExpertKind kind, const Catalog& catalog, const Query& query);

// Decisions already fixed by an agent, as a prefix of the pipeline
// join order -> access paths -> join operators -> aggregate operator.
struct PartialDecisions {
  int stages = 0;  // number of decided pipeline stages, 0..4
  JoinTreePtr join_order;
  std::map<int, AccessPath> access_paths;                   // by relation id
  std::map<std::vector<int>, JoinOperator> join_operators;  // by sorted relation ids under the node
  std::optional<AggregateOperator> aggregate;
};

// Fills the undecided stages optimally given the decided ones.
PhysicalPlan complete_partial(const Catalog& catalog, const Query& query, const PartialDecisions& partial);

// Per-node choices shared by the optimizers and the environment. Ties go to
// the first option (sequential scan, nested loop, hash aggregate).
std::pair<AccessPath, double> best_access_path(const std::vector<AccessPath>& options, double base_rows,
                                               double scan_rows);
JoinOperator best_join_operator(double left_rows, double right_rows);
AggregateOperator best_aggregate(double input_rows);

// Build/probe orientation used everywhere: fewer rows on the left, ties broken
// by the lowest contained relation position.
bool left_first(const CardinalityModel& cards, RelSet a, RelSet b);

}  // namespace qolab
