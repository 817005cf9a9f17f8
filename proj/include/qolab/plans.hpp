#pragma once

#include <boost/multiprecision/cpp_int.hpp>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "qolab/catalog.hpp"

namespace qolab {

// ---- logical join trees ---------------------------------------------------

struct JoinTree;
using JoinTreePtr = std::shared_ptr<const JoinTree>;

// Bushy join tree with ordered children. Subtrees are immutable and shared.
struct JoinTree {
  int relation = -1;  // leaf iff relation >= 0
  JoinTreePtr left;
  JoinTreePtr right;

  bool is_leaf() const { return relation >= 0; }
  static JoinTreePtr leaf(int relation_id);
  static JoinTreePtr join(JoinTreePtr l, JoinTreePtr r);
};

std::vector<int> tree_leaves(const JoinTree& tree);
std::string to_string(const JoinTree& tree);

inline constexpr int kMaxEnumerationRelations = 7;

// All bushy trees over the query's relations, left/right order distinguished.
// Refuses (RefusalError) above kMaxEnumerationRelations.
std::vector<JoinTreePtr> enumerate_join_trees(const Query& query);

// n! * Catalan(n-1).
boost::multiprecision::cpp_int count_join_orderings(unsigned n);

// ---- physical plans -------------------------------------------------------

enum class AccessKind { Sequential, Index };

struct AccessPath {
  AccessKind kind = AccessKind::Sequential;
  int attribute_id = -1;  // set for index scans

  static AccessPath sequential() { return {}; }
  static AccessPath index(int attribute) { return {AccessKind::Index, attribute}; }
  bool operator==(const AccessPath&) const = default;
};

enum class JoinOperator { NestedLoop, Hash };
enum class AggregateOperator { Hash, Sort };

inline constexpr JoinOperator kJoinOperators[] = {JoinOperator::NestedLoop, JoinOperator::Hash};
inline constexpr AggregateOperator kAggregateOperators[] = {AggregateOperator::Hash, AggregateOperator::Sort};

struct PlanNode {
  int relation_id = -1;  // scans only
  AccessPath access;
  JoinOperator op = JoinOperator::Hash;  // joins only
  int left = -1;
  int right = -1;

  bool is_scan() const { return left < 0; }
};

// Flat node pool; `root` indexes into `nodes`. Equality is structural.
struct PhysicalPlan {
  std::vector<PlanNode> nodes;
  int root = -1;
  std::optional<AggregateOperator> aggregate;

  int add_scan(int relation_id, AccessPath access);
  int add_join(JoinOperator op, int left, int right);
  const PlanNode& node(int i) const { return nodes.at(static_cast<std::size_t>(i)); }

  JoinTreePtr join_tree() const;
  std::vector<int> leaf_relations() const;
  std::string to_string() const;
  bool operator==(const PhysicalPlan& other) const { return to_string() == other.to_string(); }
};

struct PlanValidationReport {
  bool ok = true;
  std::vector<std::string> violations;
};

PlanValidationReport validate_plan(const PhysicalPlan& plan, const Query& query, const Catalog& catalog);

// Sequential scan first, then index scans on indexed attributes that carry a
// matching selection or join predicate in this query.
std::vector<AccessPath> available_access_paths(const Catalog& catalog, const Query& query, int relation_id);

// Visits every physical plan of `tree`: all access paths x join operators x
// aggregate operators (when the query aggregates).
void for_each_physical_plan(const Catalog& catalog, const Query& query, const JoinTree& tree,
                            const std::function<void(const PhysicalPlan&)>& visit);

nlohmann::json plan_to_json(const PhysicalPlan& plan);
PhysicalPlan plan_from_json(const nlohmann::json& j);

const char* to_string(JoinOperator op);
const char* to_string(AggregateOperator op);

}  // namespace qolab
