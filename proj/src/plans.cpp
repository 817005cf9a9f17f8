#include "qolab/plans.hpp"

#include <algorithm>
#include <map>
#include <set>

#include "qolab/errors.hpp"

namespace qolab {

using nlohmann::json;

JoinTreePtr JoinTree::leaf(int relation_id) {
  auto t = std::make_shared<JoinTree>();
  t->relation = relation_id;
  return t;
}

JoinTreePtr JoinTree::join(JoinTreePtr l, JoinTreePtr r) {
  auto t = std::make_shared<JoinTree>();
  t->left = std::move(l);
  t->right = std::move(r);
  return t;
}

namespace {

void collect_leaves(const JoinTree& t, std::vector<int>& out) {
  if (t.is_leaf()) {
    out.push_back(t.relation);
    return;
  }
  collect_leaves(*t.left, out);
  collect_leaves(*t.right, out);
}

void append_tree(const JoinTree& t, std::string& out) {
  if (t.is_leaf()) {
    out += std::to_string(t.relation);
    return;
  }
  out += '(';
  append_tree(*t.left, out);
  out += ' ';
  append_tree(*t.right, out);
  out += ')';
}

}  // namespace

std::vector<int> tree_leaves(const JoinTree& tree) {
  std::vector<int> out;
  collect_leaves(tree, out);
  return out;
}

std::string to_string(const JoinTree& tree) {
  std::string out;
  append_tree(tree, out);
  return out;
}

std::vector<JoinTreePtr> enumerate_join_trees(const Query& query) {
  const int n = static_cast<int>(query.relation_ids.size());
  if (n > kMaxEnumerationRelations)
    throw RefusalError("enumerate_join_trees refuses " + std::to_string(n) + " relations (guard is " +
                       std::to_string(kMaxEnumerationRelations) + ")");
  if (n == 0) return {};
  const unsigned full = (1u << n) - 1;
  std::vector<std::vector<JoinTreePtr>> memo(full + 1);
  for (unsigned set = 1; set <= full; ++set) {
    if ((set & (set - 1)) == 0) {
      memo[set].push_back(JoinTree::leaf(query.relation_ids[__builtin_ctz(set)]));
      continue;
    }
    for (unsigned l = (set - 1) & set; l > 0; l = (l - 1) & set) {
      const unsigned r = set ^ l;
      for (const auto& tl : memo[l])
        for (const auto& tr : memo[r]) memo[set].push_back(JoinTree::join(tl, tr));
    }
  }
  return memo[full];
}

boost::multiprecision::cpp_int count_join_orderings(unsigned n) {
  using boost::multiprecision::cpp_int;
  if (n == 0) return 0;
  cpp_int factorial = 1;
  for (unsigned i = 2; i <= n; ++i) factorial *= i;
  // Catalan(m) = binom(2m, m) / (m + 1)
  const unsigned m = n - 1;
  cpp_int binom = 1;
  for (unsigned i = 1; i <= m; ++i) binom = binom * (m + i) / i;
  return factorial * (binom / (m + 1));
}

// ---- physical plans -------------------------------------------------------

int PhysicalPlan::add_scan(int relation_id, AccessPath access) {
  PlanNode n;
  n.relation_id = relation_id;
  n.access = access;
  nodes.push_back(n);
  return root = static_cast<int>(nodes.size()) - 1;
}

int PhysicalPlan::add_join(JoinOperator op, int left, int right) {
  PlanNode n;
  n.op = op;
  n.left = left;
  n.right = right;
  nodes.push_back(n);
  return root = static_cast<int>(nodes.size()) - 1;
}

JoinTreePtr PhysicalPlan::join_tree() const {
  std::function<JoinTreePtr(int)> build = [&](int i) -> JoinTreePtr {
    const auto& n = node(i);
    if (n.is_scan()) return JoinTree::leaf(n.relation_id);
    return JoinTree::join(build(n.left), build(n.right));
  };
  if (root < 0) return nullptr;
  return build(root);
}

std::vector<int> PhysicalPlan::leaf_relations() const {
  std::vector<int> out;
  std::function<void(int)> walk = [&](int i) {
    const auto& n = node(i);
    if (n.is_scan()) {
      out.push_back(n.relation_id);
      return;
    }
    walk(n.left);
    walk(n.right);
  };
  if (root >= 0) walk(root);
  return out;
}

const char* to_string(JoinOperator op) { return op == JoinOperator::Hash ? "HJ" : "NL"; }
const char* to_string(AggregateOperator op) { return op == AggregateOperator::Hash ? "HAGG" : "SAGG"; }

std::string PhysicalPlan::to_string() const {
  std::string out;
  std::function<void(int)> walk = [&](int i) {
    const auto& n = node(i);
    if (n.is_scan()) {
      if (n.access.kind == AccessKind::Sequential)
        out += "SEQ(" + std::to_string(n.relation_id) + ")";
      else
        out += "IDX(" + std::to_string(n.relation_id) + "." + std::to_string(n.access.attribute_id) + ")";
      return;
    }
    out += qolab::to_string(n.op);
    out += '(';
    walk(n.left);
    out += ',';
    walk(n.right);
    out += ')';
  };
  if (aggregate) out += std::string(qolab::to_string(*aggregate)) + "(";
  if (root >= 0 && root < static_cast<int>(nodes.size())) walk(root);
  if (aggregate) out += ")";
  return out;
}

std::vector<AccessPath> available_access_paths(const Catalog& catalog, const Query& query, int relation_id) {
  std::vector<AccessPath> paths{AccessPath::sequential()};
  const auto& rel = catalog.relation(relation_id);
  for (const auto& attr : rel.attributes) {
    if (!attr.indexed_by) continue;
    bool matched = false;
    for (const auto& s : query.selection_predicates)
      matched |= s.relation_id == relation_id && s.attribute_id == attr.id;
    for (const auto& e : query.join_predicates)
      matched |= (e.left_relation == relation_id && e.left_attribute == attr.id) ||
                 (e.right_relation == relation_id && e.right_attribute == attr.id);
    if (matched) paths.push_back(AccessPath::index(attr.id));
  }
  return paths;
}

PlanValidationReport validate_plan(const PhysicalPlan& plan, const Query& query, const Catalog& catalog) {
  PlanValidationReport report;
  auto fail = [&](std::string msg) {
    report.ok = false;
    report.violations.push_back(std::move(msg));
  };
  const int n = static_cast<int>(plan.nodes.size());
  if (plan.root < 0 || plan.root >= n) {
    fail("missing root");
    return report;
  }
  std::vector<int> seen(n, 0);
  std::vector<int> leaves;
  bool structural = true;
  std::function<void(int)> walk = [&](int i) {
    if (i < 0 || i >= n) {
      fail("dangling child reference");
      structural = false;
      return;
    }
    if (seen[i]++) {
      fail("node shared or cyclic");
      structural = false;
      return;
    }
    const auto& node = plan.nodes[i];
    if (node.is_scan()) {
      if (node.right >= 0) {
        fail("scan node with a child");
        structural = false;
      }
      leaves.push_back(node.relation_id);
      return;
    }
    if (node.right < 0) {
      fail("join node missing a child");
      structural = false;
      return;
    }
    walk(node.left);
    walk(node.right);
  };
  walk(plan.root);
  if (!structural) return report;

  std::vector<int> sorted = leaves;
  std::sort(sorted.begin(), sorted.end());
  if (sorted != query.relation_ids) fail("leaf set mismatch");
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) fail("duplicate leaf relation");

  for (const auto& node : plan.nodes) {
    if (!node.is_scan() || node.access.kind != AccessKind::Index) continue;
    if (node.relation_id < 0 || node.relation_id >= static_cast<int>(catalog.relations.size())) {
      fail("scan of unknown relation");
      continue;
    }
    const auto& rel = catalog.relations[node.relation_id];
    const int a = node.access.attribute_id;
    if (a < 0 || a >= static_cast<int>(rel.attributes.size()) || !rel.attributes[a].indexed_by) {
      fail("no such index");
      continue;
    }
    const auto paths = available_access_paths(catalog, query, node.relation_id);
    if (std::find(paths.begin(), paths.end(), node.access) == paths.end())
      fail("index scan without a matching predicate");
  }
  if (plan.aggregate.has_value() != query.aggregate)
    fail(query.aggregate ? "missing aggregate node" : "unexpected aggregate node");
  return report;
}

void for_each_physical_plan(const Catalog& catalog, const Query& query, const JoinTree& tree,
                            const std::function<void(const PhysicalPlan&)>& visit) {
  PhysicalPlan plan;
  std::vector<int> scans;
  std::vector<int> joins;
  std::vector<std::vector<AccessPath>> options;
  std::function<int(const JoinTree&)> build = [&](const JoinTree& t) -> int {
    if (t.is_leaf()) {
      const int id = plan.add_scan(t.relation, AccessPath::sequential());
      scans.push_back(id);
      options.push_back(available_access_paths(catalog, query, t.relation));
      return id;
    }
    const int l = build(*t.left);
    const int r = build(*t.right);
    const int id = plan.add_join(JoinOperator::NestedLoop, l, r);
    joins.push_back(id);
    return id;
  };
  build(tree);

  // Odometer over (access choice per scan, operator per join, aggregate).
  std::vector<std::size_t> digit(scans.size() + joins.size() + 1, 0);
  std::vector<std::size_t> radix;
  for (const auto& o : options) radix.push_back(o.size());
  for (std::size_t i = 0; i < joins.size(); ++i) radix.push_back(2);
  radix.push_back(query.aggregate ? 2 : 1);
  while (true) {
    std::size_t d = 0;
    for (std::size_t i = 0; i < scans.size(); ++i, ++d) plan.nodes[scans[i]].access = options[i][digit[d]];
    for (std::size_t i = 0; i < joins.size(); ++i, ++d) plan.nodes[joins[i]].op = kJoinOperators[digit[d]];
    plan.aggregate = query.aggregate ? std::optional(kAggregateOperators[digit[d]]) : std::nullopt;
    visit(plan);
    std::size_t k = 0;
    while (k < digit.size() && ++digit[k] == radix[k]) digit[k++] = 0;
    if (k == digit.size()) break;
  }
}

json plan_to_json(const PhysicalPlan& plan) {
  std::function<json(int)> node_json = [&](int i) -> json {
    const auto& n = plan.node(i);
    if (n.is_scan()) {
      json j = {{"scan", n.relation_id}};
      if (n.access.kind == AccessKind::Index) j["index"] = n.access.attribute_id;
      return j;
    }
    return {{"join", n.op == JoinOperator::Hash ? "hash" : "nested_loop"},
            {"left", node_json(n.left)},
            {"right", node_json(n.right)}};
  };
  json j = {{"tree", plan.root >= 0 ? node_json(plan.root) : json()}};
  if (plan.aggregate) j["aggregate"] = *plan.aggregate == AggregateOperator::Hash ? "hash" : "sort";
  return j;
}

PhysicalPlan plan_from_json(const json& j) {
  PhysicalPlan plan;
  std::function<int(const json&)> build = [&](const json& jn) -> int {
    if (jn.contains("scan")) {
      const int rel = jn.at("scan").get<int>();
      if (jn.contains("index")) return plan.add_scan(rel, AccessPath::index(jn["index"].get<int>()));
      return plan.add_scan(rel, AccessPath::sequential());
    }
    const auto op = jn.at("join").get<std::string>() == "hash" ? JoinOperator::Hash : JoinOperator::NestedLoop;
    const int l = build(jn.at("left"));
    const int r = build(jn.at("right"));
    return plan.add_join(op, l, r);
  };
  plan.root = build(j.at("tree"));
  if (j.contains("aggregate"))
    plan.aggregate = j["aggregate"].get<std::string>() == "hash" ? AggregateOperator::Hash : AggregateOperator::Sort;
  return plan;
}

}  // namespace qolab
