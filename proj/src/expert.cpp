#include "qolab/expert.hpp"

#include <algorithm>
#include <bit>
#include <functional>
#include <limits>

#include "qolab/errors.hpp"

namespace qolab {

std::pair<AccessPath, double> best_access_path(const std::vector<AccessPath>& options, double base_rows,
                                               double scan_rows) {
  std::pair<AccessPath, double> best{AccessPath::sequential(), std::numeric_limits<double>::infinity()};
  for (const auto& p : options) {
    const double c = cost::scan(p, base_rows, scan_rows);
    if (c < best.second) best = {p, c};
  }
  return best;
}

JoinOperator best_join_operator(double left_rows, double right_rows) {
  return cost::join(JoinOperator::Hash, left_rows, right_rows) < cost::join(JoinOperator::NestedLoop, left_rows, right_rows)
             ? JoinOperator::Hash
             : JoinOperator::NestedLoop;
}

AggregateOperator best_aggregate(double input_rows) {
  return cost::aggregate(AggregateOperator::Sort, input_rows) < cost::aggregate(AggregateOperator::Hash, input_rows)
             ? AggregateOperator::Sort
             : AggregateOperator::Hash;
}

bool left_first(const CardinalityModel& cards, RelSet a, RelSet b) {
  const double ra = cards.rows(a);
  const double rb = cards.rows(b);
  if (ra != rb) return ra < rb;
  return std::countr_zero(a) < std::countr_zero(b);
}

namespace {

struct DpEntry {
  double cost = std::numeric_limits<double>::infinity();
  RelSet left = 0;  // 0 for scans
  JoinOperator op = JoinOperator::Hash;
  AccessPath access;
};

int emit(const std::vector<DpEntry>& table, const CardinalityModel& cards, RelSet set, PhysicalPlan& plan) {
  const auto& e = table[set];
  if (e.left == 0) return plan.add_scan(cards.relation_id(std::countr_zero(set)), e.access);
  const int l = emit(table, cards, e.left, plan);
  const int r = emit(table, cards, set ^ e.left, plan);
  return plan.add_join(e.op, l, r);
}

void finish_aggregate(const Query& query, const CardinalityModel& cards, PhysicalPlan& plan) {
  if (query.aggregate) plan.aggregate = best_aggregate(cards.rows(cards.full()));
}

}  // namespace

PhysicalPlan optimize_dp(const Catalog& catalog, const Query& query) {
  const int n = static_cast<int>(query.relation_ids.size());
  if (n > kMaxDpRelations)
    throw RefusalError("optimize_dp refuses " + std::to_string(n) + " relations (guard is " +
                       std::to_string(kMaxDpRelations) + ")");
  if (n == 0) throw ContractError("optimize_dp needs a nonempty query");
  const CardinalityModel cards(catalog, query);
  const RelSet full = cards.full();
  std::vector<DpEntry> table(full + 1);
  for (int i = 0; i < n; ++i) {
    auto [path, c] = best_access_path(available_access_paths(catalog, query, cards.relation_id(i)), cards.base_rows(i),
                                      cards.scan_rows(i));
    table[RelSet{1} << i] = {c, 0, JoinOperator::Hash, path};
  }
  // Every ordered split, cross products included; subsets are visited in
  // increasing numeric order, so both halves are final before use.
  for (RelSet set = 1; set <= full; ++set) {
    if (std::has_single_bit(set)) continue;
    DpEntry best;
    bool best_canonical = false;
    for (RelSet l = (set - 1) & set; l > 0; l = (l - 1) & set) {
      const RelSet r = set ^ l;
      const double rl = cards.rows(l);
      const double rr = cards.rows(r);
      const double base = table[l].cost + table[r].cost;
      const bool canonical = left_first(cards, l, r);
      for (JoinOperator op : kJoinOperators) {
        const double c = base + cost::join(op, rl, rr);
        if (c < best.cost || (c == best.cost && canonical && !best_canonical)) {
          best = {c, l, op, {}};
          best_canonical = canonical;
        }
      }
    }
    table[set] = best;
  }
  PhysicalPlan plan;
  plan.root = emit(table, cards, full, plan);
  finish_aggregate(query, cards, plan);
  return plan;
}

PhysicalPlan optimize_greedy(const Catalog& catalog, const Query& query) {
  const int n = static_cast<int>(query.relation_ids.size());
  if (n == 0) throw ContractError("optimize_greedy needs a nonempty query");
  const CardinalityModel cards(catalog, query);
  PhysicalPlan plan;
  struct Subtree {
    RelSet set;
    double cost;
    int node;
  };
  std::vector<Subtree> forest;
  for (int i = 0; i < n; ++i) {
    auto [path, c] = best_access_path(available_access_paths(catalog, query, cards.relation_id(i)), cards.base_rows(i),
                                      cards.scan_rows(i));
    forest.push_back({RelSet{1} << i, c, plan.add_scan(cards.relation_id(i), path)});
  }
  while (forest.size() > 1) {
    double best_cost = std::numeric_limits<double>::infinity();
    std::size_t bi = 0, bj = 0;
    for (std::size_t i = 0; i < forest.size(); ++i)
      for (std::size_t j = i + 1; j < forest.size(); ++j) {
        const auto& a = left_first(cards, forest[i].set, forest[j].set) ? forest[i] : forest[j];
        const auto& b = &a == &forest[i] ? forest[j] : forest[i];
        const double ra = cards.rows(a.set);
        const double rb = cards.rows(b.set);
        const double c = a.cost + b.cost + cost::join(best_join_operator(ra, rb), ra, rb);
        if (c < best_cost) {
          best_cost = c;
          bi = i;
          bj = j;
        }
      }
    const bool keep = left_first(cards, forest[bi].set, forest[bj].set);
    const Subtree& a = keep ? forest[bi] : forest[bj];
    const Subtree& b = keep ? forest[bj] : forest[bi];
    const JoinOperator op = best_join_operator(cards.rows(a.set), cards.rows(b.set));
    Subtree merged{a.set | b.set, best_cost, plan.add_join(op, a.node, b.node)};
    forest.erase(forest.begin() + static_cast<std::ptrdiff_t>(bj));
    forest[bi] = merged;
  }
  plan.root = forest.front().node;
  finish_aggregate(query, cards, plan);
  return plan;
}

PhysicalPlan optimize(ExpertKind kind, const Catalog& catalog, const Query& query) {
  return kind == ExpertKind::Greedy ? optimize_greedy(catalog, query) : optimize_dp(catalog, query);
}

PhysicalPlan complete_partial(const Catalog& catalog, const Query& query, const PartialDecisions& partial) {
  if (partial.stages < 0 || partial.stages > 4) throw ContractError("partial decisions: stage count outside 0..4");
  if (partial.stages == 0) return optimize_dp(catalog, query);
  if (!partial.join_order) throw ContractError("partial decisions: join order stage decided without a tree");
  auto leaves = tree_leaves(*partial.join_order);
  std::sort(leaves.begin(), leaves.end());
  if (leaves != query.relation_ids) throw ContractError("partial decisions: join order does not cover the query");

  const CardinalityModel cards(catalog, query);
  PhysicalPlan plan;
  std::function<std::pair<int, RelSet>(const JoinTree&)> build = [&](const JoinTree& t) -> std::pair<int, RelSet> {
    if (t.is_leaf()) {
      const int local = cards.local_index(t.relation);
      const auto options = available_access_paths(catalog, query, t.relation);
      AccessPath path;
      if (partial.stages >= 2) {
        auto it = partial.access_paths.find(t.relation);
        if (it == partial.access_paths.end())
          throw ContractError("partial decisions: access path stage decided but relation " +
                              std::to_string(t.relation) + " has none");
        if (std::find(options.begin(), options.end(), it->second) == options.end())
          throw ContractError("partial decisions: access path unavailable for relation " + std::to_string(t.relation));
        path = it->second;
      } else {
        path = best_access_path(options, cards.base_rows(local), cards.scan_rows(local)).first;
      }
      return {plan.add_scan(t.relation, path), RelSet{1} << local};
    }
    const auto [l, ls] = build(*t.left);
    const auto [r, rs] = build(*t.right);
    JoinOperator op;
    if (partial.stages >= 3) {
      std::vector<int> key;
      for (int i = 0; i < cards.size(); ++i)
        if ((ls | rs) >> i & 1) key.push_back(cards.relation_id(i));
      auto it = partial.join_operators.find(key);
      if (it == partial.join_operators.end())
        throw ContractError("partial decisions: join operator stage decided but a join node has none");
      op = it->second;
    } else {
      op = best_join_operator(cards.rows(ls), cards.rows(rs));
    }
    return {plan.add_join(op, l, r), ls | rs};
  };
  plan.root = build(*partial.join_order).first;
  if (query.aggregate) {
    if (partial.stages >= 4) {
      if (!partial.aggregate) throw ContractError("partial decisions: aggregate stage decided without an operator");
      plan.aggregate = partial.aggregate;
    } else {
      plan.aggregate = best_aggregate(cards.rows(cards.full()));
    }
  } else if (partial.aggregate) {
    throw ContractError("partial decisions: aggregate operator for a query without aggregation");
  }
  return plan;
}

}  // namespace qolab
