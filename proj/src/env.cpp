#include "qolab/env.hpp"

#include <algorithm>
#include <bit>
#include <cmath>

#include "qolab/errors.hpp"
#include "qolab/expert.hpp"

namespace qolab {

const char* to_string(Stage stage) {
  switch (stage) {
    case Stage::JoinOrder: return "join_order";
    case Stage::AccessPath: return "access_path";
    case Stage::JoinOperator: return "join_operator";
    case Stage::Aggregate: return "aggregate";
  }
  return "?";
}

std::string EnvConfig::fingerprint() const {
  return "qolab-env/v1;features=" + std::to_string(feature_size()) + ";max_relations=" +
         std::to_string(max_relations) + ";stages=" + std::to_string(enabled_stages);
}

void EnvConfig::validate() const {
  if (enabled_stages < 1 || enabled_stages > kStageCount) throw ConfigError("enabled_stages must be in 1..4");
  if (max_relations < 1 || max_relations > 63) throw ConfigError("max_relations must be in 1..63");
  if (reward == RewardKind::ScaledLatency && calibration) validate_calibration(*calibration);
}

std::string Action::to_string() const {
  switch (kind) {
    case Kind::JoinPair: return "join[" + std::to_string(first + 1) + "," + std::to_string(second + 1) + "]";
    case Kind::AccessPath:
      return "access[" + std::to_string(relation) + "," +
             (path.kind == AccessKind::Sequential ? std::string("seq") : "idx" + std::to_string(path.attribute_id)) + "]";
    case Kind::JoinOperator: return "op[" + std::to_string(node) + "," + qolab::to_string(op) + "]";
    case Kind::Aggregate: return std::string("agg[") + qolab::to_string(aggregate) + "]";
  }
  return "?";
}

bool Action::same_choice(const Action& o) const {
  if (kind != o.kind) return false;
  switch (kind) {
    case Kind::JoinPair: return first == o.first && second == o.second;
    case Kind::AccessPath: return relation == o.relation && path == o.path;
    case Kind::JoinOperator: return node == o.node && op == o.op;
    case Kind::Aggregate: return aggregate == o.aggregate;
  }
  return false;
}

QueryContext::QueryContext(const Catalog& catalog, Query q) : query(std::move(q)), cards(catalog, query) {
  for (int rel : query.relation_ids) paths.push_back(available_access_paths(catalog, query, rel));
  log_scale = 1.0 / std::log1p(static_cast<double>(catalog.max_cardinality()));
}

std::string EnvState::snapshot() const {
  std::string s = "q" + std::to_string(query_id) + ":" + qolab::to_string(stage) + ":";
  for (int id : forest) {
    s += '{';
    for (int i = 0; i < relation_count; ++i)
      if (nodes[id].set >> i & 1) s += std::to_string(i) + ' ';
    s += '}';
  }
  s += ":a";
  for (const auto& a : access)
    s += !a ? "_" : a->kind == AccessKind::Sequential ? "s" : "i" + std::to_string(a->attribute_id);
  s += ":o";
  for (const auto& o : join_ops) s += !o ? "_" : *o == JoinOperator::Hash ? "h" : "n";
  if (aggregate) s += std::string(":g") + qolab::to_string(*aggregate);
  if (terminal) s += ":T";
  return s;
}

Environment::Environment(EnvConfig config, const Catalog& catalog, const LatencyModel* latency_model)
    : config_(std::move(config)), catalog_(&catalog), model_(latency_model) {
  config_.validate();
}

EnvState Environment::reset(const Query& query) {
  const int n = static_cast<int>(query.relation_ids.size());
  if (n < 1) throw ContractError("reset: empty query");
  if (n > config_.max_relations)
    throw ContractError("reset: query " + std::to_string(query.id) + " has " + std::to_string(n) +
                        " relations, environment supports " + std::to_string(config_.max_relations));
  auto& ctx = contexts_[query.id];
  if (!ctx || !(ctx->query == query)) ctx = std::make_shared<const QueryContext>(*catalog_, query);

  EnvState s;
  s.context = ctx;
  s.query_id = query.id;
  s.relation_count = n;
  for (int i = 0; i < n; ++i) {
    s.nodes.push_back({-1, -1, RelSet{1} << i});
    s.forest.push_back(i);
  }
  s.access.assign(n, std::nullopt);
  s.stage = Stage::JoinOrder;
  advance(s);
  return s;
}

bool Environment::stage_pending(const EnvState& s, Stage stage) const {
  switch (stage) {
    case Stage::JoinOrder: return s.forest.size() > 1;
    case Stage::AccessPath:
      return std::any_of(s.access.begin(), s.access.end(), [](const auto& a) { return !a.has_value(); });
    case Stage::JoinOperator:
      return std::any_of(s.join_ops.begin(), s.join_ops.end(), [](const auto& o) { return !o.has_value(); });
    case Stage::Aggregate: return s.context->query.aggregate && !s.aggregate;
  }
  return false;
}

void Environment::advance(EnvState& s) const {
  int cursor = static_cast<int>(s.stage);
  while (cursor < config_.enabled_stages && !stage_pending(s, static_cast<Stage>(cursor))) ++cursor;
  s.terminal = cursor >= config_.enabled_stages;
  s.stage = static_cast<Stage>(std::min(cursor, kStageCount - 1));
}

std::vector<Action> Environment::legal_actions(const EnvState& s) const {
  if (s.terminal) throw ContractError("legal_actions called on a terminal state");
  std::vector<Action> out;
  auto push = [&](Action a) {
    a.index = static_cast<int>(out.size());
    out.push_back(a);
  };
  switch (s.stage) {
    case Stage::JoinOrder:
      for (int i = 0; i < static_cast<int>(s.forest.size()); ++i)
        for (int j = i + 1; j < static_cast<int>(s.forest.size()); ++j) {
          Action a;
          a.kind = Action::Kind::JoinPair;
          a.first = i;
          a.second = j;
          push(a);
        }
      break;
    case Stage::AccessPath:
      for (int r = 0; r < s.relation_count; ++r) {
        if (s.access[r]) continue;
        for (const auto& p : s.context->paths[r]) {
          Action a;
          a.kind = Action::Kind::AccessPath;
          a.relation = r;
          a.path = p;
          push(a);
        }
      }
      break;
    case Stage::JoinOperator:
      for (int k = 0; k < static_cast<int>(s.join_ops.size()); ++k) {
        if (s.join_ops[k]) continue;
        for (JoinOperator op : kJoinOperators) {
          Action a;
          a.kind = Action::Kind::JoinOperator;
          a.node = k;
          a.op = op;
          push(a);
        }
      }
      break;
    case Stage::Aggregate:
      for (AggregateOperator g : kAggregateOperators) {
        Action a;
        a.kind = Action::Kind::Aggregate;
        a.aggregate = g;
        push(a);
      }
      break;
  }
  return out;
}

EnvState Environment::step(const EnvState& s, const Action& action) const {
  const auto legal = legal_actions(s);
  if (action.index < 0 || action.index >= static_cast<int>(legal.size()) || !legal[action.index].same_choice(action))
    throw ContractError("step: illegal action " + action.to_string() + " in state " + s.snapshot());

  EnvState next = s;
  const auto& cards = s.context->cards;
  switch (action.kind) {
    case Action::Kind::JoinPair: {
      const int a = s.forest[action.first];
      const int b = s.forest[action.second];
      const bool keep = left_first(cards, s.nodes[a].set, s.nodes[b].set);
      EnvNode joined{keep ? a : b, keep ? b : a, s.nodes[a].set | s.nodes[b].set};
      next.nodes.push_back(joined);
      next.join_ops.push_back(std::nullopt);
      const int id = static_cast<int>(next.nodes.size()) - 1;
      next.forest.erase(next.forest.begin() + action.second);
      next.forest[action.first] = id;
      std::sort(next.forest.begin(), next.forest.end(), [&](int x, int y) {
        return std::countr_zero(next.nodes[x].set) < std::countr_zero(next.nodes[y].set);
      });
      break;
    }
    case Action::Kind::AccessPath: next.access[action.relation] = action.path; break;
    case Action::Kind::JoinOperator: next.join_ops[action.node] = action.op; break;
    case Action::Kind::Aggregate: next.aggregate = action.aggregate; break;
  }
  advance(next);
  return next;
}

PhysicalPlan Environment::extract_plan(const EnvState& s) const {
  if (!s.terminal) throw ContractError("extract_plan on a non-terminal state");
  const auto& ctx = *s.context;
  PartialDecisions partial;
  partial.stages = config_.enabled_stages;
  std::function<JoinTreePtr(int)> tree = [&](int id) -> JoinTreePtr {
    const auto& node = s.nodes[id];
    if (node.left < 0) return JoinTree::leaf(ctx.query.relation_ids[std::countr_zero(node.set)]);
    return JoinTree::join(tree(node.left), tree(node.right));
  };
  partial.join_order = tree(s.forest.front());
  if (partial.stages >= 2)
    for (int r = 0; r < s.relation_count; ++r) partial.access_paths[ctx.query.relation_ids[r]] = *s.access[r];
  if (partial.stages >= 3)
    for (int k = 0; k < s.join_count(); ++k) {
      std::vector<int> key;
      const RelSet set = s.nodes[s.relation_count + k].set;
      for (int i = 0; i < s.relation_count; ++i)
        if (set >> i & 1) key.push_back(ctx.query.relation_ids[i]);
      partial.join_operators[key] = *s.join_ops[k];
    }
  if (partial.stages >= 4) partial.aggregate = s.aggregate;
  return complete_partial(*catalog_, ctx.query, partial);
}

FeatureVector Environment::featurize(const EnvState& s, const Action& action) const {
  if (s.terminal) throw ContractError("featurize on a terminal state");
  const auto legal = legal_actions(s);
  if (action.index < 0 || action.index >= static_cast<int>(legal.size()) || !legal[action.index].same_choice(action))
    throw ContractError("featurize: illegal action " + action.to_string());
  FeatureVector v(static_cast<std::size_t>(config_.feature_size()));
  featurize_into(s, action, v);
  return v;
}

// Layout, N = max_relations:
//   [0, N*N)          forest incidence: row k = k-th subtree, column = relation position
//   [N*N, N*N+N)      first operand's relations (join pair / access path / join operator)
//   [N*N+N, N*N+2N)   second operand's relations
//   then 8 scalars:   log rows of operand A, log rows of operand B,
//                     log output rows (join pair) or log operator cost (physical stages),
//                     combined predicate selectivity, stage one-hot (4)
// Log terms are log(1+x) / log(1+max catalog cardinality).
void Environment::featurize_into(const EnvState& s, const Action& action, std::span<double> out) const {
  const int n_max = config_.max_relations;
  std::fill(out.begin(), out.end(), 0.0);
  const auto& ctx = *s.context;
  const auto& cards = ctx.cards;
  const double scale = ctx.log_scale;
  auto lg = [scale](double x) { return std::log1p(x) * scale; };

  for (int k = 0; k < static_cast<int>(s.forest.size()) && k < n_max; ++k) {
    const RelSet set = s.nodes[s.forest[k]].set;
    for (int i = 0; i < s.relation_count; ++i)
      if (set >> i & 1) out[static_cast<std::size_t>(k * n_max + i)] = 1.0;
  }
  const std::size_t op_a = static_cast<std::size_t>(n_max * n_max);
  const std::size_t op_b = op_a + static_cast<std::size_t>(n_max);
  const std::size_t sc = op_b + static_cast<std::size_t>(n_max);
  auto mark = [&](std::size_t base, RelSet set) {
    for (int i = 0; i < s.relation_count; ++i)
      if (set >> i & 1) out[base + static_cast<std::size_t>(i)] = 1.0;
  };

  switch (action.kind) {
    case Action::Kind::JoinPair: {
      const RelSet a = s.nodes[s.forest[action.first]].set;
      const RelSet b = s.nodes[s.forest[action.second]].set;
      mark(op_a, a);
      mark(op_b, b);
      out[sc + 0] = lg(cards.rows(a));
      out[sc + 1] = lg(cards.rows(b));
      out[sc + 2] = lg(cards.rows(a | b));
      out[sc + 3] = cards.crossing_selectivity(a, b);
      break;
    }
    case Action::Kind::AccessPath: {
      const int r = action.relation;
      mark(op_a, RelSet{1} << r);
      out[sc + 0] = lg(cards.base_rows(r));
      out[sc + 1] = lg(cards.scan_rows(r));
      out[sc + 2] = lg(cost::scan(action.path, cards.base_rows(r), cards.scan_rows(r)));
      out[sc + 3] = cards.scan_selectivity(r);
      break;
    }
    case Action::Kind::JoinOperator: {
      const auto& node = s.nodes[s.relation_count + action.node];
      const RelSet l = s.nodes[node.left].set;
      const RelSet r = s.nodes[node.right].set;
      mark(op_a, l);
      mark(op_b, r);
      out[sc + 0] = lg(cards.rows(l));
      out[sc + 1] = lg(cards.rows(r));
      out[sc + 2] = lg(cost::join(action.op, cards.rows(l), cards.rows(r)));
      out[sc + 3] = cards.crossing_selectivity(l, r);
      break;
    }
    case Action::Kind::Aggregate: {
      const double rows = cards.rows(cards.full());
      out[sc + 0] = lg(rows);
      out[sc + 2] = lg(cost::aggregate(action.aggregate, rows));
      out[sc + 3] = 1.0;
      break;
    }
  }
  out[sc + 4 + static_cast<std::size_t>(s.stage)] = 1.0;
}

double Environment::episode_reward(const PhysicalPlan& plan, const Query& query, std::uint64_t execution_seed) const {
  switch (config_.reward) {
    case RewardKind::Cost: return -cost_plan(*catalog_, query, plan).value;
    case RewardKind::Latency:
      if (!model_) throw ContractError("latency reward needs a latency model");
      return -simulate_latency(*model_, *catalog_, query, plan, execution_seed).seconds;
    case RewardKind::ScaledLatency:
      if (!model_) throw ContractError("scaled-latency reward needs a latency model");
      if (!config_.calibration) throw ContractError("scaled-latency reward needs a calibration");
      return -scale_latency_reward(*config_.calibration,
                                   simulate_latency(*model_, *catalog_, query, plan, execution_seed).seconds);
  }
  return 0.0;
}

}  // namespace qolab
