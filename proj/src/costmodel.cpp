#include "qolab/costmodel.hpp"

#include <algorithm>
#include <cmath>

#include "json_io.hpp"
#include "qolab/errors.hpp"
#include "qolab/rng.hpp"

namespace qolab {

using detail::json;

namespace cost {

double scan(AccessPath path, double base_rows, double output_rows) {
  if (path.kind == AccessKind::Sequential) return kSeqPerRow * base_rows;
  return kIndexLookup * std::log2(base_rows) + kRandomRow * output_rows;
}

double join(JoinOperator op, double left_rows, double right_rows) {
  if (op == JoinOperator::NestedLoop) return kNestedLoop * (left_rows * right_rows);  // symmetric in the operands, bit for bit
  return kHashBuild * left_rows + kHashProbe * right_rows;
}

double aggregate(AggregateOperator op, double input_rows) {
  if (op == AggregateOperator::Hash) return kHashAggregate * input_rows;
  return kSortAggregate * input_rows * std::log2(input_rows + 2.0);
}

}  // namespace cost

double LatencyModel::true_selectivity(const JoinEdge& edge) const {
  if (edge.id < 0 || edge.id >= static_cast<int>(true_join_selectivity.size()))
    throw ContractError("latency model has no join edge " + std::to_string(edge.id));
  return true_join_selectivity[edge.id];
}

double LatencyModel::true_selectivity(const SelectionPredicate& pred) const {
  if (pred.relation_id < 0 || pred.relation_id >= static_cast<int>(selection_log_error.size()) ||
      pred.attribute_id < 0 || pred.attribute_id >= static_cast<int>(selection_log_error[pred.relation_id].size()))
    throw ContractError("latency model has no attribute for selection predicate");
  return std::min(1.0, pred.selectivity * std::exp(selection_log_error[pred.relation_id][pred.attribute_id]));
}

// ---- cardinalities --------------------------------------------------------

namespace {
constexpr int kRowTableLimit = 16;
}

CardinalityModel::CardinalityModel(const Catalog& catalog, const Query& query, const LatencyModel* truth)
    : n_(static_cast<int>(query.relation_ids.size())), relation_ids_(query.relation_ids) {
  if (n_ > 63) throw ContractError("queries are limited to 63 relations");
  base_rows_.resize(n_);
  scan_sel_.assign(n_, 1.0);
  scan_rows_.resize(n_);
  for (int i = 0; i < n_; ++i) base_rows_[i] = static_cast<double>(catalog.relation(relation_ids_[i]).cardinality);
  for (const auto& s : query.selection_predicates) {
    const int i = local_index(s.relation_id);
    scan_sel_[i] *= truth ? truth->true_selectivity(s) : s.selectivity;
  }
  for (int i = 0; i < n_; ++i) scan_rows_[i] = base_rows_[i] * scan_sel_[i];
  for (const auto& e : query.join_predicates)
    edges_.push_back({local_index(e.left_relation), local_index(e.right_relation),
                      truth ? truth->true_selectivity(e) : e.selectivity});
  if (n_ <= kRowTableLimit) {
    row_table_.resize(std::size_t{1} << n_);
    for (RelSet s = 0; s < row_table_.size(); ++s) row_table_[s] = compute_rows(s);
  }
}

int CardinalityModel::local_index(int relation_id) const {
  auto it = std::lower_bound(relation_ids_.begin(), relation_ids_.end(), relation_id);
  if (it == relation_ids_.end() || *it != relation_id)
    throw ContractError("relation " + std::to_string(relation_id) + " is not part of the query");
  return static_cast<int>(it - relation_ids_.begin());
}

// Canonical multiplication order (relations ascending, then predicates in
// query order) so every tree over the same subset sees the same value.
double CardinalityModel::compute_rows(RelSet set) const {
  double rows = 1.0;
  for (int i = 0; i < n_; ++i)
    if (set >> i & 1) rows *= scan_rows_[i];
  for (const auto& e : edges_)
    if ((set >> e.a & 1) && (set >> e.b & 1)) rows *= e.selectivity;
  return rows;
}

double CardinalityModel::rows(RelSet set) const {
  if (!row_table_.empty()) return row_table_[set];
  return compute_rows(set);
}

double CardinalityModel::crossing_selectivity(RelSet left, RelSet right) const {
  double sel = 1.0;
  for (const auto& e : edges_)
    if (((left >> e.a & 1) && (right >> e.b & 1)) || ((left >> e.b & 1) && (right >> e.a & 1))) sel *= e.selectivity;
  return sel;
}

double estimate_cardinality(const Catalog& catalog, const std::vector<int>& relation_ids,
                            const std::vector<JoinEdge>& join_predicates,
                            const std::vector<SelectionPredicate>& selection_predicates) {
  if (relation_ids.empty()) throw ContractError("estimate_cardinality needs a nonempty relation set");
  std::vector<int> rels = relation_ids;
  std::sort(rels.begin(), rels.end());
  auto inside = [&](int r) { return std::binary_search(rels.begin(), rels.end(), r); };
  for (const auto& e : join_predicates)
    if (!inside(e.left_relation) || !inside(e.right_relation))
      throw ContractError("join predicate references a relation outside the set");
  for (const auto& s : selection_predicates)
    if (!inside(s.relation_id)) throw ContractError("selection predicate references a relation outside the set");

  double rows = 1.0;
  for (int r : rels) {
    double scan = static_cast<double>(catalog.relation(r).cardinality);
    double sel = 1.0;
    for (const auto& s : selection_predicates)
      if (s.relation_id == r) sel *= s.selectivity;
    rows *= scan * sel;
  }
  for (const auto& e : join_predicates) rows *= e.selectivity;
  return rows;
}

// ---- plan costing ---------------------------------------------------------

namespace {

struct SubCost {
  double cost;
  RelSet set;
};

SubCost cost_node(const CardinalityModel& cards, const PhysicalPlan& plan, int index) {
  const auto& node = plan.nodes[static_cast<std::size_t>(index)];
  if (node.is_scan()) {
    const int local = cards.local_index(node.relation_id);
    return {cost::scan(node.access, cards.base_rows(local), cards.scan_rows(local)), RelSet{1} << local};
  }
  const SubCost l = cost_node(cards, plan, node.left);
  const SubCost r = cost_node(cards, plan, node.right);
  return {l.cost + r.cost + cost::join(node.op, cards.rows(l.set), cards.rows(r.set)), l.set | r.set};
}

void require_valid(const PhysicalPlan& plan, const Query& query, const Catalog& catalog) {
  const auto report = validate_plan(plan, query, catalog);
  if (!report.ok) throw ContractError("invalid plan: " + report.violations.front());
}

}  // namespace

double plan_cost(const CardinalityModel& cards, const PhysicalPlan& plan) {
  const SubCost c = cost_node(cards, plan, plan.root);
  if (!plan.aggregate) return c.cost;
  return c.cost + cost::aggregate(*plan.aggregate, cards.rows(c.set));
}

CostEstimate cost_plan(const Catalog& catalog, const Query& query, const PhysicalPlan& plan) {
  require_valid(plan, query, catalog);
  return {plan_cost(CardinalityModel(catalog, query), plan)};
}

// ---- latency model --------------------------------------------------------

void validate_latency_config(const LatencyConfig& c) {
  if (!(c.alpha > 0.0) || !std::isfinite(c.alpha)) throw ConfigError("latency alpha must be > 0");
  if (!(c.gamma >= 1.0) || !std::isfinite(c.gamma)) throw ConfigError("latency gamma must be >= 1");
  if (!(c.noise_sigma >= 0.0)) throw ConfigError("latency noise_sigma must be >= 0");
  if (!(c.error_sigma >= 0.0)) throw ConfigError("latency error_sigma must be >= 0");
  if (!(c.heavy_error_probability >= 0.0 && c.heavy_error_probability <= 1.0))
    throw ConfigError("latency heavy_error_probability must be in [0,1]");
  if (!(c.heavy_error_sigma >= 0.0)) throw ConfigError("latency heavy_error_sigma must be >= 0");
}

LatencyModel build_latency_model(const Catalog& catalog, const LatencyConfig& config, std::uint64_t seed) {
  validate_latency_config(config);
  LatencyModel m;
  m.config = config;
  m.build_seed = seed;
  Rng rng(mix_seed(seed, 0x1a7e));
  auto draw_error = [&] {
    const bool heavy = uniform01(rng) < config.heavy_error_probability;
    const double z = standard_normal(rng);
    return (heavy ? config.heavy_error_sigma : config.error_sigma) * z;
  };
  for (const auto& e : catalog.join_edges) m.true_join_selectivity.push_back(std::min(1.0, e.selectivity * std::exp(draw_error())));
  for (const auto& r : catalog.relations) {
    std::vector<double> errs;
    for (std::size_t a = 0; a < r.attributes.size(); ++a) errs.push_back(draw_error());
    m.selection_log_error.push_back(std::move(errs));
  }
  return m;
}

double true_cost(const LatencyModel& model, const Catalog& catalog, const Query& query, const PhysicalPlan& plan) {
  require_valid(plan, query, catalog);
  return plan_cost(CardinalityModel(catalog, query, &model), plan);
}

double latency_from_true_cost(const LatencyConfig& config, double true_cost_value, std::uint64_t execution_seed) {
  Rng rng(mix_seed(execution_seed, 0xe9ec));
  const double eta = config.noise_sigma * standard_normal(rng);
  return config.alpha * std::pow(true_cost_value, config.gamma) * std::exp(eta);
}

LatencySample simulate_latency(const LatencyModel& model, const Catalog& catalog, const Query& query,
                               const PhysicalPlan& plan, std::uint64_t execution_seed) {
  const double tc = true_cost(model, catalog, query, plan);
  return {latency_from_true_cost(model.config, tc, execution_seed), query.id, plan.to_string()};
}

// ---- persistence ----------------------------------------------------------

std::string latency_model_to_text(const LatencyModel& m) {
  const auto& c = m.config;
  json doc = {{"format_version", kFormatVersion},
              {"kind", "latency_model"},
              {"build_seed", m.build_seed},
              {"config",
               {{"alpha", c.alpha},
                {"gamma", c.gamma},
                {"noise_sigma", c.noise_sigma},
                {"error_sigma", c.error_sigma},
                {"heavy_error_probability", c.heavy_error_probability},
                {"heavy_error_sigma", c.heavy_error_sigma}}},
              {"true_join_selectivity", m.true_join_selectivity},
              {"selection_log_error", m.selection_log_error}};
  return doc.dump(1) + "\n";
}

void save_latency_model(const LatencyModel& model, const std::string& path) {
  detail::write_text_file(path, latency_model_to_text(model));
}

LatencyModel load_latency_model(const std::string& path) {
  const json doc = detail::read_versioned_json(path, "latency model");
  return detail::guarded_parse("latency model", [&] {
    LatencyModel m;
    m.build_seed = doc.at("build_seed").get<std::uint64_t>();
    const auto& c = doc.at("config");
    m.config.alpha = c.at("alpha").get<double>();
    m.config.gamma = c.at("gamma").get<double>();
    m.config.noise_sigma = c.at("noise_sigma").get<double>();
    m.config.error_sigma = c.at("error_sigma").get<double>();
    m.config.heavy_error_probability = c.at("heavy_error_probability").get<double>();
    m.config.heavy_error_sigma = c.at("heavy_error_sigma").get<double>();
    m.true_join_selectivity = doc.at("true_join_selectivity").get<std::vector<double>>();
    m.selection_log_error = doc.at("selection_log_error").get<std::vector<std::vector<double>>>();
    return m;
  });
}

}  // namespace qolab
