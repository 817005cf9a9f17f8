#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "qolab/catalog.hpp"
#include "qolab/plans.hpp"

namespace qolab {

// Bitmask over a query's relations by their position in Query::relation_ids.
using RelSet = std::uint64_t;

// Operator cost constants (unitless).
namespace cost {
inline constexpr double kSeqPerRow = 1.0;
inline constexpr double kIndexLookup = 1.0;
inline constexpr double kRandomRow = 4.0;
inline constexpr double kNestedLoop = 0.01;
inline constexpr double kHashBuild = 1.5;
inline constexpr double kHashProbe = 1.0;
inline constexpr double kHashAggregate = 1.0;
inline constexpr double kSortAggregate = 0.5;

double scan(AccessPath path, double base_rows, double output_rows);
double join(JoinOperator op, double left_rows, double right_rows);
double aggregate(AggregateOperator op, double input_rows);
}  // namespace cost

struct CostEstimate {
  double value = 0.0;
};

struct LatencyConfig {
  double alpha = 0.001;  // seconds per cost unit
  double gamma = 1.1;
  double noise_sigma = 0.05;
  double error_sigma = 0.5;
  double heavy_error_probability = 0.1;
  double heavy_error_sigma = 2.0;

  bool operator==(const LatencyConfig&) const = default;
};

// Hidden ground truth: the selectivities the optimizer's estimates miss.
struct LatencyModel {
  LatencyConfig config;
  std::uint64_t build_seed = 0;
  std::vector<double> true_join_selectivity;             // by JoinEdge::id
  std::vector<std::vector<double>> selection_log_error;  // [relation][attribute]

  double true_selectivity(const JoinEdge& edge) const;
  double true_selectivity(const SelectionPredicate& pred) const;
  bool operator==(const LatencyModel&) const = default;
};

struct LatencySample {
  double seconds = 0.0;
  int query_id = -1;
  std::string plan;
};

// Row counts for every relation subset of one query, under either the
// optimizer's estimates or a latency model's true selectivities. The row count
// of a subset does not depend on the join tree that produced it.
class CardinalityModel {
 public:
  CardinalityModel(const Catalog& catalog, const Query& query, const LatencyModel* truth = nullptr);

  int size() const { return n_; }
  RelSet full() const { return (RelSet{1} << n_) - 1; }
  int local_index(int relation_id) const;
  int relation_id(int local) const { return relation_ids_[local]; }

  double base_rows(int local) const { return base_rows_[local]; }
  double scan_rows(int local) const { return scan_rows_[local]; }
  double scan_selectivity(int local) const { return scan_sel_[local]; }
  double rows(RelSet set) const;
  // Product of join selectivities for predicates crossing (left, right).
  double crossing_selectivity(RelSet left, RelSet right) const;

  struct LocalEdge {
    int a;
    int b;
    double selectivity;
  };
  const std::vector<LocalEdge>& edges() const { return edges_; }

 private:
  double compute_rows(RelSet set) const;

  int n_ = 0;
  std::vector<int> relation_ids_;
  std::vector<double> base_rows_;
  std::vector<double> scan_sel_;
  std::vector<double> scan_rows_;
  std::vector<LocalEdge> edges_;
  std::vector<double> row_table_;  // cached for small queries
};

// Independence-assumption estimate: product of base cardinalities and every
// predicate's selectivity. Predicates must lie inside `relation_ids`.
double estimate_cardinality(const Catalog& catalog, const std::vector<int>& relation_ids,
                            const std::vector<JoinEdge>& join_predicates,
                            const std::vector<SelectionPredicate>& selection_predicates);

// Sum of operator costs over the plan (no validation).
double plan_cost(const CardinalityModel& cards, const PhysicalPlan& plan);

// Validated optimizer cost. Throws ContractError on an invalid plan.
CostEstimate cost_plan(const Catalog& catalog, const Query& query, const PhysicalPlan& plan);

LatencyModel build_latency_model(const Catalog& catalog, const LatencyConfig& config, std::uint64_t seed);
void validate_latency_config(const LatencyConfig& config);

// cost_plan with every selectivity replaced by its true value.
double true_cost(const LatencyModel& model, const Catalog& catalog, const Query& query, const PhysicalPlan& plan);

// alpha * true_cost^gamma * exp(eta), eta ~ Normal(0, noise_sigma) from execution_seed.
LatencySample simulate_latency(const LatencyModel& model, const Catalog& catalog, const Query& query,
                               const PhysicalPlan& plan, std::uint64_t execution_seed);
double latency_from_true_cost(const LatencyConfig& config, double true_cost_value, std::uint64_t execution_seed);

void save_latency_model(const LatencyModel& model, const std::string& path);
LatencyModel load_latency_model(const std::string& path);
std::string latency_model_to_text(const LatencyModel& model);

}  // namespace qolab
