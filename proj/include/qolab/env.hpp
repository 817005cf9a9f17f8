#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "qolab/catalog.hpp"
#include "qolab/costmodel.hpp"
#include "qolab/plans.hpp"
#include "qolab/reward.hpp"

namespace qolab {

// Optimization pipeline, in decision order.
enum class Stage { JoinOrder = 0, AccessPath = 1, JoinOperator = 2, Aggregate = 3 };
inline constexpr int kStageCount = 4;

enum class RewardKind { Cost, Latency, ScaledLatency };

struct EnvConfig {
  int enabled_stages = 1;  // pipeline prefix length, 1..4
  int max_relations = 8;   // N_max; fixes the feature length
  RewardKind reward = RewardKind::Cost;
  std::optional<BootstrapCalibration> calibration;  // required for ScaledLatency

  int feature_size() const { return max_relations * max_relations + 2 * max_relations + 8; }
  // Identifies everything a trained network depends on.
  std::string fingerprint() const;
  void validate() const;
};

struct Action {
  enum class Kind { JoinPair, AccessPath, JoinOperator, Aggregate };
  Kind kind = Kind::JoinPair;
  int first = -1;   // join pair: forest positions, first < second
  int second = -1;
  int relation = -1;  // access path: relation position within the query
  AccessPath path;
  int node = -1;  // join operator: join node ordinal (creation order)
  JoinOperator op = JoinOperator::Hash;
  AggregateOperator aggregate = AggregateOperator::Hash;
  int index = 0;  // canonical position within legal_actions()

  std::string to_string() const;
  bool same_choice(const Action& other) const;
};

struct EnvNode {
  int left = -1;
  int right = -1;
  RelSet set = 0;
};

struct QueryContext {
  QueryContext(const Catalog& catalog, Query q);

  Query query;
  CardinalityModel cards;
  std::vector<std::vector<AccessPath>> paths;  // per relation position
  double log_scale = 1.0;                      // 1 / log(1 + max catalog cardinality)
};

struct EnvState {
  std::shared_ptr<const QueryContext> context;
  int query_id = -1;
  int relation_count = 0;
  std::vector<EnvNode> nodes;  // scans first (by relation position), joins appended
  std::vector<int> forest;     // node ids ordered by lowest contained relation position
  std::vector<std::optional<AccessPath>> access;
  std::vector<std::optional<JoinOperator>> join_ops;  // by join ordinal
  std::optional<AggregateOperator> aggregate;
  Stage stage = Stage::JoinOrder;
  bool terminal = false;

  int join_count() const { return static_cast<int>(nodes.size()) - relation_count; }
  // Text form of the decision state; identical states give identical text.
  std::string snapshot() const;
};

using FeatureVector = std::vector<double>;

// Bottom-up plan construction in the ReJOIN style, extended with the later
// pipeline stages. Instances are single-owner; states are immutable values.
class Environment {
 public:
  Environment(EnvConfig config, const Catalog& catalog, const LatencyModel* latency_model = nullptr);

  const EnvConfig& config() const { return config_; }
  const Catalog& catalog() const { return *catalog_; }
  const LatencyModel* latency_model() const { return model_; }

  EnvState reset(const Query& query);
  std::vector<Action> legal_actions(const EnvState& state) const;
  EnvState step(const EnvState& state, const Action& action) const;
  PhysicalPlan extract_plan(const EnvState& state) const;

  FeatureVector featurize(const EnvState& state, const Action& action) const;
  // Unchecked variant writing into a caller buffer of feature_size() entries.
  void featurize_into(const EnvState& state, const Action& action, std::span<double> out) const;

  // Sparse terminal reward: negated cost, latency or scaled latency.
  double episode_reward(const PhysicalPlan& plan, const Query& query, std::uint64_t execution_seed) const;

 private:
  bool stage_pending(const EnvState& state, Stage stage) const;
  void advance(EnvState& state) const;

  EnvConfig config_;
  const Catalog* catalog_;
  const LatencyModel* model_;
  std::map<int, std::shared_ptr<const QueryContext>> contexts_;
};

const char* to_string(Stage stage);

}  // namespace qolab
