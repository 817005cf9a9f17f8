#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "qolab/rng.hpp"

namespace qolab {

inline constexpr int kFormatVersion = 1;

enum class IndexKind { BTree, Hash };

struct AttributeInfo {
  int id = 0;
  std::string name;
  std::int64_t distinct_values = 1;
  std::optional<IndexKind> indexed_by;

  bool operator==(const AttributeInfo&) const = default;
};

struct RelationInfo {
  int id = 0;
  std::string name;
  std::int64_t cardinality = 1;
  std::vector<AttributeInfo> attributes;

  const AttributeInfo& attribute(int attribute_id) const;
  bool operator==(const RelationInfo&) const = default;
};

// Equi-join edge between two attributes. `id` is the edge's position in
// Catalog::join_edges and doubles as the predicate identity.
struct JoinEdge {
  int id = 0;
  int left_relation = 0;
  int left_attribute = 0;
  int right_relation = 0;
  int right_attribute = 0;
  double selectivity = 1.0;

  bool touches(int relation_id) const { return left_relation == relation_id || right_relation == relation_id; }
  bool operator==(const JoinEdge&) const = default;
};

struct Catalog {
  std::vector<RelationInfo> relations;
  std::vector<JoinEdge> join_edges;

  // Relations are stored densely: relations[i].id == i.
  const RelationInfo& relation(int relation_id) const;
  std::int64_t max_cardinality() const;
  bool operator==(const Catalog&) const = default;
};

struct SelectionPredicate {
  int relation_id = 0;
  int attribute_id = 0;
  double selectivity = 1.0;

  bool operator==(const SelectionPredicate&) const = default;
};

struct Query {
  int id = 0;
  std::vector<int> relation_ids;  // sorted ascending, distinct
  std::vector<JoinEdge> join_predicates;
  std::vector<SelectionPredicate> selection_predicates;
  bool aggregate = false;

  std::size_t size() const { return relation_ids.size(); }
  bool contains(int relation_id) const;
  bool operator==(const Query&) const = default;
};

struct Workload {
  std::vector<Query> queries;
  std::uint64_t generator_seed = 0;

  const Query& query(int query_id) const;
  bool operator==(const Workload&) const = default;
};

struct CatalogConfig {
  int relation_count = 12;
  std::int64_t min_cardinality = 100;
  std::int64_t max_cardinality = 1'000'000;
  int min_attributes = 2;
  int max_attributes = 5;
  double index_density = 0.5;
  double edge_density = 0.15;
};

struct WorkloadSpec {
  int query_count = 100;
  int min_relations = 2;
  int max_relations = 5;
  double selection_density = 0.3;
  double aggregate_probability = 0.3;
};

Catalog generate_catalog(const CatalogConfig& config, std::uint64_t seed);
Workload generate_workload(const Catalog& catalog, const WorkloadSpec& spec, std::uint64_t seed);

// Throws ConfigError describing the first violated invariant.
void validate_catalog(const Catalog& catalog);
void validate_query(const Query& query, const Catalog& catalog);

// Union-find connectivity of `relation_ids` under `edges`.
bool is_connected(const std::vector<int>& relation_ids, const std::vector<JoinEdge>& edges);

// Persistence (JSON with a top-level format_version). Errors are IoError.
void save_catalog(const Catalog& catalog, const std::string& path);
Catalog load_catalog(const std::string& path);
void save_workload(const Workload& workload, const std::string& path);
Workload load_workload(const std::string& path);

std::string catalog_to_text(const Catalog& catalog);
std::string workload_to_text(const Workload& workload);

}  // namespace qolab
