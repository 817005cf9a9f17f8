#include "qolab/catalog.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "json_io.hpp"
#include "qolab/errors.hpp"

namespace qolab {

using detail::json;

const AttributeInfo& RelationInfo::attribute(int attribute_id) const {
  if (attribute_id < 0 || attribute_id >= static_cast<int>(attributes.size()))
    throw ContractError("relation " + std::to_string(id) + " has no attribute " + std::to_string(attribute_id));
  return attributes[attribute_id];
}

const RelationInfo& Catalog::relation(int relation_id) const {
  if (relation_id < 0 || relation_id >= static_cast<int>(relations.size()))
    throw ContractError("catalog has no relation " + std::to_string(relation_id));
  return relations[relation_id];
}

std::int64_t Catalog::max_cardinality() const {
  std::int64_t m = 1;
  for (const auto& r : relations) m = std::max(m, r.cardinality);
  return m;
}

bool Query::contains(int relation_id) const {
  return std::binary_search(relation_ids.begin(), relation_ids.end(), relation_id);
}

const Query& Workload::query(int query_id) const {
  for (const auto& q : queries)
    if (q.id == query_id) return q;
  throw ContractError("workload has no query " + std::to_string(query_id));
}

namespace {

struct UnionFind {
  explicit UnionFind(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  std::size_t find(std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  }
  bool unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return false;
    parent[a] = b;
    return true;
  }
  std::vector<std::size_t> parent;
};

std::int64_t log_uniform(Rng& rng, std::int64_t lo, std::int64_t hi) {
  if (lo >= hi) return lo;
  const double x = std::exp(std::log(static_cast<double>(lo)) +
                            uniform01(rng) * (std::log(static_cast<double>(hi)) - std::log(static_cast<double>(lo))));
  return std::clamp(static_cast<std::int64_t>(std::llround(x)), lo, hi);
}

void check_config(const CatalogConfig& c) {
  if (c.relation_count < 1) throw ConfigError("relation_count must be >= 1");
  if (c.min_cardinality < 1 || c.max_cardinality > 1'000'000'000 || c.min_cardinality > c.max_cardinality)
    throw ConfigError("cardinality range must satisfy 1 <= min_cardinality <= max_cardinality <= 1e9");
  if (c.min_attributes < 1 || c.min_attributes > c.max_attributes)
    throw ConfigError("attribute range must satisfy 1 <= min_attributes <= max_attributes");
  if (!(c.index_density >= 0.0 && c.index_density <= 1.0)) throw ConfigError("index_density must be in [0,1]");
  if (!(c.edge_density >= 0.0 && c.edge_density <= 1.0)) throw ConfigError("edge_density must be in [0,1]");
}

JoinEdge make_edge(Rng& rng, const Catalog& cat, int a, int b) {
  if (a > b) std::swap(a, b);
  const auto& ra = cat.relations[a];
  const auto& rb = cat.relations[b];
  JoinEdge e;
  e.left_relation = a;
  e.right_relation = b;
  e.left_attribute = static_cast<int>(uniform_int(rng, 0, static_cast<int>(ra.attributes.size()) - 1));
  e.right_attribute = static_cast<int>(uniform_int(rng, 0, static_cast<int>(rb.attributes.size()) - 1));
  const auto d = std::max(ra.attributes[e.left_attribute].distinct_values, rb.attributes[e.right_attribute].distinct_values);
  e.selectivity = 1.0 / static_cast<double>(d);
  return e;
}

}  // namespace

bool is_connected(const std::vector<int>& relation_ids, const std::vector<JoinEdge>& edges) {
  if (relation_ids.empty()) return false;
  auto pos = [&](int r) -> std::ptrdiff_t {
    auto it = std::find(relation_ids.begin(), relation_ids.end(), r);
    return it == relation_ids.end() ? -1 : it - relation_ids.begin();
  };
  UnionFind uf(relation_ids.size());
  std::size_t components = relation_ids.size();
  for (const auto& e : edges) {
    const auto a = pos(e.left_relation);
    const auto b = pos(e.right_relation);
    if (a < 0 || b < 0) continue;
    if (uf.unite(static_cast<std::size_t>(a), static_cast<std::size_t>(b))) --components;
  }
  return components == 1;
}

Catalog generate_catalog(const CatalogConfig& config, std::uint64_t seed) {
  check_config(config);
  Rng rng(mix_seed(seed, 0xca7a));
  Catalog cat;
  for (int i = 0; i < config.relation_count; ++i) {
    RelationInfo rel;
    rel.id = i;
    rel.name = "r" + std::to_string(i);
    rel.cardinality = log_uniform(rng, config.min_cardinality, config.max_cardinality);
    const int attrs = static_cast<int>(uniform_int(rng, config.min_attributes, config.max_attributes));
    for (int a = 0; a < attrs; ++a) {
      AttributeInfo attr;
      attr.id = a;
      attr.name = rel.name + "_a" + std::to_string(a);
      attr.distinct_values = log_uniform(rng, std::max<std::int64_t>(1, rel.cardinality / 100), rel.cardinality);
      rel.attributes.push_back(std::move(attr));
    }
    if (uniform01(rng) < config.index_density) {
      const int a = static_cast<int>(uniform_int(rng, 0, attrs - 1));
      rel.attributes[a].indexed_by = uniform01(rng) < 0.5 ? IndexKind::BTree : IndexKind::Hash;
    }
    cat.relations.push_back(std::move(rel));
  }

  // Random spanning tree, then extra edges by density.
  const int n = config.relation_count;
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::set<std::pair<int, int>> linked;
  std::vector<JoinEdge> edges;
  for (int k = 1; k < n; ++k) {
    const int a = order[k];
    const int b = order[uniform_int(rng, 0, k - 1)];
    edges.push_back(make_edge(rng, cat, a, b));
    linked.insert({std::min(a, b), std::max(a, b)});
  }
  for (int a = 0; a < n; ++a)
    for (int b = a + 1; b < n; ++b) {
      if (linked.count({a, b})) continue;
      if (uniform01(rng) < config.edge_density) {
        edges.push_back(make_edge(rng, cat, a, b));
        linked.insert({a, b});
      }
    }
  std::sort(edges.begin(), edges.end(), [](const JoinEdge& x, const JoinEdge& y) {
    return std::tie(x.left_relation, x.right_relation) < std::tie(y.left_relation, y.right_relation);
  });
  for (std::size_t i = 0; i < edges.size(); ++i) edges[i].id = static_cast<int>(i);
  cat.join_edges = std::move(edges);
  validate_catalog(cat);
  return cat;
}

Workload generate_workload(const Catalog& catalog, const WorkloadSpec& spec, std::uint64_t seed) {
  const int n = static_cast<int>(catalog.relations.size());
  if (spec.min_relations < 1) throw ConfigError("min_relations must be >= 1");
  if (spec.max_relations < spec.min_relations) throw ConfigError("max_relations must be >= min_relations");
  if (spec.max_relations > n)
    throw ConfigError("max_relations (" + std::to_string(spec.max_relations) + ") exceeds catalog size (" +
                      std::to_string(n) + ")");
  if (spec.query_count < 0) throw ConfigError("query_count must be >= 0");
  if (!(spec.selection_density >= 0.0 && spec.selection_density <= 1.0))
    throw ConfigError("selection_density must be in [0,1]");
  if (!(spec.aggregate_probability >= 0.0 && spec.aggregate_probability <= 1.0))
    throw ConfigError("aggregate_probability must be in [0,1]");

  std::vector<std::vector<int>> neighbors(n);
  for (const auto& e : catalog.join_edges) {
    neighbors[e.left_relation].push_back(e.right_relation);
    neighbors[e.right_relation].push_back(e.left_relation);
  }

  Rng rng(mix_seed(seed, 0x3017));
  Workload w;
  w.generator_seed = seed;
  constexpr int kMaxRetries = 100;
  for (int qi = 0; qi < spec.query_count; ++qi) {
    const int k = static_cast<int>(uniform_int(rng, spec.min_relations, spec.max_relations));
    std::vector<int> chosen;
    for (int attempt = 0;; ++attempt) {
      if (attempt == kMaxRetries)
        throw GenerationError("could not draw a connected set of " + std::to_string(k) + " relations");
      chosen.assign(1, static_cast<int>(uniform_int(rng, 0, n - 1)));
      while (static_cast<int>(chosen.size()) < k) {
        std::vector<int> frontier;
        for (int r : chosen)
          for (int nb : neighbors[r])
            if (std::find(chosen.begin(), chosen.end(), nb) == chosen.end() &&
                std::find(frontier.begin(), frontier.end(), nb) == frontier.end())
              frontier.push_back(nb);
        if (frontier.empty()) break;
        std::sort(frontier.begin(), frontier.end());
        chosen.push_back(frontier[uniform_int(rng, 0, static_cast<int>(frontier.size()) - 1)]);
      }
      if (static_cast<int>(chosen.size()) == k) break;
    }
    std::sort(chosen.begin(), chosen.end());

    Query q;
    q.id = qi;
    q.relation_ids = chosen;
    for (const auto& e : catalog.join_edges)
      if (q.contains(e.left_relation) && q.contains(e.right_relation)) q.join_predicates.push_back(e);
    for (int r : chosen) {
      if (uniform01(rng) >= spec.selection_density) continue;
      const auto& rel = catalog.relations[r];
      int attr = static_cast<int>(uniform_int(rng, 0, static_cast<int>(rel.attributes.size()) - 1));
      if (uniform01(rng) < 0.5)
        for (const auto& a : rel.attributes)
          if (a.indexed_by) attr = a.id;
      // Log-uniform in [1e-4, 1].
      const double sel = std::exp(std::log(1e-4) * uniform01(rng));
      q.selection_predicates.push_back({r, attr, sel});
    }
    q.aggregate = uniform01(rng) < spec.aggregate_probability;
    w.queries.push_back(std::move(q));
  }
  return w;
}

void validate_catalog(const Catalog& cat) {
  if (cat.relations.empty()) throw ConfigError("catalog has no relations");
  for (std::size_t i = 0; i < cat.relations.size(); ++i) {
    const auto& r = cat.relations[i];
    if (r.id != static_cast<int>(i)) throw ConfigError("relation ids must be dense and ordered");
    if (r.cardinality < 1) throw ConfigError("relation " + r.name + " has cardinality < 1");
    if (r.attributes.empty()) throw ConfigError("relation " + r.name + " has no attributes");
    for (std::size_t a = 0; a < r.attributes.size(); ++a) {
      const auto& attr = r.attributes[a];
      if (attr.id != static_cast<int>(a)) throw ConfigError("attribute ids must be dense within " + r.name);
      if (attr.distinct_values < 1 || attr.distinct_values > r.cardinality)
        throw ConfigError("attribute " + attr.name + " distinct_values outside [1, cardinality]");
    }
  }
  for (std::size_t i = 0; i < cat.join_edges.size(); ++i) {
    const auto& e = cat.join_edges[i];
    if (e.id != static_cast<int>(i)) throw ConfigError("join edge ids must be dense and ordered");
    const auto n = static_cast<int>(cat.relations.size());
    if (e.left_relation < 0 || e.left_relation >= n || e.right_relation < 0 || e.right_relation >= n)
      throw ConfigError("join edge " + std::to_string(e.id) + " references a missing relation");
    cat.relation(e.left_relation).attribute(e.left_attribute);
    cat.relation(e.right_relation).attribute(e.right_attribute);
    if (!(e.selectivity > 0.0 && e.selectivity <= 1.0))
      throw ConfigError("join edge " + std::to_string(e.id) + " selectivity outside (0,1]");
  }
  std::vector<int> all(cat.relations.size());
  std::iota(all.begin(), all.end(), 0);
  if (all.size() > 1 && !is_connected(all, cat.join_edges)) throw ConfigError("catalog join graph is not connected");
}

void validate_query(const Query& q, const Catalog& cat) {
  if (q.relation_ids.empty()) throw ConfigError("query " + std::to_string(q.id) + " has no relations");
  for (std::size_t i = 0; i < q.relation_ids.size(); ++i) {
    cat.relation(q.relation_ids[i]);
    if (i > 0 && q.relation_ids[i - 1] >= q.relation_ids[i])
      throw ConfigError("query " + std::to_string(q.id) + " relation ids must be sorted and distinct");
  }
  for (const auto& e : q.join_predicates)
    if (!q.contains(e.left_relation) || !q.contains(e.right_relation))
      throw ConfigError("query " + std::to_string(q.id) + " join predicate outside its relation set");
  for (const auto& s : q.selection_predicates) {
    if (!q.contains(s.relation_id))
      throw ConfigError("query " + std::to_string(q.id) + " selection outside its relation set");
    cat.relation(s.relation_id).attribute(s.attribute_id);
    if (!(s.selectivity > 0.0 && s.selectivity <= 1.0))
      throw ConfigError("query " + std::to_string(q.id) + " selection selectivity outside (0,1]");
  }
  if (q.relation_ids.size() > 1 && !is_connected(q.relation_ids, q.join_predicates))
    throw ConfigError("query " + std::to_string(q.id) + " join predicates do not connect its relations");
}

// ---- persistence ----------------------------------------------------------

namespace {

json edge_to_json(const JoinEdge& e) {
  return {{"id", e.id},
          {"left_relation", e.left_relation},
          {"left_attribute", e.left_attribute},
          {"right_relation", e.right_relation},
          {"right_attribute", e.right_attribute},
          {"selectivity", e.selectivity}};
}

JoinEdge edge_from_json(const json& j) {
  JoinEdge e;
  e.id = j.at("id").get<int>();
  e.left_relation = j.at("left_relation").get<int>();
  e.left_attribute = j.at("left_attribute").get<int>();
  e.right_relation = j.at("right_relation").get<int>();
  e.right_attribute = j.at("right_attribute").get<int>();
  e.selectivity = j.at("selectivity").get<double>();
  return e;
}

json catalog_json(const Catalog& cat) {
  json rels = json::array();
  for (const auto& r : cat.relations) {
    json attrs = json::array();
    for (const auto& a : r.attributes) {
      json ja = {{"id", a.id}, {"name", a.name}, {"distinct_values", a.distinct_values}};
      if (a.indexed_by) ja["index"] = *a.indexed_by == IndexKind::BTree ? "btree" : "hash";
      attrs.push_back(std::move(ja));
    }
    rels.push_back({{"id", r.id}, {"name", r.name}, {"cardinality", r.cardinality}, {"attributes", attrs}});
  }
  json edges = json::array();
  for (const auto& e : cat.join_edges) edges.push_back(edge_to_json(e));
  return {{"format_version", kFormatVersion}, {"kind", "catalog"}, {"relations", rels}, {"join_edges", edges}};
}

json workload_json(const Workload& w) {
  json qs = json::array();
  for (const auto& q : w.queries) {
    json joins = json::array();
    for (const auto& e : q.join_predicates) joins.push_back(edge_to_json(e));
    json sels = json::array();
    for (const auto& s : q.selection_predicates)
      sels.push_back({{"relation", s.relation_id}, {"attribute", s.attribute_id}, {"selectivity", s.selectivity}});
    qs.push_back({{"id", q.id},
                  {"relations", q.relation_ids},
                  {"join_predicates", joins},
                  {"selection_predicates", sels},
                  {"aggregate", q.aggregate}});
  }
  return {{"format_version", kFormatVersion}, {"kind", "workload"}, {"generator_seed", w.generator_seed}, {"queries", qs}};
}

}  // namespace

std::string catalog_to_text(const Catalog& catalog) { return catalog_json(catalog).dump(1) + "\n"; }
std::string workload_to_text(const Workload& workload) { return workload_json(workload).dump(1) + "\n"; }

void save_catalog(const Catalog& catalog, const std::string& path) {
  detail::write_text_file(path, catalog_to_text(catalog));
}

void save_workload(const Workload& workload, const std::string& path) {
  detail::write_text_file(path, workload_to_text(workload));
}

Catalog load_catalog(const std::string& path) {
  const json doc = detail::read_versioned_json(path, "catalog");
  Catalog cat = detail::guarded_parse("catalog", [&] {
    Catalog c;
    for (const auto& jr : doc.at("relations")) {
      RelationInfo r;
      r.id = jr.at("id").get<int>();
      r.name = jr.at("name").get<std::string>();
      r.cardinality = jr.at("cardinality").get<std::int64_t>();
      for (const auto& ja : jr.at("attributes")) {
        AttributeInfo a;
        a.id = ja.at("id").get<int>();
        a.name = ja.at("name").get<std::string>();
        a.distinct_values = ja.at("distinct_values").get<std::int64_t>();
        if (ja.contains("index")) {
          const auto kind = ja["index"].get<std::string>();
          if (kind != "btree" && kind != "hash") throw json::other_error::create(501, "unknown index kind", &ja);
          a.indexed_by = kind == "btree" ? IndexKind::BTree : IndexKind::Hash;
        }
        r.attributes.push_back(std::move(a));
      }
      c.relations.push_back(std::move(r));
    }
    for (const auto& je : doc.at("join_edges")) c.join_edges.push_back(edge_from_json(je));
    return c;
  });
  try {
    validate_catalog(cat);
  } catch (const Error& e) {
    throw IoError(IoErrorKind::Malformed, std::string("catalog content violates invariants: ") + e.what());
  }
  return cat;
}

Workload load_workload(const std::string& path) {
  const json doc = detail::read_versioned_json(path, "workload");
  return detail::guarded_parse("workload", [&] {
    Workload w;
    w.generator_seed = doc.at("generator_seed").get<std::uint64_t>();
    std::set<int> ids;
    for (const auto& jq : doc.at("queries")) {
      Query q;
      q.id = jq.at("id").get<int>();
      q.relation_ids = jq.at("relations").get<std::vector<int>>();
      for (const auto& je : jq.at("join_predicates")) q.join_predicates.push_back(edge_from_json(je));
      for (const auto& js : jq.at("selection_predicates"))
        q.selection_predicates.push_back(
            {js.at("relation").get<int>(), js.at("attribute").get<int>(), js.at("selectivity").get<double>()});
      q.aggregate = jq.at("aggregate").get<bool>();
      if (!ids.insert(q.id).second) throw IoError(IoErrorKind::Malformed, "duplicate query id in workload");
      w.queries.push_back(std::move(q));
    }
    return w;
  });
}

}  // namespace qolab
