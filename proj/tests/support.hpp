#pragma once

#include <filesystem>
#include <string>

#include "qolab/catalog.hpp"

namespace qolab::testing {

inline AttributeInfo attr(int id, std::int64_t distinct, bool indexed = false) {
  AttributeInfo a;
  a.id = id;
  a.name = "a" + std::to_string(id);
  a.distinct_values = distinct;
  if (indexed) a.indexed_by = IndexKind::BTree;
  return a;
}

inline RelationInfo relation(int id, std::int64_t rows, std::vector<AttributeInfo> attrs) {
  RelationInfo r;
  r.id = id;
  r.name = std::string(1, static_cast<char>('A' + id));
  r.cardinality = rows;
  r.attributes = std::move(attrs);
  return r;
}

inline JoinEdge edge(int id, int l, int r, double sel) { return JoinEdge{id, l, 0, r, 0, sel}; }

// A(1000) - B(500) - C(100), A - D(2000). A.a0 carries a B-tree index.
inline Catalog small_catalog() {
  Catalog c;
  c.relations = {relation(0, 1000, {attr(0, 1000, true), attr(1, 10)}), relation(1, 500, {attr(0, 500)}),
                 relation(2, 100, {attr(0, 100)}), relation(3, 2000, {attr(0, 2000)})};
  c.join_edges = {edge(0, 0, 1, 0.01), edge(1, 0, 3, 0.0005), edge(2, 1, 2, 0.01)};
  return c;
}

inline Query query_of(const Catalog& c, int id, std::vector<int> rels, bool aggregate = false) {
  Query q;
  q.id = id;
  q.relation_ids = std::move(rels);
  for (const auto& e : c.join_edges)
    if (q.contains(e.left_relation) && q.contains(e.right_relation)) q.join_predicates.push_back(e);
  q.aggregate = aggregate;
  return q;
}

// Fresh scratch directory under the build tree, removed on destruction.
struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& name) : path(std::filesystem::temp_directory_path() / ("qolab-test-" + name)) {
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

}  // namespace qolab::testing
