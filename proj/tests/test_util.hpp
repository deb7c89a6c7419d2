#pragma once

#include <memory>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "dbdl/hypergraph.hpp"
#include "dbdl/relmodel.hpp"
#include "dbdl/sampler.hpp"

namespace dbdl::testutil {

inline RelationDef relation(std::string name, std::vector<AttributeDef> attrs,
                            std::vector<std::string> pk,
                            std::vector<ForeignKeyDef> fks = {}) {
  RelationDef r;
  r.name = std::move(name);
  r.attributes = std::move(attrs);
  r.pk_attrs = std::move(pk);
  r.fks = std::move(fks);
  return r;
}

inline AttributeDef attr(std::string name, RawType raw) {
  AttributeDef a;
  a.name = std::move(name);
  a.raw = raw;
  return a;
}

inline ForeignKeyDef fk(std::string source_rel, std::vector<std::string> attrs,
                        std::string target) {
  return ForeignKeyDef{std::move(source_rel), std::move(attrs), std::move(target)};
}

/// Two relations: t(id, fk_s -> s, x) and s(id, y). Edges t->s per fk cell.
inline std::shared_ptr<Database> two_relation_db(
    const std::vector<std::pair<std::int64_t, std::int64_t>>& t_rows,
    const std::vector<std::int64_t>& s_ids) {
  auto db = std::make_shared<Database>();
  db->schema.relations = {
      relation("t", {attr("id", RawType::Integer), attr("fk_s", RawType::Integer),
                     attr("x", RawType::Real)},
               {"id"}, {fk("t", {"fk_s"}, "s")}),
      relation("s", {attr("id", RawType::Integer), attr("y", RawType::Real)}, {"id"}),
  };
  db->tables.resize(2);
  for (auto [id, ref] : t_rows)
    db->tables[0].rows.push_back({Value::integer(id),
                                  ref < 0 ? Value::null() : Value::integer(ref),
                                  Value::real(static_cast<double>(id) * 0.5)});
  for (auto id : s_ids)
    db->tables[1].rows.push_back({Value::integer(id), Value::real(static_cast<double>(id))});
  return db;
}

/// Random multi-relation database with valid references, for property tests.
/// Relations chain r0 <- r1 <- r2 ... with some extra fks, plus occasional
/// self-reference.
inline std::shared_ptr<Database> random_db(std::mt19937_64& rng, size_t num_relations = 3,
                                           size_t max_rows = 12, bool self_ref = false) {
  auto db = std::make_shared<Database>();
  auto pick = [&rng](size_t n) { return static_cast<size_t>(rng() % n); };
  for (size_t r = 0; r < num_relations; ++r) {
    std::vector<AttributeDef> attrs = {attr("id", RawType::Integer),
                                       attr("val", RawType::Real)};
    std::vector<ForeignKeyDef> fks_list;
    std::string name = "r" + std::to_string(r);
    if (r > 0) {
      size_t target = pick(r);
      attrs.push_back(attr("ref", RawType::Integer));
      fks_list.push_back(fk(name, {"ref"}, "r" + std::to_string(target)));
    }
    if (self_ref && r == num_relations - 1) {
      attrs.push_back(attr("parent", RawType::Integer));
      fks_list.push_back(fk(name, {"parent"}, name));
    }
    db->schema.relations.push_back(relation(name, attrs, {"id"}, fks_list));
  }
  db->tables.resize(num_relations);
  std::vector<size_t> rows(num_relations);
  for (size_t r = 0; r < num_relations; ++r) rows[r] = 2 + pick(max_rows - 1);
  for (size_t r = 0; r < num_relations; ++r) {
    const auto& rel = db->schema.relations[r];
    for (size_t i = 0; i < rows[r]; ++i) {
      Row row;
      row.push_back(Value::integer(static_cast<std::int64_t>(i)));
      row.push_back(Value::real(static_cast<double>(rng() % 100) / 10.0));
      for (const auto& f : rel.fks) {
        size_t target = db->schema.relation_index(f.target_relation);
        if (rng() % 5 == 0)
          row.push_back(Value::null());
        else
          row.push_back(Value::integer(static_cast<std::int64_t>(pick(rows[target]))));
      }
      db->tables[r].rows.push_back(std::move(row));
    }
  }
  return db;
}

/// Brute-force join-closure oracle: repeatedly add any node joined to the
/// current set until a fixed point or the depth budget runs out. Independent
/// of the bfs_expand implementation.
inline NodeSets closure_oracle(const HeteroGraph& g, const std::vector<NodeRef>& seeds,
                               std::optional<size_t> depth_limit) {
  std::set<std::pair<uint32_t, uint32_t>> have;
  for (const auto& s : seeds) have.insert({s.relation, s.row});
  size_t depth = 0;
  while (!depth_limit || depth < *depth_limit) {
    std::set<std::pair<uint32_t, uint32_t>> next = have;
    for (uint32_t et = 0; et < g.num_edge_types(); ++et) {
      uint32_t src_rel = static_cast<uint32_t>(g.src_relation(et));
      uint32_t dst_rel = static_cast<uint32_t>(g.dst_relation(et));
      for (auto [s, d] : g.adjacency[et].pairs)
        if (have.count({src_rel, s})) next.insert({dst_rel, d});
    }
    if (next == have) break;
    have = std::move(next);
    ++depth;
  }
  NodeSets out;
  out.per_relation.resize(g.num_relations());
  for (auto [r, i] : have) out.per_relation[r].push_back(i);
  return out;
}

}  // namespace dbdl::testutil
