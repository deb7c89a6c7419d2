#include "dbdl/hypergraph.hpp"

#include <algorithm>
#include <map>
#include <ostream>
#include <set>
#include <stdexcept>

namespace dbdl {

void Adjacency::build_offsets(size_t src_rows) {
  std::sort(pairs.begin(), pairs.end());
  offsets.assign(src_rows + 1, 0);
  for (const auto& [s, d] : pairs) offsets[s + 1]++;
  for (size_t i = 1; i <= src_rows; ++i) offsets[i] += offsets[i - 1];
}

size_t HeteroGraph::src_relation(uint32_t edge_type) const {
  const auto& fk = fks[edge_type / 2];
  return edge_type % 2 == 0 ? fk.source_relation : fk.target_relation;
}

size_t HeteroGraph::dst_relation(uint32_t edge_type) const {
  const auto& fk = fks[edge_type / 2];
  return edge_type % 2 == 0 ? fk.target_relation : fk.source_relation;
}

HeteroGraph build_hypergraph(std::shared_ptr<const Database> db, FkEdgePolicy policy,
                             std::vector<std::string>* warnings) {
  HeteroGraph g;
  g.db = std::move(db);
  g.fks = g.db->schema.resolved_fks();
  g.adjacency.resize(g.fks.size() * 2);

  for (const auto& fk : g.fks) {
    const auto& src_table = g.db->tables[fk.source_relation];
    const auto& dst_table = g.db->tables[fk.target_relation];

    std::map<std::vector<Value>, std::vector<uint32_t>> pk_index;
    for (uint32_t i = 0; i < dst_table.rows.size(); ++i) {
      std::vector<Value> key;
      for (size_t a : fk.target_attrs) key.push_back(dst_table.rows[i][a]);
      pk_index[std::move(key)].push_back(i);
    }

    auto& fwd = g.adjacency[fk.fk_id * 2];
    auto& rev = g.adjacency[fk.fk_id * 2 + 1];
    for (uint32_t i = 0; i < src_table.rows.size(); ++i) {
      const auto& row = src_table.rows[i];
      bool any_null = false;
      std::vector<Value> key;
      for (size_t a : fk.source_attrs) {
        if (row[a].is_null()) any_null = true;
        key.push_back(row[a]);
      }
      if (any_null) continue;
      auto it = pk_index.find(key);
      if (it == pk_index.end()) {
        std::string msg = "fk " + std::to_string(fk.fk_id) + " row " + std::to_string(i) +
                          " of '" + g.db->schema.relations[fk.source_relation].name +
                          "' has no match in '" +
                          g.db->schema.relations[fk.target_relation].name + "'";
        if (policy == FkEdgePolicy::Strict)
          throw std::runtime_error("integrity: " + msg);
        if (warnings) warnings->push_back("dropped edge: " + msg);
        continue;
      }
      for (uint32_t j : it->second) {
        fwd.pairs.emplace_back(i, j);
        rev.pairs.emplace_back(j, i);
      }
    }
    fwd.build_offsets(src_table.rows.size());
    rev.build_offsets(dst_table.rows.size());
  }
  return g;
}

GraphStats graph_stats(const HeteroGraph& g, size_t target_relation) {
  if (target_relation >= g.num_relations())
    throw std::invalid_argument("graph_stats: unknown target relation " +
                                std::to_string(target_relation));
  GraphStats st;
  st.num_relations = g.num_relations();
  st.num_edge_types = g.fks.size();
  for (size_t r = 0; r < g.num_relations(); ++r)
    st.total_rows += g.relation_rows(r);
  for (size_t f = 0; f < g.fks.size(); ++f)
    st.total_edges += g.adjacency[f * 2].pairs.size();

  const auto& target = g.schema().relations[target_relation];
  std::set<std::string> key_attrs(target.pk_attrs.begin(), target.pk_attrs.end());
  for (const auto& fk : target.fks)
    key_attrs.insert(fk.source_attrs.begin(), fk.source_attrs.end());
  for (const auto& attr : target.attributes)
    if (!key_attrs.count(attr.name)) st.num_target_feature_cols++;

  size_t target_rows = g.relation_rows(target_relation);
  if (target_rows > 0) {
    size_t deg = 0;
    for (uint32_t et = 0; et < g.num_edge_types(); ++et) {
      if (g.src_relation(et) != target_relation) continue;
      deg += g.adjacency[et].pairs.size();
    }
    st.avg_target_edges = static_cast<double>(deg) / static_cast<double>(target_rows);
  }

  for (const auto& rel : g.schema().relations) {
    for (const auto& attr : rel.attributes) {
      if (attr.semantic.kind == SemanticKind::Text) st.has_text_col = true;
      if (attr.semantic.kind == SemanticKind::Datetime) st.has_time_col = true;
    }
  }
  return st;
}

void export_graph_text(const HeteroGraph& g, std::ostream& out) {
  for (size_t r = 0; r < g.num_relations(); ++r)
    for (size_t i = 0; i < g.relation_rows(r); ++i)
      out << "NODE " << r << ' ' << i << '\n';
  for (uint32_t et = 0; et < g.num_edge_types(); ++et) {
    const char* dir = et % 2 == 0 ? "fwd" : "rev";
    size_t src_rel = g.src_relation(et), dst_rel = g.dst_relation(et);
    for (const auto& [s, d] : g.adjacency[et].pairs)
      out << "EDGE " << et / 2 << ' ' << dir << ' ' << src_rel << ' ' << s << ' '
          << dst_rel << ' ' << d << '\n';
  }
}

}  // namespace dbdl
