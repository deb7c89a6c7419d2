#pragma once

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <span>
#include <vector>

#include "dbdl/relmodel.hpp"

namespace dbdl {

struct NodeRef {
  uint32_t relation = 0;
  uint32_t row = 0;

  auto operator<=>(const NodeRef&) const = default;
};

enum class EdgeDir : uint8_t { Forward, Reverse };

/// Every foreign key yields two edge types: forward (referencing row ->
/// referenced row) and its mirror. Edge type index = 2*fk_id + (dir==Reverse).
struct EdgeType {
  uint32_t fk_id = 0;
  EdgeDir dir = EdgeDir::Forward;

  uint32_t index() const { return fk_id * 2 + (dir == EdgeDir::Reverse ? 1 : 0); }
  static EdgeType from_index(uint32_t i) {
    return {i / 2, i % 2 ? EdgeDir::Reverse : EdgeDir::Forward};
  }
};

/// Pairs sorted by (src,dst) with a CSR offset index per source row.
struct Adjacency {
  std::vector<std::pair<uint32_t, uint32_t>> pairs;
  std::vector<uint32_t> offsets;  // size = src row count + 1

  std::span<const std::pair<uint32_t, uint32_t>> edges_of(uint32_t src_row) const {
    return {pairs.data() + offsets[src_row], pairs.data() + offsets[src_row + 1]};
  }
  size_t degree(uint32_t src_row) const { return offsets[src_row + 1] - offsets[src_row]; }

  void build_offsets(size_t src_rows);
};

enum class FkEdgePolicy { Strict, Drop };

/// The learning representation of a database: tuples as typed nodes carrying
/// their attribute values, FK-matched tuple pairs as bidirectional typed
/// edges. Immutable after build.
struct HeteroGraph {
  std::shared_ptr<const Database> db;
  std::vector<ResolvedFk> fks;
  std::vector<Adjacency> adjacency;  // one per edge type, indexed by EdgeType::index()

  const SchemaDef& schema() const { return db->schema; }
  size_t num_relations() const { return db->schema.relations.size(); }
  size_t num_edge_types() const { return adjacency.size(); }
  size_t relation_rows(size_t r) const { return db->tables[r].rows.size(); }

  /// Source/destination relation of an edge type.
  size_t src_relation(uint32_t edge_type) const;
  size_t dst_relation(uint32_t edge_type) const;
};

HeteroGraph build_hypergraph(std::shared_ptr<const Database> db,
                             FkEdgePolicy policy = FkEdgePolicy::Strict,
                             std::vector<std::string>* warnings = nullptr);

struct GraphStats {
  size_t num_relations = 0;
  size_t num_edge_types = 0;  // forward fk count
  size_t num_target_feature_cols = 0;
  double avg_target_edges = 0.0;  // mean forward+reverse degree of target rows
  size_t total_rows = 0;
  size_t total_edges = 0;  // forward count
  bool has_text_col = false;
  bool has_time_col = false;
};

GraphStats graph_stats(const HeteroGraph& g, size_t target_relation);

/// Line-oriented debug dump: "NODE rel row" / "EDGE fk dir src_rel src_row
/// dst_rel dst_row".
void export_graph_text(const HeteroGraph& g, std::ostream& out);

}  // namespace dbdl
