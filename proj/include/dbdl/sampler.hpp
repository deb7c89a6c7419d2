#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dbdl/hypergraph.hpp"

namespace dbdl {

enum class TaskKind { Classification, Regression };

struct SampleSpec {
  size_t target_relation = 0;
  std::string target_attr;
  TaskKind task = TaskKind::Classification;
  std::optional<size_t> depth_limit;
  std::vector<size_t> fanout;  // per-depth cap per edge type; empty = unbounded,
                               // last entry repeats for deeper levels
};

struct SplitSpec {
  double train_fraction = 0.7;
  uint64_t seed = 0;
};

/// Sorted node rows per relation.
struct NodeSets {
  std::vector<std::vector<uint32_t>> per_relation;

  size_t total() const;
  bool contains(size_t relation, uint32_t row) const;
};

/// Nodes reachable from the seeds within depth_limit hops over forward and
/// reverse edges, each node visited once.
NodeSets bfs_expand(const HeteroGraph& g, const std::vector<NodeRef>& seeds,
                    std::optional<size_t> depth_limit);

/// BFS-like expansion where per visited node, per edge type, per depth at
/// most fanout[depth] neighbors are drawn without replacement. A cap at
/// least the max degree reduces to bfs_expand.
NodeSets hetero_sample_nodes(const HeteroGraph& g, const std::vector<NodeRef>& seeds,
                             const std::vector<size_t>& fanout,
                             std::optional<size_t> depth_limit, uint64_t rng_seed);

/// A training sample: seed rows plus the sampled subgraph with local node
/// tables and remapped induced adjacency. Labels ride separately from the
/// features.
struct MiniBatch {
  size_t target_relation = 0;
  std::vector<uint32_t> seeds;                     // local rows in target relation
  std::vector<std::vector<Row>> rows;              // local node tables
  std::vector<std::vector<uint32_t>> global_rows;  // local -> global row ids
  std::vector<Adjacency> adjacency;                // induced, remapped to local ids
  std::vector<Value> labels;                       // per seed, filled by mask_targets
  bool label_mask_applied = false;

  size_t num_relations() const { return rows.size(); }
};

MiniBatch extract_subgraph(const HeteroGraph& g, const NodeSets& nodes,
                           const std::vector<NodeRef>& seeds, size_t target_relation);

/// Replaces the target attribute of every target-relation row in the
/// subgraph with the masked sentinel (null, which embeds through the masked
/// path) and preserves the original seed labels. Throws if already applied.
MiniBatch mask_targets(MiniBatch batch, const SampleSpec& spec, const SchemaDef& schema);

/// Disjoint exhaustive split with |train| = round(train_fraction * n),
/// deterministic under the split seed. Needs at least 2 seeds.
std::pair<std::vector<NodeRef>, std::vector<NodeRef>> split_train_val(
    const std::vector<NodeRef>& seeds, const SplitSpec& spec);

struct SqlStatement {
  size_t relation;  // relation whose rows the statement retrieves
  size_t depth;     // join-path length from the target relation
  std::string text;
};

/// One SELECT per FK join path of length <= depth from the target relation,
/// in both key directions; executing all statements per relation retrieves
/// exactly the rows bfs_expand visits. seed_keys lists target-relation PK
/// tuples; when empty every target row is a seed.
std::vector<SqlStatement> emit_recursive_sql_statements(
    const SchemaDef& schema, const SampleSpec& spec, size_t depth,
    const std::vector<std::vector<Value>>& seed_keys);

std::string emit_recursive_sql(const SchemaDef& schema, const SampleSpec& spec,
                               size_t depth,
                               const std::vector<std::vector<Value>>& seed_keys);

/// Batch size rule: nearest power of two to scale * sqrt(target_rows),
/// clamped to [16, 16384].
size_t batch_size_for(double scale, size_t target_rows);

}  // namespace dbdl
