#include "dbdl/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

namespace dbdl {

size_t NodeSets::total() const {
  size_t n = 0;
  for (const auto& v : per_relation) n += v.size();
  return n;
}

bool NodeSets::contains(size_t relation, uint32_t row) const {
  const auto& v = per_relation[relation];
  return std::binary_search(v.begin(), v.end(), row);
}

namespace {

struct Visited {
  std::vector<std::vector<bool>> marks;

  explicit Visited(const HeteroGraph& g) {
    marks.resize(g.num_relations());
    for (size_t r = 0; r < g.num_relations(); ++r)
      marks[r].assign(g.relation_rows(r), false);
  }
  bool mark(size_t rel, uint32_t row) {
    if (marks[rel][row]) return false;
    marks[rel][row] = true;
    return true;
  }
};

NodeSets collect(const Visited& v) {
  NodeSets out;
  out.per_relation.resize(v.marks.size());
  for (size_t r = 0; r < v.marks.size(); ++r)
    for (uint32_t i = 0; i < v.marks[r].size(); ++i)
      if (v.marks[r][i]) out.per_relation[r].push_back(i);
  return out;
}

}  // namespace

NodeSets bfs_expand(const HeteroGraph& g, const std::vector<NodeRef>& seeds,
                    std::optional<size_t> depth_limit) {
  Visited visited(g);
  std::vector<NodeRef> frontier;
  for (const auto& s : seeds)
    if (visited.mark(s.relation, s.row)) frontier.push_back(s);
  size_t depth = 0;
  while (!frontier.empty() && (!depth_limit || depth < *depth_limit)) {
    std::vector<NodeRef> next;
    for (const auto& node : frontier) {
      for (uint32_t et = 0; et < g.num_edge_types(); ++et) {
        if (g.src_relation(et) != node.relation) continue;
        uint32_t dst_rel = static_cast<uint32_t>(g.dst_relation(et));
        for (auto [s, d] : g.adjacency[et].edges_of(node.row))
          if (visited.mark(dst_rel, d)) next.push_back({dst_rel, d});
      }
    }
    frontier = std::move(next);
    ++depth;
  }
  return collect(visited);
}

NodeSets hetero_sample_nodes(const HeteroGraph& g, const std::vector<NodeRef>& seeds,
                             const std::vector<size_t>& fanout,
                             std::optional<size_t> depth_limit, uint64_t rng_seed) {
  for (size_t cap : fanout)
    if (cap < 1) throw std::invalid_argument("hetero_sample: fanout caps must be >= 1");
  std::mt19937_64 rng(rng_seed);
  Visited visited(g);
  std::vector<NodeRef> frontier;
  for (const auto& s : seeds)
    if (visited.mark(s.relation, s.row)) frontier.push_back(s);
  std::sort(frontier.begin(), frontier.end());
  size_t depth = 0;
  while (!frontier.empty() && (!depth_limit || depth < *depth_limit)) {
    size_t cap = fanout.empty()
                     ? SIZE_MAX
                     : fanout[std::min(depth, fanout.size() - 1)];
    std::vector<NodeRef> next;
    for (const auto& node : frontier) {
      for (uint32_t et = 0; et < g.num_edge_types(); ++et) {
        if (g.src_relation(et) != node.relation) continue;
        uint32_t dst_rel = static_cast<uint32_t>(g.dst_relation(et));
        auto edges = g.adjacency[et].edges_of(node.row);
        std::vector<uint32_t> picks;
        if (edges.size() <= cap) {
          for (auto [s, d] : edges) picks.push_back(d);
        } else {
          // partial Fisher-Yates over the neighbor list
          std::vector<uint32_t> pool(edges.size());
          for (size_t i = 0; i < edges.size(); ++i) pool[i] = edges[i].second;
          for (size_t i = 0; i < cap; ++i) {
            size_t j = i + static_cast<size_t>(rng() % (pool.size() - i));
            std::swap(pool[i], pool[j]);
            picks.push_back(pool[i]);
          }
        }
        for (uint32_t d : picks)
          if (visited.mark(dst_rel, d)) next.push_back({dst_rel, d});
      }
    }
    std::sort(next.begin(), next.end());
    frontier = std::move(next);
    ++depth;
  }
  return collect(visited);
}

MiniBatch extract_subgraph(const HeteroGraph& g, const NodeSets& nodes,
                           const std::vector<NodeRef>& seeds, size_t target_relation) {
  MiniBatch batch;
  batch.target_relation = target_relation;
  batch.rows.resize(g.num_relations());
  batch.global_rows.resize(g.num_relations());
  for (size_t r = 0; r < g.num_relations(); ++r) {
    batch.global_rows[r] = nodes.per_relation[r];
    batch.rows[r].reserve(nodes.per_relation[r].size());
    for (uint32_t row : nodes.per_relation[r])
      batch.rows[r].push_back(g.db->tables[r].rows[row]);
  }
  auto local_of = [&](size_t rel, uint32_t global) {
    const auto& v = batch.global_rows[rel];
    auto it = std::lower_bound(v.begin(), v.end(), global);
    return static_cast<uint32_t>(it - v.begin());
  };
  batch.adjacency.resize(g.num_edge_types());
  for (uint32_t et = 0; et < g.num_edge_types(); ++et) {
    size_t src_rel = g.src_relation(et), dst_rel = g.dst_relation(et);
    auto& adj = batch.adjacency[et];
    for (uint32_t src : nodes.per_relation[src_rel]) {
      uint32_t local_src = local_of(src_rel, src);
      for (auto [s, d] : g.adjacency[et].edges_of(src))
        if (nodes.contains(dst_rel, d)) adj.pairs.emplace_back(local_src, local_of(dst_rel, d));
    }
    adj.build_offsets(nodes.per_relation[src_rel].size());
  }
  batch.seeds.reserve(seeds.size());
  for (const auto& s : seeds) {
    if (s.relation != target_relation)
      throw std::invalid_argument("seed outside the target relation");
    if (!nodes.contains(s.relation, s.row))
      throw std::invalid_argument("seed missing from the sampled node set");
    batch.seeds.push_back(local_of(s.relation, s.row));
  }
  return batch;
}

MiniBatch mask_targets(MiniBatch batch, const SampleSpec& spec, const SchemaDef& schema) {
  if (batch.label_mask_applied)
    throw std::invalid_argument("mask_targets: batch is already masked");
  const auto& rel = schema.relations.at(spec.target_relation);
  size_t attr = rel.attr_index(spec.target_attr);
  batch.labels.clear();
  for (uint32_t seed : batch.seeds)
    batch.labels.push_back(batch.rows[spec.target_relation][seed][attr]);
  for (auto& row : batch.rows[spec.target_relation]) row[attr] = Value::null();
  batch.label_mask_applied = true;
  return batch;
}

std::pair<std::vector<NodeRef>, std::vector<NodeRef>> split_train_val(
    const std::vector<NodeRef>& seeds, const SplitSpec& spec) {
  if (seeds.size() < 2)
    throw std::invalid_argument("split_train_val: need at least 2 seeds");
  if (!(spec.train_fraction > 0.0 && spec.train_fraction < 1.0))
    throw std::invalid_argument("split_train_val: train_fraction must be in (0,1)");
  std::vector<NodeRef> shuffled = seeds;
  std::mt19937_64 rng(spec.seed);
  for (size_t i = shuffled.size() - 1; i > 0; --i) {
    size_t j = static_cast<size_t>(rng() % (i + 1));
    std::swap(shuffled[i], shuffled[j]);
  }
  auto train_count = static_cast<size_t>(
      std::llround(spec.train_fraction * static_cast<double>(shuffled.size())));
  train_count = std::clamp<size_t>(train_count, 1, shuffled.size() - 1);
  std::vector<NodeRef> train(shuffled.begin(), shuffled.begin() + train_count);
  std::vector<NodeRef> val(shuffled.begin() + train_count, shuffled.end());
  return {std::move(train), std::move(val)};
}

namespace {

std::string quote_ident(const std::string& name) {
  std::string out = "\"";
  for (char c : name) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::string sql_literal(const Value& v) {
  if (v.is_null()) return "NULL";
  if (v.matches(RawType::Integer)) return std::to_string(v.as_integer());
  if (v.matches(RawType::Boolean)) return v.as_boolean() ? "1" : "0";
  if (v.matches(RawType::Real)) return v.to_string();
  std::string s = v.to_string();  // text or timestamp
  std::string out = "'";
  for (char c : s) {
    if (c == '\'') out += '\'';
    out += c;
  }
  return out + "'";
}

}  // namespace

std::vector<SqlStatement> emit_recursive_sql_statements(
    const SchemaDef& schema, const SampleSpec& spec, size_t depth,
    const std::vector<std::vector<Value>>& seed_keys) {
  auto fks = schema.resolved_fks();
  const auto& target = schema.relations.at(spec.target_relation);
  std::vector<size_t> target_pk;
  for (const auto& a : target.pk_attrs) target_pk.push_back(target.attr_index(a));

  std::string seed_where;
  if (!seed_keys.empty()) {
    std::string cols;
    if (target_pk.size() == 1) {
      cols = "\"h0\"." + quote_ident(target.attributes[target_pk[0]].name);
    } else {
      cols = "(";
      for (size_t i = 0; i < target_pk.size(); ++i) {
        if (i) cols += ", ";
        cols += "\"h0\"." + quote_ident(target.attributes[target_pk[i]].name);
      }
      cols += ")";
    }
    seed_where = " WHERE " + cols + " IN (";
    for (size_t k = 0; k < seed_keys.size(); ++k) {
      if (k) seed_where += ", ";
      if (target_pk.size() == 1) {
        seed_where += sql_literal(seed_keys[k][0]);
      } else {
        seed_where += "(";
        for (size_t i = 0; i < seed_keys[k].size(); ++i) {
          if (i) seed_where += ", ";
          seed_where += sql_literal(seed_keys[k][i]);
        }
        seed_where += ")";
      }
    }
    seed_where += ")";
  }

  std::vector<SqlStatement> out;
  // paths of edge types, breadth-first over path length
  std::vector<std::vector<uint32_t>> level = {{}};
  for (size_t d = 0; d <= depth; ++d) {
    for (const auto& path : level) {
      size_t end_rel = spec.target_relation;
      std::string from = "FROM " + quote_ident(target.name) + " \"h0\"";
      for (size_t h = 0; h < path.size(); ++h) {
        uint32_t et = path[h];
        const auto& fk = fks[et / 2];
        bool forward = et % 2 == 0;
        size_t next_rel = forward ? fk.target_relation : fk.source_relation;
        const auto& nxt = schema.relations[next_rel];
        std::string prev_alias = "\"h" + std::to_string(h) + "\"";
        std::string next_alias = "\"h" + std::to_string(h + 1) + "\"";
        std::string cond;
        for (size_t i = 0; i < fk.source_attrs.size(); ++i) {
          if (i) cond += " AND ";
          std::string fk_col =
              quote_ident(schema.relations[fk.source_relation].attributes[fk.source_attrs[i]].name);
          std::string pk_col =
              quote_ident(schema.relations[fk.target_relation].attributes[fk.target_attrs[i]].name);
          if (forward)
            cond += prev_alias + "." + fk_col + " = " + next_alias + "." + pk_col;
          else
            cond += next_alias + "." + fk_col + " = " + prev_alias + "." + pk_col;
        }
        from += " JOIN " + quote_ident(nxt.name) + " \"h" + std::to_string(h + 1) + "\" ON " +
                cond;
        end_rel = next_rel;
      }
      std::string select = "SELECT DISTINCT \"h" + std::to_string(path.size()) + "\".* " +
                           from + seed_where;
      out.push_back({end_rel, path.size(), std::move(select)});
    }
    if (d == depth) break;
    std::vector<std::vector<uint32_t>> next_level;
    for (const auto& path : level) {
      size_t end_rel = spec.target_relation;
      for (uint32_t et : path) {
        const auto& fk = fks[et / 2];
        end_rel = et % 2 == 0 ? fk.target_relation : fk.source_relation;
      }
      for (uint32_t et = 0; et < fks.size() * 2; ++et) {
        const auto& fk = fks[et / 2];
        size_t src = et % 2 == 0 ? fk.source_relation : fk.target_relation;
        if (src != end_rel) continue;
        auto extended = path;
        extended.push_back(et);
        next_level.push_back(std::move(extended));
      }
    }
    level = std::move(next_level);
  }
  return out;
}

std::string emit_recursive_sql(const SchemaDef& schema, const SampleSpec& spec,
                               size_t depth,
                               const std::vector<std::vector<Value>>& seed_keys) {
  std::string out;
  for (const auto& stmt : emit_recursive_sql_statements(schema, spec, depth, seed_keys)) {
    out += stmt.text;
    out += ";\n";
  }
  return out;
}

size_t batch_size_for(double scale, size_t target_rows) {
  if (scale < 1.0) throw std::invalid_argument("batch scale must be >= 1");
  double x = scale * std::sqrt(static_cast<double>(std::max<size_t>(1, target_rows)));
  long long p = std::llround(std::log2(x));
  double b = std::pow(2.0, static_cast<double>(p));
  return static_cast<size_t>(std::clamp(b, 16.0, 16384.0));
}

}  // namespace dbdl
