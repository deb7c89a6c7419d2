#include "dbdl/relmodel.hpp"

#include <algorithm>
#include <charconv>
#include <map>
#include <set>
#include <stdexcept>
#include <unordered_set>

namespace dbdl {

std::string_view semantic_kind_name(SemanticKind k) {
  switch (k) {
    case SemanticKind::Categorical: return "categorical";
    case SemanticKind::Numeric: return "numeric";
    case SemanticKind::Text: return "text";
    case SemanticKind::Datetime: return "datetime";
    case SemanticKind::Key: return "key";
    case SemanticKind::Ignored: return "ignored";
  }
  return "?";
}

std::optional<SemanticKind> semantic_kind_from_name(std::string_view name) {
  if (name == "categorical") return SemanticKind::Categorical;
  if (name == "numeric") return SemanticKind::Numeric;
  if (name == "text") return SemanticKind::Text;
  if (name == "datetime") return SemanticKind::Datetime;
  if (name == "key") return SemanticKind::Key;
  if (name == "ignored") return SemanticKind::Ignored;
  return std::nullopt;
}

std::optional<size_t> RelationDef::find_attr(std::string_view name) const {
  for (size_t i = 0; i < attributes.size(); ++i)
    if (attributes[i].name == name) return i;
  return std::nullopt;
}

size_t RelationDef::attr_index(std::string_view name) const {
  if (auto i = find_attr(name)) return *i;
  throw std::invalid_argument("relation '" + this->name + "' has no attribute '" +
                              std::string(name) + "'");
}

std::optional<size_t> SchemaDef::find_relation(std::string_view name) const {
  for (size_t i = 0; i < relations.size(); ++i)
    if (relations[i].name == name) return i;
  return std::nullopt;
}

size_t SchemaDef::relation_index(std::string_view name) const {
  if (auto i = find_relation(name)) return *i;
  throw std::invalid_argument("schema has no relation '" + std::string(name) + "'");
}

void SchemaDef::validate() const {
  std::unordered_set<std::string> names;
  for (const auto& rel : relations) {
    if (!names.insert(rel.name).second)
      throw std::invalid_argument("duplicate relation name '" + rel.name + "'");
    std::unordered_set<std::string> attr_names;
    for (const auto& a : rel.attributes)
      if (!attr_names.insert(a.name).second)
        throw std::invalid_argument("duplicate attribute '" + a.name + "' in relation '" +
                                    rel.name + "'");
    for (const auto& pk : rel.pk_attrs)
      if (!rel.find_attr(pk))
        throw std::invalid_argument("pk attribute '" + pk + "' missing in relation '" +
                                    rel.name + "'");
  }
  for (const auto& rel : relations) {
    for (const auto& fk : rel.fks) {
      if (fk.source_relation != rel.name)
        throw std::invalid_argument("fk declared in '" + rel.name +
                                    "' names source '" + fk.source_relation + "'");
      auto tgt = find_relation(fk.target_relation);
      if (!tgt)
        throw std::invalid_argument("fk in '" + rel.name + "' targets missing relation '" +
                                    fk.target_relation + "'");
      const auto& target = relations[*tgt];
      if (target.pk_attrs.empty())
        throw std::invalid_argument("fk in '" + rel.name + "' targets relation '" +
                                    target.name + "' without a primary key");
      if (fk.source_attrs.size() != target.pk_attrs.size())
        throw std::invalid_argument("fk in '" + rel.name + "' arity mismatch against '" +
                                    target.name + "' primary key");
      for (size_t i = 0; i < fk.source_attrs.size(); ++i) {
        const auto& src_attr = rel.attributes[rel.attr_index(fk.source_attrs[i])];
        const auto& dst_attr = target.attributes[target.attr_index(target.pk_attrs[i])];
        if (src_attr.raw != dst_attr.raw)
          throw std::invalid_argument("fk in '" + rel.name + "': attribute '" +
                                      src_attr.name + "' raw type differs from '" +
                                      target.name + "." + dst_attr.name + "'");
      }
    }
  }
}

std::vector<ResolvedFk> SchemaDef::resolved_fks() const {
  std::vector<ResolvedFk> out;
  for (size_t r = 0; r < relations.size(); ++r) {
    const auto& rel = relations[r];
    for (const auto& fk : rel.fks) {
      ResolvedFk res;
      res.fk_id = out.size();
      res.source_relation = r;
      for (const auto& a : fk.source_attrs) res.source_attrs.push_back(rel.attr_index(a));
      res.target_relation = relation_index(fk.target_relation);
      const auto& target = relations[res.target_relation];
      for (const auto& a : target.pk_attrs) res.target_attrs.push_back(target.attr_index(a));
      out.push_back(std::move(res));
    }
  }
  return out;
}

void Database::validate_cells() const {
  if (tables.size() != schema.relations.size())
    throw std::invalid_argument("database has " + std::to_string(tables.size()) +
                                " tables for " + std::to_string(schema.relations.size()) +
                                " relations");
  for (size_t r = 0; r < tables.size(); ++r) {
    const auto& rel = schema.relations[r];
    for (size_t i = 0; i < tables[r].rows.size(); ++i) {
      const auto& row = tables[r].rows[i];
      if (row.size() != rel.arity())
        throw std::invalid_argument("relation '" + rel.name + "' row " + std::to_string(i) +
                                    " has arity " + std::to_string(row.size()));
      for (size_t c = 0; c < row.size(); ++c)
        if (!row[c].matches(rel.attributes[c].raw))
          throw std::invalid_argument("relation '" + rel.name + "' row " + std::to_string(i) +
                                      " column '" + rel.attributes[c].name +
                                      "' does not match raw type");
    }
  }
}

void ensure_primary_keys(Database& db) {
  for (size_t r = 0; r < db.schema.relations.size(); ++r) {
    auto& rel = db.schema.relations[r];
    if (!rel.pk_attrs.empty()) continue;
    std::string name = "__rowid__";
    while (rel.find_attr(name)) name += "_";
    AttributeDef attr;
    attr.name = name;
    attr.raw = RawType::Integer;
    attr.semantic = {SemanticKind::Key, 0};
    attr.nullable = false;
    rel.attributes.push_back(attr);
    rel.pk_attrs.push_back(name);
    auto& rows = db.tables[r].rows;
    for (size_t i = 0; i < rows.size(); ++i)
      rows[i].push_back(Value::integer(static_cast<std::int64_t>(i)));
  }
}

ColumnStats compute_column_stats(const Table& table, const RelationDef& rel,
                                 size_t attr_index) {
  if (attr_index >= rel.arity())
    throw std::invalid_argument("attribute index " + std::to_string(attr_index) +
                                " out of range for relation '" + rel.name + "'");
  ColumnStats st;
  st.row_count = table.rows.size();
  std::set<Value> distinct;
  size_t number_ok = 0, timestamp_ok = 0;
  for (const auto& row : table.rows) {
    const Value& v = row[attr_index];
    if (v.is_null()) {
      ++st.null_count;
      continue;
    }
    distinct.insert(v);
    if (auto num = v.numeric()) {
      ++number_ok;
      st.min = st.min ? std::min(*st.min, *num) : *num;
      st.max = st.max ? std::max(*st.max, *num) : *num;
    } else if (v.matches(RawType::Text)) {
      double parsed = 0;
      const auto& s = v.as_text();
      auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), parsed);
      if (ec == std::errc() && p == s.data() + s.size()) ++number_ok;
    }
    if (v.matches(RawType::Timestamp)) {
      ++timestamp_ok;
    } else if (v.matches(RawType::Text) && DateTime::parse_iso(v.as_text())) {
      ++timestamp_ok;
    }
  }
  st.distinct_count = distinct.size();
  size_t non_null = st.row_count - st.null_count;
  st.distinct_ratio =
      static_cast<double>(st.distinct_count) / static_cast<double>(std::max<size_t>(1, non_null));
  if (non_null > 0) {
    st.parse_rate_number = static_cast<double>(number_ok) / static_cast<double>(non_null);
    st.parse_rate_timestamp = static_cast<double>(timestamp_ok) / static_cast<double>(non_null);
  }
  return st;
}

namespace {

// Threshold rules, applied in order: key, datetime, categorical, numeric, text.
SemanticType classify_column(const AttributeDef& attr, const ColumnStats& st) {
  size_t non_null = st.row_count - st.null_count;
  if (non_null == 0) return {SemanticKind::Ignored, 0};
  if (attr.raw == RawType::Timestamp || st.parse_rate_timestamp >= 0.99)
    return {SemanticKind::Datetime, 0};
  bool categorical_eligible = attr.raw == RawType::Integer || attr.raw == RawType::Text ||
                              attr.raw == RawType::Boolean;
  if (categorical_eligible && st.distinct_count <= 64 && st.distinct_ratio <= 0.2)
    return {SemanticKind::Categorical, st.distinct_count};
  if (attr.raw == RawType::Integer || attr.raw == RawType::Real)
    return {SemanticKind::Numeric, 0};
  return {SemanticKind::Text, 0};
}

}  // namespace

SchemaDef detect_schema(const Database& db, std::vector<std::string>* warnings) {
  SchemaDef out = db.schema;
  for (size_t r = 0; r < out.relations.size(); ++r) {
    auto& rel = out.relations[r];
    std::unordered_set<std::string> key_attrs(rel.pk_attrs.begin(), rel.pk_attrs.end());
    for (const auto& fk : rel.fks)
      key_attrs.insert(fk.source_attrs.begin(), fk.source_attrs.end());
    for (size_t a = 0; a < rel.attributes.size(); ++a) {
      auto& attr = rel.attributes[a];
      if (key_attrs.count(attr.name)) {
        attr.semantic = {SemanticKind::Key, 0};
        continue;
      }
      auto st = compute_column_stats(db.tables[r], rel, a);
      attr.semantic = classify_column(attr, st);
      if (attr.semantic.kind == SemanticKind::Ignored && warnings)
        warnings->push_back("column " + rel.name + "." + attr.name +
                            " has no usable values; ignored");
    }
  }
  return out;
}

IntegrityReport validate_integrity(const Database& db) {
  IntegrityReport report;
  auto key_repr = [](const Row& row, const std::vector<size_t>& attrs) {
    std::string s = "(";
    for (size_t i = 0; i < attrs.size(); ++i) {
      if (i) s += ",";
      s += row[attrs[i]].to_string();
    }
    return s + ")";
  };

  for (size_t r = 0; r < db.schema.relations.size(); ++r) {
    const auto& rel = db.schema.relations[r];
    if (rel.pk_attrs.empty()) continue;
    std::vector<size_t> pk_idx;
    for (const auto& a : rel.pk_attrs) pk_idx.push_back(rel.attr_index(a));
    std::map<std::vector<Value>, std::vector<size_t>> groups;
    for (size_t i = 0; i < db.tables[r].rows.size(); ++i) {
      std::vector<Value> key;
      for (size_t k : pk_idx) key.push_back(db.tables[r].rows[i][k]);
      groups[key].push_back(i);
    }
    for (auto& [key, rows] : groups) {
      if (rows.size() < 2) continue;
      report.pk_violations.push_back({r, rows, key_repr(db.tables[r].rows[rows[0]], pk_idx)});
    }
  }

  for (size_t r = 0; r < db.schema.relations.size(); ++r) {
    const auto& rel = db.schema.relations[r];
    for (size_t local = 0; local < rel.fks.size(); ++local) {
      const auto& fk = rel.fks[local];
      size_t target_rel = db.schema.relation_index(fk.target_relation);
      const auto& target = db.schema.relations[target_rel];
      std::vector<size_t> src_idx, tgt_idx;
      for (const auto& a : fk.source_attrs) src_idx.push_back(rel.attr_index(a));
      for (const auto& a : target.pk_attrs) tgt_idx.push_back(target.attr_index(a));
      std::set<std::vector<Value>> target_keys;
      for (const auto& trow : db.tables[target_rel].rows) {
        std::vector<Value> key;
        for (size_t k : tgt_idx) key.push_back(trow[k]);
        target_keys.insert(std::move(key));
      }
      for (size_t i = 0; i < db.tables[r].rows.size(); ++i) {
        const auto& row = db.tables[r].rows[i];
        bool any_null = false;
        std::vector<Value> key;
        for (size_t k : src_idx) {
          if (row[k].is_null()) any_null = true;
          key.push_back(row[k]);
        }
        if (any_null) continue;  // null fk = no reference
        if (!target_keys.count(key))
          report.fk_violations.push_back({r, local, i, key_repr(row, src_idx)});
      }
    }
  }
  return report;
}

}  // namespace dbdl
