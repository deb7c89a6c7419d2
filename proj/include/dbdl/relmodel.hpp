#pragma once

#include <optional>
#include <string>
#include <vector>

#include "dbdl/value.hpp"

namespace dbdl {

enum class SemanticKind { Categorical, Numeric, Text, Datetime, Key, Ignored };

std::string_view semantic_kind_name(SemanticKind k);
std::optional<SemanticKind> semantic_kind_from_name(std::string_view name);

struct SemanticType {
  SemanticKind kind = SemanticKind::Ignored;
  size_t cardinality = 0;  // > 0 iff kind == Categorical

  bool operator==(const SemanticType&) const = default;
};

struct AttributeDef {
  std::string name;
  RawType raw = RawType::Text;
  SemanticType semantic;
  bool nullable = true;
};

struct ForeignKeyDef {
  std::string source_relation;
  std::vector<std::string> source_attrs;
  std::string target_relation;  // target attrs = target's PK, positionally
};

struct RelationDef {
  std::string name;
  std::vector<AttributeDef> attributes;
  std::vector<std::string> pk_attrs;
  std::vector<ForeignKeyDef> fks;

  size_t arity() const { return attributes.size(); }
  std::optional<size_t> find_attr(std::string_view name) const;
  size_t attr_index(std::string_view name) const;  // throws if missing
};

/// A foreign key resolved to indices, in schema declaration order. fk_id is
/// the position in the schema-wide list.
struct ResolvedFk {
  size_t fk_id;
  size_t source_relation;
  std::vector<size_t> source_attrs;
  size_t target_relation;
  std::vector<size_t> target_attrs;  // target PK attr indices
};

struct SchemaDef {
  std::vector<RelationDef> relations;

  std::optional<size_t> find_relation(std::string_view name) const;
  size_t relation_index(std::string_view name) const;  // throws if missing

  /// Checks name uniqueness, PK subsets, FK target existence, and FK/PK
  /// arity and raw-type agreement. Throws std::invalid_argument on failure.
  void validate() const;

  std::vector<ResolvedFk> resolved_fks() const;
};

using Row = std::vector<Value>;

struct Table {
  std::vector<Row> rows;
};

struct Database {
  SchemaDef schema;
  std::vector<Table> tables;  // one per relation, same order

  const Table& table(size_t relation) const { return tables.at(relation); }

  /// Checks row arity and cell/raw-type agreement for every relation.
  void validate_cells() const;
};

/// Gives every relation without a declared PK a synthetic row-index key
/// attribute so that each tuple has an identity.
void ensure_primary_keys(Database& db);

struct ColumnStats {
  size_t row_count = 0;
  size_t null_count = 0;
  size_t distinct_count = 0;  // over non-null cells
  std::optional<double> min;  // numeric cells only
  std::optional<double> max;
  double distinct_ratio = 0.0;       // distinct / max(1, row_count - null_count)
  double parse_rate_number = 0.0;    // fraction of non-null cells with a numeric reading
  double parse_rate_timestamp = 0.0; // fraction of non-null cells parseable as ISO-8601
};

ColumnStats compute_column_stats(const Table& table, const RelationDef& rel,
                                 size_t attr_index);

/// Fills in semantic types from key declarations, raw types and column
/// statistics. Pure: returns a copy of the schema with semantics assigned.
/// Columns with no non-null cells fall back to `ignored` and are reported
/// in `warnings` when given.
SchemaDef detect_schema(const Database& db, std::vector<std::string>* warnings = nullptr);

struct PkViolation {
  size_t relation;
  std::vector<size_t> rows;  // all rows sharing the duplicated key value
  std::string key_repr;
};

struct FkViolation {
  size_t relation;
  size_t fk_index;  // index into the relation's fk list
  size_t row;
  std::string key_repr;
};

struct IntegrityReport {
  std::vector<PkViolation> pk_violations;
  std::vector<FkViolation> fk_violations;

  bool is_empty() const { return pk_violations.empty() && fk_violations.empty(); }
};

IntegrityReport validate_integrity(const Database& db);

}  // namespace dbdl
