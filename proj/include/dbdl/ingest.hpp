#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "dbdl/relmodel.hpp"
#include "dbdl/sampler.hpp"

namespace dbdl {

struct DatasetTarget {
  std::string relation;
  std::string attribute;
  TaskKind task = TaskKind::Classification;
};

/// A loaded dataset: typed database with detected semantics, the declared
/// prediction target, and any ingestion warnings.
struct Dataset {
  std::string name;
  std::shared_ptr<Database> db;
  std::optional<DatasetTarget> target;
  IntegrityReport integrity;
  std::vector<std::string> warnings;
};

/// RFC-4180 CSV. Every record must have the same arity as the header.
std::vector<std::vector<std::string>> read_csv(const std::string& path);
void write_csv(const std::string& path, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& records);

/// Renders a relation's rows as CSV text cells (empty cell = null).
std::vector<std::vector<std::string>> table_to_records(const RelationDef& rel,
                                                       const Table& table);

/// Loads a dataset directory (manifest.json + one CSV per relation) or a
/// single-file SQLite database. Fills semantic types via detect_schema,
/// honoring any manifest overrides, and injects synthetic row-index keys
/// where a relation lacks a primary key.
Dataset ingest_dataset(const std::string& path,
                       const std::optional<DatasetTarget>& target_override = std::nullopt);

/// Serializes schema + target into manifest.json format. Overrides map
/// "relation.column" to a semantic type name applied after detection.
std::string manifest_json(const std::string& name, const SchemaDef& schema,
                          const std::vector<std::string>& files,
                          const std::optional<DatasetTarget>& target,
                          const std::vector<std::pair<std::string, std::string>>&
                              semantic_overrides = {});

}  // namespace dbdl
