#include "dbdl/ingest.hpp"

#include <sqlite3.h>

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <stdexcept>

#include "json.hpp"

namespace dbdl {

namespace fs = std::filesystem;
using nlohmann::json;

std::vector<std::vector<std::string>> read_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open csv: " + path);
  std::string content((std::istreambuf_iterator<char>(in)),
                      std::istreambuf_iterator<char>());
  std::vector<std::vector<std::string>> records;
  std::vector<std::string> record;
  std::string field;
  bool in_quotes = false;
  size_t i = 0;
  auto end_field = [&] {
    record.push_back(std::move(field));
    field.clear();
  };
  auto end_record = [&] {
    end_field();
    records.push_back(std::move(record));
    record.clear();
  };
  while (i < content.size()) {
    char c = content[i];
    if (in_quotes) {
      if (c == '"') {
        if (i + 1 < content.size() && content[i + 1] == '"') {
          field += '"';
          i += 2;
          continue;
        }
        in_quotes = false;
        ++i;
        continue;
      }
      field += c;
      ++i;
      continue;
    }
    switch (c) {
      case '"': in_quotes = true; ++i; break;
      case ',': end_field(); ++i; break;
      case '\r':
        if (i + 1 < content.size() && content[i + 1] == '\n') ++i;
        [[fallthrough]];
      case '\n': end_record(); ++i; break;
      default: field += c; ++i; break;
    }
  }
  if (!field.empty() || !record.empty()) end_record();
  if (in_quotes) throw std::runtime_error("unterminated quote in csv: " + path);
  return records;
}

namespace {

std::string csv_escape(const std::string& s) {
  bool needs_quotes = s.find_first_of(",\"\r\n") != std::string::npos;
  if (!needs_quotes) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace

void write_csv(const std::string& path, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write csv: " + path);
  for (size_t j = 0; j < header.size(); ++j) {
    if (j) out << ',';
    out << csv_escape(header[j]);
  }
  out << '\n';
  for (const auto& record : records) {
    for (size_t j = 0; j < record.size(); ++j) {
      if (j) out << ',';
      out << csv_escape(record[j]);
    }
    out << '\n';
  }
}

std::vector<std::vector<std::string>> table_to_records(const RelationDef& rel,
                                                       const Table& table) {
  std::vector<std::vector<std::string>> records;
  records.reserve(table.rows.size());
  for (const auto& row : table.rows) {
    std::vector<std::string> record;
    record.reserve(rel.arity());
    for (const auto& cell : row) record.push_back(cell.to_string());
    records.push_back(std::move(record));
  }
  return records;
}

std::string manifest_json(const std::string& name, const SchemaDef& schema,
                          const std::vector<std::string>& files,
                          const std::optional<DatasetTarget>& target,
                          const std::vector<std::pair<std::string, std::string>>&
                              semantic_overrides) {
  nlohmann::ordered_json j;
  j["name"] = name;
  if (target) {
    j["target"] = {
        {"relation", target->relation},
        {"attribute", target->attribute},
        {"task", target->task == TaskKind::Classification ? "classification" : "regression"},
    };
  }
  j["relations"] = nlohmann::ordered_json::array();
  for (size_t r = 0; r < schema.relations.size(); ++r) {
    const auto& rel = schema.relations[r];
    nlohmann::ordered_json jr;
    jr["name"] = rel.name;
    jr["file"] = files.at(r);
    jr["columns"] = nlohmann::ordered_json::array();
    for (const auto& attr : rel.attributes)
      jr["columns"].push_back({{"name", attr.name}, {"raw", std::string(raw_type_name(attr.raw))}});
    jr["pk"] = rel.pk_attrs;
    jr["fks"] = nlohmann::ordered_json::array();
    for (const auto& fk : rel.fks)
      jr["fks"].push_back({{"columns", fk.source_attrs}, {"references", fk.target_relation}});
    j["relations"].push_back(std::move(jr));
  }
  if (!semantic_overrides.empty()) {
    nlohmann::ordered_json jo;
    for (const auto& [key, value] : semantic_overrides) jo[key] = value;
    j["semantic_overrides"] = std::move(jo);
  }
  return j.dump(2) + "\n";
}

namespace {

Dataset ingest_manifest_dir(const fs::path& dir,
                            const std::optional<DatasetTarget>& target_override) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw std::runtime_error("missing manifest.json in " + dir.string());
  json manifest = json::parse(in);

  Dataset ds;
  ds.name = manifest.value("name", dir.filename().string());
  ds.db = std::make_shared<Database>();
  auto& db = *ds.db;

  std::vector<std::string> files;
  for (const auto& jr : manifest.at("relations")) {
    RelationDef rel;
    rel.name = jr.at("name").get<std::string>();
    for (const auto& jc : jr.at("columns")) {
      AttributeDef attr;
      attr.name = jc.at("name").get<std::string>();
      auto raw = raw_type_from_name(jc.at("raw").get<std::string>());
      if (!raw)
        throw std::runtime_error("relation '" + rel.name + "' column '" + attr.name +
                                 "': unknown raw type");
      attr.raw = *raw;
      rel.attributes.push_back(std::move(attr));
    }
    if (jr.contains("pk")) rel.pk_attrs = jr.at("pk").get<std::vector<std::string>>();
    if (jr.contains("fks")) {
      for (const auto& jf : jr.at("fks")) {
        ForeignKeyDef fk;
        fk.source_relation = rel.name;
        fk.source_attrs = jf.at("columns").get<std::vector<std::string>>();
        fk.target_relation = jf.at("references").get<std::string>();
        rel.fks.push_back(std::move(fk));
      }
    }
    files.push_back(jr.at("file").get<std::string>());
    db.schema.relations.push_back(std::move(rel));
  }
  db.schema.validate();

  for (size_t r = 0; r < db.schema.relations.size(); ++r) {
    const auto& rel = db.schema.relations[r];
    auto records = read_csv((dir / files[r]).string());
    if (records.empty())
      throw std::runtime_error("relation '" + rel.name + "': csv has no header");
    const auto& header = records[0];
    if (header.size() != rel.arity())
      throw std::runtime_error("relation '" + rel.name + "': csv header arity mismatch");
    for (size_t a = 0; a < rel.arity(); ++a)
      if (header[a] != rel.attributes[a].name)
        throw std::runtime_error("relation '" + rel.name + "': csv header column " +
                                 std::to_string(a) + " is '" + header[a] +
                                 "', expected '" + rel.attributes[a].name + "'");
    Table table;
    for (size_t i = 1; i < records.size(); ++i) {
      const auto& record = records[i];
      if (record.size() != rel.arity())
        throw std::runtime_error("relation '" + rel.name + "' row " + std::to_string(i) +
                                 ": arity mismatch");
      Row row;
      for (size_t a = 0; a < rel.arity(); ++a) {
        try {
          row.push_back(Value::from_string(record[a], rel.attributes[a].raw));
        } catch (const std::exception& e) {
          throw std::runtime_error("relation '" + rel.name + "' row " + std::to_string(i) +
                                   " column '" + rel.attributes[a].name + "': " + e.what());
        }
      }
      table.rows.push_back(std::move(row));
    }
    db.tables.push_back(std::move(table));
  }
  db.validate_cells();
  ensure_primary_keys(db);
  db.schema = detect_schema(db, &ds.warnings);

  if (manifest.contains("semantic_overrides")) {
    for (const auto& [key, value] : manifest.at("semantic_overrides").items()) {
      auto dot = key.find('.');
      if (dot == std::string::npos)
        throw std::runtime_error("semantic override key must be relation.column: " + key);
      size_t r = db.schema.relation_index(key.substr(0, dot));
      size_t a = db.schema.relations[r].attr_index(key.substr(dot + 1));
      auto kind = semantic_kind_from_name(value.get<std::string>());
      if (!kind) throw std::runtime_error("unknown semantic override: " + value.dump());
      SemanticType st{*kind, 0};
      if (*kind == SemanticKind::Categorical)
        st.cardinality = compute_column_stats(db.tables[r], db.schema.relations[r], a)
                             .distinct_count;
      db.schema.relations[r].attributes[a].semantic = st;
    }
  }

  if (target_override) {
    ds.target = target_override;
  } else if (manifest.contains("target")) {
    DatasetTarget t;
    t.relation = manifest.at("target").at("relation").get<std::string>();
    t.attribute = manifest.at("target").at("attribute").get<std::string>();
    auto task = manifest.at("target").at("task").get<std::string>();
    if (task == "classification")
      t.task = TaskKind::Classification;
    else if (task == "regression")
      t.task = TaskKind::Regression;
    else
      throw std::runtime_error("unknown task kind: " + task);
    ds.target = t;
  }
  if (ds.target) {
    size_t r = db.schema.relation_index(ds.target->relation);
    db.schema.relations[r].attr_index(ds.target->attribute);
  }

  ds.integrity = validate_integrity(db);
  return ds;
}

RawType sqlite_decl_to_raw(std::string decl) {
  std::transform(decl.begin(), decl.end(), decl.begin(),
                 [](unsigned char c) { return std::toupper(c); });
  auto has = [&](const char* s) { return decl.find(s) != std::string::npos; };
  if (has("BOOL")) return RawType::Boolean;
  if (has("INT")) return RawType::Integer;
  if (has("DATE") || has("TIME")) return RawType::Timestamp;
  if (has("CHAR") || has("CLOB") || has("TEXT")) return RawType::Text;
  if (has("REAL") || has("FLOA") || has("DOUB") || has("NUMERIC") || has("DECIMAL"))
    return RawType::Real;
  return RawType::Text;
}

Dataset ingest_sqlite(const fs::path& path,
                      const std::optional<DatasetTarget>& target_override) {
  sqlite3* conn = nullptr;
  if (sqlite3_open_v2(path.string().c_str(), &conn, SQLITE_OPEN_READONLY, nullptr) !=
      SQLITE_OK)
    throw std::runtime_error("cannot open sqlite database: " + path.string());
  struct Closer {
    sqlite3* c;
    ~Closer() { sqlite3_close(c); }
  } closer{conn};

  auto query = [&](const std::string& sql,
                   const std::function<void(sqlite3_stmt*)>& on_row) {
    sqlite3_stmt* stmt = nullptr;
    if (sqlite3_prepare_v2(conn, sql.c_str(), -1, &stmt, nullptr) != SQLITE_OK)
      throw std::runtime_error(std::string("sqlite error: ") + sqlite3_errmsg(conn));
    while (sqlite3_step(stmt) == SQLITE_ROW) on_row(stmt);
    sqlite3_finalize(stmt);
  };
  auto text_col = [](sqlite3_stmt* s, int c) {
    const unsigned char* t = sqlite3_column_text(s, c);
    return t ? std::string(reinterpret_cast<const char*>(t)) : std::string();
  };

  Dataset ds;
  ds.name = path.stem().string();
  ds.db = std::make_shared<Database>();
  auto& db = *ds.db;

  std::vector<std::string> names;
  query("SELECT name FROM sqlite_master WHERE type='table' AND name NOT LIKE 'sqlite_%' "
        "ORDER BY name",
        [&](sqlite3_stmt* s) { names.push_back(text_col(s, 0)); });

  for (const auto& name : names) {
    RelationDef rel;
    rel.name = name;
    std::vector<std::pair<int, std::string>> pk_ordered;
    query("PRAGMA table_info(\"" + name + "\")", [&](sqlite3_stmt* s) {
      AttributeDef attr;
      attr.name = text_col(s, 1);
      attr.raw = sqlite_decl_to_raw(text_col(s, 2));
      int pk_pos = sqlite3_column_int(s, 5);
      if (pk_pos > 0) pk_ordered.emplace_back(pk_pos, attr.name);
      rel.attributes.push_back(std::move(attr));
    });
    std::sort(pk_ordered.begin(), pk_ordered.end());
    for (auto& [pos, col] : pk_ordered) rel.pk_attrs.push_back(col);
    db.schema.relations.push_back(std::move(rel));
  }
  for (auto& rel : db.schema.relations) {
    // group fk columns by constraint id, ordered by seq
    std::map<int, std::vector<std::tuple<int, std::string, std::string, std::string>>> fks;
    query("PRAGMA foreign_key_list(\"" + rel.name + "\")", [&](sqlite3_stmt* s) {
      fks[sqlite3_column_int(s, 0)].emplace_back(sqlite3_column_int(s, 1),
                                                 text_col(s, 2), text_col(s, 3),
                                                 text_col(s, 4));
    });
    for (auto& [id, cols] : fks) {
      std::sort(cols.begin(), cols.end());
      ForeignKeyDef fk;
      fk.source_relation = rel.name;
      for (auto& [seq, table, from, to] : cols) {
        fk.source_attrs.push_back(from);
        fk.target_relation = table;
      }
      rel.fks.push_back(std::move(fk));
    }
  }
  db.schema.validate();

  for (const auto& rel : db.schema.relations) {
    Table table;
    std::string sql = "SELECT ";
    for (size_t a = 0; a < rel.arity(); ++a) {
      if (a) sql += ", ";
      sql += "\"" + rel.attributes[a].name + "\"";
    }
    sql += " FROM \"" + rel.name + "\"";
    query(sql, [&](sqlite3_stmt* s) {
      Row row;
      for (size_t a = 0; a < rel.arity(); ++a) {
        int c = static_cast<int>(a);
        if (sqlite3_column_type(s, c) == SQLITE_NULL) {
          row.push_back(Value::null());
          continue;
        }
        switch (rel.attributes[a].raw) {
          case RawType::Integer:
            row.push_back(Value::integer(sqlite3_column_int64(s, c)));
            break;
          case RawType::Boolean:
            row.push_back(Value::boolean(sqlite3_column_int64(s, c) != 0));
            break;
          case RawType::Real:
            row.push_back(Value::real(sqlite3_column_double(s, c)));
            break;
          case RawType::Timestamp: {
            auto dt = DateTime::parse_iso(text_col(s, c));
            if (!dt)
              throw std::runtime_error("relation '" + rel.name +
                                       "': unparseable timestamp '" + text_col(s, c) + "'");
            row.push_back(Value::timestamp(*dt));
            break;
          }
          case RawType::Text:
            row.push_back(Value::text(text_col(s, c)));
            break;
        }
      }
      table.rows.push_back(std::move(row));
    });
    db.tables.push_back(std::move(table));
  }
  ensure_primary_keys(db);
  db.schema = detect_schema(db, &ds.warnings);
  ds.target = target_override;
  ds.integrity = validate_integrity(db);
  return ds;
}

}  // namespace

Dataset ingest_dataset(const std::string& path,
                       const std::optional<DatasetTarget>& target_override) {
  fs::path p(path);
  if (fs::is_directory(p)) return ingest_manifest_dir(p, target_override);
  if (fs::is_regular_file(p)) {
    auto ext = p.extension().string();
    if (ext == ".db" || ext == ".sqlite" || ext == ".sqlite3")
      return ingest_sqlite(p, target_override);
    throw std::runtime_error("unsupported dataset file: " + path);
  }
  throw std::runtime_error("dataset path does not exist: " + path);
}

}  // namespace dbdl
