#include <filesystem>
#include <fstream>
#include <sstream>

#include "dbdl/fixture.hpp"
#include "dbdl/hypergraph.hpp"
#include "dbdl/ingest.hpp"
#include "doctest.h"
#include "json.hpp"
#include "sql_exec.hpp"

using namespace dbdl;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("dbdl_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("csv round trip with quoting") {
  auto dir = temp_dir("csv");
  std::vector<std::string> header = {"a", "b", "c"};
  std::vector<std::vector<std::string>> records = {
      {"plain", "with,comma", "with\"quote"},
      {"line\nbreak", "", "trailing "},
  };
  auto path = (dir / "t.csv").string();
  write_csv(path, header, records);
  auto back = read_csv(path);
  REQUIRE(back.size() == 3);
  CHECK(back[0] == header);
  CHECK(back[1] == records[0]);
  CHECK(back[2] == records[1]);
  fs::remove_all(dir);
}

TEST_CASE("fixture generation is byte-deterministic") {
  auto d1 = temp_dir("fix1");
  auto d2 = temp_dir("fix2");
  make_fixture(FixtureKind::Kinship, 200, 7, d1.string());
  make_fixture(FixtureKind::Kinship, 200, 7, d2.string());
  for (const auto& entry : fs::directory_iterator(d1)) {
    auto name = entry.path().filename();
    CHECK(slurp(entry.path()) == slurp(d2 / name));
  }
  // a different seed must change the data
  auto d3 = temp_dir("fix3");
  make_fixture(FixtureKind::Kinship, 200, 8, d3.string());
  CHECK(slurp(d1 / "pairs.csv") != slurp(d3 / "pairs.csv"));
  fs::remove_all(d1);
  fs::remove_all(d2);
  fs::remove_all(d3);
}

TEST_CASE("kinship fixture ingests with resolvable edges and recomputable labels") {
  auto dir = temp_dir("kinship");
  make_fixture(FixtureKind::Kinship, 300, 11, dir.string());
  auto ds = ingest_dataset(dir.string());
  CHECK(ds.name == "kinship");
  REQUIRE(ds.target.has_value());
  CHECK(ds.target->relation == "pairs");
  CHECK(ds.integrity.is_empty());
  REQUIRE(ds.db->schema.relations.size() == 3);

  auto g = build_hypergraph(ds.db);
  CHECK(g.num_edge_types() == 6);  // 3 fks, both directions
  CHECK(g.adjacency[0].pairs.size() == 300);  // pairs.a

  // semantic override pinned generation.code to categorical
  size_t gen = ds.db->schema.relation_index("generation");
  size_t code = ds.db->schema.relations[gen].attr_index("code");
  CHECK(ds.db->schema.relations[gen].attributes[code].semantic.kind ==
        SemanticKind::Categorical);

  // labels recomputable from the sidecar rule by explicit joins
  size_t pairs = ds.db->schema.relation_index("pairs");
  size_t person = ds.db->schema.relation_index("person");
  const auto& prel = ds.db->schema.relations[pairs];
  size_t a_idx = prel.attr_index("a"), b_idx = prel.attr_index("b");
  size_t label_idx = prel.attr_index("same_gen");
  size_t gen_idx = ds.db->schema.relations[person].attr_index("gen_id");
  size_t checked = 0;
  for (const auto& row : ds.db->tables[pairs].rows) {
    auto gen_of = [&](const Value& pid) {
      for (const auto& prow : ds.db->tables[person].rows)
        if (prow[0] == pid) return prow[gen_idx];
      throw std::runtime_error("person not found");
    };
    std::int64_t expected = gen_of(row[a_idx]) == gen_of(row[b_idx]) ? 1 : 0;
    CHECK(row[label_idx].as_integer() == expected);
    ++checked;
  }
  CHECK(checked == 300);
  fs::remove_all(dir);
}

TEST_CASE("star fixture labels equal the planted formula") {
  auto dir = temp_dir("star");
  make_fixture(FixtureKind::StarRegression, 120, 13, dir.string());
  auto rule = nlohmann::json::parse(slurp(dir / "rule.json"));
  double intercept = rule.at("intercept").get<double>();
  double base_coef = rule.at("base_coef").get<double>();
  double mean_coef = rule.at("mean_coef").get<double>();

  auto ds = ingest_dataset(dir.string());
  CHECK(ds.integrity.is_empty());
  size_t account = ds.db->schema.relation_index("account");
  size_t txn = ds.db->schema.relation_index("txn");
  const auto& arel = ds.db->schema.relations[account];
  size_t base_idx = arel.attr_index("base"), y_idx = arel.attr_index("balance");
  size_t acc_ref = ds.db->schema.relations[txn].attr_index("account_id");
  size_t amount_idx = ds.db->schema.relations[txn].attr_index("amount");

  for (const auto& arow : ds.db->tables[account].rows) {
    double sum = 0;
    size_t count = 0;
    for (const auto& trow : ds.db->tables[txn].rows) {
      if (trow[acc_ref] == arow[0]) {
        sum += trow[amount_idx].as_real();
        ++count;
      }
    }
    double mean = count ? sum / static_cast<double>(count) : 0.0;
    double expected = intercept + base_coef * arow[base_idx].as_real() + mean_coef * mean;
    CHECK(arow[y_idx].as_real() == doctest::Approx(expected).epsilon(1e-12));
  }
  fs::remove_all(dir);
}

TEST_CASE("ingest round trip reproduces cell values exactly") {
  auto dir = temp_dir("roundtrip");
  make_fixture(FixtureKind::WeekdayEvents, 60, 3, dir.string());
  auto ds = ingest_dataset(dir.string());

  size_t events = ds.db->schema.relation_index("events");
  const auto& rel = ds.db->schema.relations[events];
  // re-export (skipping the synthetic key if one was added; none here)
  std::vector<std::string> header;
  for (const auto& a : rel.attributes) header.push_back(a.name);
  auto records = table_to_records(rel, ds.db->tables[events]);
  auto out = (dir / "reexport.csv").string();
  write_csv(out, header, records);

  auto original = read_csv((dir / "events.csv").string());
  auto exported = read_csv(out);
  CHECK(original == exported);
  fs::remove_all(dir);
}

TEST_CASE("manifest errors") {
  auto dir = temp_dir("badmanifest");
  std::ofstream(dir / "manifest.json") << R"({
    "name": "broken",
    "relations": [
      {"name": "a", "file": "a.csv",
       "columns": [{"name": "id", "raw": "integer"}, {"name": "r", "raw": "integer"}],
       "pk": ["id"],
       "fks": [{"columns": ["r"], "references": "missing"}]}
    ]
  })";
  std::ofstream(dir / "a.csv") << "id,r\n1,1\n";
  CHECK_THROWS_AS(ingest_dataset(dir.string()), std::invalid_argument);
  fs::remove_all(dir);
}

TEST_CASE("malformed cell names relation, row and column") {
  auto dir = temp_dir("badcell");
  std::ofstream(dir / "manifest.json") << R"({
    "name": "badcell",
    "relations": [
      {"name": "t", "file": "t.csv",
       "columns": [{"name": "id", "raw": "integer"}, {"name": "x", "raw": "real"}],
       "pk": ["id"], "fks": []}
    ]
  })";
  std::ofstream(dir / "t.csv") << "id,x\n1,notanumber\n";
  try {
    ingest_dataset(dir.string());
    FAIL("expected ingestion error");
  } catch (const std::exception& e) {
    std::string msg = e.what();
    CHECK(msg.find("t") != std::string::npos);
    CHECK(msg.find("1") != std::string::npos);
    CHECK(msg.find("x") != std::string::npos);
  }
  fs::remove_all(dir);
}

TEST_CASE("semantic override to ignored excludes a column") {
  auto dir = temp_dir("override");
  std::ofstream(dir / "manifest.json") << R"({
    "name": "override",
    "target": {"relation": "t", "attribute": "y", "task": "regression"},
    "relations": [
      {"name": "t", "file": "t.csv",
       "columns": [{"name": "id", "raw": "integer"},
                   {"name": "x", "raw": "real"},
                   {"name": "y", "raw": "real"}],
       "pk": ["id"], "fks": []}
    ],
    "semantic_overrides": {"t.x": "ignored"}
  })";
  std::ofstream(dir / "t.csv") << "id,x,y\n1,0.5,1.0\n2,0.25,2.0\n";
  auto ds = ingest_dataset(dir.string());
  size_t x = ds.db->schema.relations[0].attr_index("x");
  CHECK(ds.db->schema.relations[0].attributes[x].semantic.kind == SemanticKind::Ignored);
  fs::remove_all(dir);
}

TEST_CASE("relations without a declared pk get a synthetic key") {
  auto dir = temp_dir("nopk");
  std::ofstream(dir / "manifest.json") << R"({
    "name": "nopk",
    "relations": [
      {"name": "log", "file": "log.csv",
       "columns": [{"name": "msg", "raw": "text"}], "pk": [], "fks": []}
    ]
  })";
  std::ofstream(dir / "log.csv") << "msg\nfirst row text\nsecond row text\n";
  auto ds = ingest_dataset(dir.string());
  CHECK(ds.db->schema.relations[0].pk_attrs.size() == 1);
  CHECK(ds.db->schema.relations[0].arity() == 2);
  fs::remove_all(dir);
}

TEST_CASE("sqlite ingestion") {
  auto dir = temp_dir("sqlite");
  auto path = (dir / "mini.sqlite").string();
  {
    sqlite3* conn = nullptr;
    REQUIRE(sqlite3_open(path.c_str(), &conn) == SQLITE_OK);
    auto exec = [&](const char* sql) {
      char* err = nullptr;
      REQUIRE(sqlite3_exec(conn, sql, nullptr, nullptr, &err) == SQLITE_OK);
    };
    exec("CREATE TABLE dept (id INTEGER PRIMARY KEY, name TEXT)");
    exec("CREATE TABLE emp (id INTEGER PRIMARY KEY, dept_id INTEGER REFERENCES dept, "
         "salary REAL, hired DATE)");
    exec("INSERT INTO dept VALUES (1, 'eng'), (2, 'ops')");
    exec("INSERT INTO emp VALUES (1, 1, 100.5, '2020-01-05'), (2, 1, 90.25, '2021-07-19'), "
         "(3, 2, NULL, '2019-11-30')");
    sqlite3_close(conn);
  }
  auto ds = ingest_dataset(path);
  CHECK(ds.db->schema.relations.size() == 2);
  CHECK(ds.integrity.is_empty());
  size_t emp = ds.db->schema.relation_index("emp");
  const auto& rel = ds.db->schema.relations[emp];
  CHECK(rel.fks.size() == 1);
  CHECK(rel.fks[0].target_relation == "dept");
  CHECK(rel.attributes[rel.attr_index("hired")].raw == RawType::Timestamp);
  CHECK(ds.db->tables[emp].rows[2][rel.attr_index("salary")].is_null());
  auto g = build_hypergraph(ds.db);
  CHECK(g.adjacency[0].pairs.size() == 3);
  fs::remove_all(dir);
}
