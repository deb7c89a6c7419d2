#include <algorithm>
#include <random>
#include <set>

#include "dbdl/sampler.hpp"
#include "doctest.h"
#include "sql_exec.hpp"
#include "test_util.hpp"

using namespace dbdl;
using namespace dbdl::testutil;

namespace {

std::shared_ptr<Database> chain_db() {
  // r -> s -> u plus one extra u row
  auto db = std::make_shared<Database>();
  db->schema.relations = {
      relation("r", {attr("id", RawType::Integer), attr("ref", RawType::Integer)}, {"id"},
               {fk("r", {"ref"}, "s")}),
      relation("s", {attr("id", RawType::Integer), attr("ref", RawType::Integer)}, {"id"},
               {fk("s", {"ref"}, "u")}),
      relation("u", {attr("id", RawType::Integer)}, {"id"}),
  };
  db->tables.resize(3);
  db->tables[0].rows = {{Value::integer(0), Value::integer(0)}};
  db->tables[1].rows = {{Value::integer(0), Value::integer(0)}};
  db->tables[2].rows = {{Value::integer(0)}, {Value::integer(1)}};
  return db;
}

}  // namespace

TEST_CASE("bfs depth limits") {
  auto g = build_hypergraph(chain_db());
  std::vector<NodeRef> seeds = {{0, 0}};

  auto zero = bfs_expand(g, seeds, 0);
  CHECK(zero.per_relation[0] == std::vector<uint32_t>{0});
  CHECK(zero.per_relation[1].empty());
  CHECK(zero.per_relation[2].empty());

  auto one = bfs_expand(g, seeds, 1);
  CHECK(one.per_relation[0] == std::vector<uint32_t>{0});
  CHECK(one.per_relation[1] == std::vector<uint32_t>{0});
  CHECK(one.per_relation[2].empty());

  auto two = bfs_expand(g, seeds, 2);
  CHECK(two.per_relation[2] == std::vector<uint32_t>{0});
  CHECK_FALSE(two.contains(2, 1));
}

TEST_CASE("bfs terminates on cycles") {
  auto db = std::make_shared<Database>();
  db->schema.relations = {relation(
      "t", {attr("id", RawType::Integer), attr("next", RawType::Integer)}, {"id"},
      {fk("t", {"next"}, "t")})};
  db->tables.resize(1);
  db->tables[0].rows = {{Value::integer(0), Value::integer(1)},
                        {Value::integer(1), Value::integer(0)}};
  auto g = build_hypergraph(db);
  auto result = bfs_expand(g, {{0, 0}}, 10);
  CHECK(result.per_relation[0] == std::vector<uint32_t>{0, 1});
}

TEST_CASE("bfs equals the brute-force closure oracle") {
  std::mt19937_64 rng(41);
  for (int trial = 0; trial < 20; ++trial) {
    auto db = random_db(rng, 4, 10, trial % 2 == 0);
    auto g = build_hypergraph(db);
    std::vector<NodeRef> seeds = {{0, 0}};
    if (g.relation_rows(0) > 2) seeds.push_back({0, 2});
    for (size_t depth = 0; depth <= 4; ++depth) {
      auto bfs = bfs_expand(g, seeds, depth);
      auto oracle = closure_oracle(g, seeds, depth);
      CHECK(bfs.per_relation == oracle.per_relation);
    }
    auto unbounded = bfs_expand(g, seeds, std::nullopt);
    auto oracle = closure_oracle(g, seeds, std::nullopt);
    CHECK(unbounded.per_relation == oracle.per_relation);
  }
}

TEST_CASE("hetero sample: caps, determinism, subset") {
  // hub with 5 children
  auto db = two_relation_db({{0, 0}, {1, 0}, {2, 0}, {3, 0}, {4, 0}}, {0});
  auto g = build_hypergraph(db);
  std::vector<NodeRef> seeds = {{1, 0}};  // the hub s row

  auto all = hetero_sample_nodes(g, seeds, {10}, 1, 7);
  auto bfs = bfs_expand(g, seeds, 1);
  CHECK(all.per_relation == bfs.per_relation);

  auto capped = hetero_sample_nodes(g, seeds, {2}, 1, 7);
  CHECK(capped.per_relation[0].size() == 2);
  auto again = hetero_sample_nodes(g, seeds, {2}, 1, 7);
  CHECK(capped.per_relation == again.per_relation);

  auto other_seed = hetero_sample_nodes(g, seeds, {2}, 1, 8);
  CHECK(other_seed.per_relation[0].size() == 2);

  CHECK_THROWS_AS(hetero_sample_nodes(g, seeds, {0}, 1, 7), std::invalid_argument);
}

TEST_CASE("hetero sample: fanout 1 on a chain walks a single path") {
  auto g = build_hypergraph(chain_db());
  auto nodes = hetero_sample_nodes(g, {{0, 0}}, {1}, 3, 5);
  CHECK(nodes.per_relation[0].size() == 1);
  CHECK(nodes.per_relation[1].size() == 1);
  CHECK(nodes.per_relation[2].size() == 1);
}

TEST_CASE("hetero sample is a subset of bfs at equal depth") {
  std::mt19937_64 rng(43);
  for (int trial = 0; trial < 10; ++trial) {
    auto db = random_db(rng, 3, 12);
    auto g = build_hypergraph(db);
    std::vector<NodeRef> seeds = {{0, 0}, {0, 1}};
    auto bfs = bfs_expand(g, seeds, 2);
    auto sampled = hetero_sample_nodes(g, seeds, {2}, 2, trial);
    for (size_t r = 0; r < g.num_relations(); ++r)
      for (uint32_t row : sampled.per_relation[r]) CHECK(bfs.contains(r, row));
  }
}

TEST_CASE("mask_targets sentinels every target row and keeps labels") {
  auto db = two_relation_db({{0, 0}, {1, 0}, {2, 0}}, {0});
  auto g = build_hypergraph(db);
  SampleSpec spec;
  spec.target_relation = 0;
  spec.target_attr = "x";
  spec.task = TaskKind::Regression;
  std::vector<NodeRef> seeds = {{0, 1}};
  auto nodes = bfs_expand(g, seeds, 2);  // pulls sibling t rows through s
  auto batch = extract_subgraph(g, nodes, seeds, 0);
  CHECK(batch.rows[0].size() == 3);

  auto masked = mask_targets(std::move(batch), spec, db->schema);
  CHECK(masked.label_mask_applied);
  REQUIRE(masked.labels.size() == 1);
  CHECK(masked.labels[0] == Value::real(0.5));  // row id 1 had x = 0.5
  size_t x_idx = db->schema.relations[0].attr_index("x");
  for (const auto& row : masked.rows[0]) CHECK(row[x_idx].is_null());

  CHECK_THROWS_AS(mask_targets(std::move(masked), spec, db->schema),
                  std::invalid_argument);
}

TEST_CASE("subgraph extraction remaps adjacency to local ids") {
  auto db = two_relation_db({{0, 0}, {1, 1}, {2, 1}}, {0, 1});
  auto g = build_hypergraph(db);
  std::vector<NodeRef> seeds = {{0, 1}, {0, 2}};
  auto nodes = bfs_expand(g, seeds, 1);
  auto batch = extract_subgraph(g, nodes, seeds, 0);
  // t rows 1,2 and s row 1 only
  CHECK(batch.rows[0].size() == 2);
  CHECK(batch.rows[1].size() == 1);
  CHECK(batch.global_rows[0] == std::vector<uint32_t>{1, 2});
  CHECK(batch.global_rows[1] == std::vector<uint32_t>{1});
  using P = std::pair<uint32_t, uint32_t>;
  CHECK(batch.adjacency[0].pairs == std::vector<P>{{0, 0}, {1, 0}});
  CHECK(batch.adjacency[1].pairs == std::vector<P>{{0, 0}, {0, 1}});
  CHECK(batch.seeds == std::vector<uint32_t>{0, 1});
}

TEST_CASE("train/val split") {
  std::vector<NodeRef> seeds;
  for (uint32_t i = 0; i < 10; ++i) seeds.push_back({0, i});
  SplitSpec spec{0.7, 99};
  auto [train, val] = split_train_val(seeds, spec);
  CHECK(train.size() == 7);
  CHECK(val.size() == 3);

  auto [train2, val2] = split_train_val(seeds, spec);
  CHECK(train == train2);
  CHECK(val == val2);

  std::set<NodeRef> all(train.begin(), train.end());
  for (const auto& v : val) CHECK(all.insert(v).second);
  CHECK(all.size() == seeds.size());

  CHECK_THROWS_AS(split_train_val({{0, 0}}, spec), std::invalid_argument);
}

TEST_CASE("emitted sql shapes") {
  auto db = two_relation_db({{0, 0}}, {0});
  SampleSpec spec;
  spec.target_relation = 0;
  spec.target_attr = "x";

  auto zero = emit_recursive_sql_statements(db->schema, spec, 0, {});
  REQUIRE(zero.size() == 1);
  CHECK(zero[0].relation == 0);
  CHECK(zero[0].text.find("JOIN") == std::string::npos);

  auto one = emit_recursive_sql_statements(db->schema, spec, 1, {{Value::integer(0)}});
  REQUIRE(one.size() == 2);
  CHECK(one[0].relation == 0);
  CHECK(one[1].relation == 1);
  CHECK(one[1].text.find("JOIN \"s\"") != std::string::npos);
  CHECK(one[1].text.find("\"h0\".\"fk_s\" = \"h1\".\"id\"") != std::string::npos);
  CHECK(one[0].text.find("WHERE") != std::string::npos);

  // reverse direction: seed on s pulls referencing t rows
  SampleSpec rev_spec;
  rev_spec.target_relation = 1;
  rev_spec.target_attr = "y";
  auto rev = emit_recursive_sql_statements(db->schema, rev_spec, 1, {});
  REQUIRE(rev.size() == 2);
  CHECK(rev[1].relation == 0);
  CHECK(rev[1].text.find("\"h1\".\"fk_s\" = \"h0\".\"id\"") != std::string::npos);
}

TEST_CASE("emitted sql matches bfs row sets when executed") {
  std::mt19937_64 rng(47);
  for (int trial = 0; trial < 8; ++trial) {
    auto db = random_db(rng, 3, 8, trial % 2 == 1);
    auto g = build_hypergraph(db);
    SampleSpec spec;
    spec.target_relation = 0;
    spec.target_attr = "val";

    std::vector<NodeRef> seeds = {{0, 0}, {0, 1}};
    std::vector<std::vector<Value>> seed_keys;
    for (const auto& s : seeds)
      seed_keys.push_back({db->tables[0].rows[s.row][0]});  // pk = id at index 0

    SqliteFixture sql_db(*db);
    for (size_t depth = 0; depth <= 3; ++depth) {
      auto expected = bfs_expand(g, seeds, depth);
      auto statements = emit_recursive_sql_statements(db->schema, spec, depth, seed_keys);
      std::vector<std::set<uint32_t>> got(g.num_relations());
      for (const auto& stmt : statements) {
        auto rows = sql_db.query_row_ids(stmt.text, stmt.relation);
        got[stmt.relation].insert(rows.begin(), rows.end());
      }
      for (size_t r = 0; r < g.num_relations(); ++r) {
        std::set<uint32_t> want(expected.per_relation[r].begin(),
                                expected.per_relation[r].end());
        CHECK(got[r] == want);
      }
    }
  }
}

TEST_CASE("batch size rule") {
  CHECK(batch_size_for(1.0, 1000) == 32);    // sqrt(1000) ~ 31.6 -> 2^5
  CHECK(batch_size_for(1.0, 4) == 16);       // clamp up
  CHECK(batch_size_for(256.0, 1000000) == 16384);  // clamp down
  CHECK(batch_size_for(2.0, 1024) == 64);
  CHECK_THROWS_AS(batch_size_for(0.5, 100), std::invalid_argument);
}
