#include <algorithm>
#include <random>
#include <set>
#include <sstream>

#include "dbdl/hypergraph.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace dbdl;
using namespace dbdl::testutil;

TEST_CASE("single relation, no fks") {
  auto db = std::make_shared<Database>();
  db->schema.relations = {relation("only", {attr("id", RawType::Integer)}, {"id"})};
  db->tables.resize(1);
  for (int i = 0; i < 5; ++i) db->tables[0].rows.push_back({Value::integer(i)});
  auto g = build_hypergraph(db);
  CHECK(g.num_relations() == 1);
  CHECK(g.relation_rows(0) == 5);
  CHECK(g.num_edge_types() == 0);
}

TEST_CASE("forward and reverse edges from fk matches") {
  auto db = two_relation_db({{1, 0}, {2, 0}}, {0});
  auto g = build_hypergraph(db);
  REQUIRE(g.num_edge_types() == 2);
  using P = std::pair<uint32_t, uint32_t>;
  CHECK(g.adjacency[0].pairs == std::vector<P>{{0, 0}, {1, 0}});
  CHECK(g.adjacency[1].pairs == std::vector<P>{{0, 0}, {0, 1}});
  CHECK(g.adjacency[1].degree(0) == 2);
  CHECK(g.src_relation(0) == 0);
  CHECK(g.dst_relation(0) == 1);
  CHECK(g.src_relation(1) == 1);
}

TEST_CASE("self-referencing chain") {
  auto db = std::make_shared<Database>();
  db->schema.relations = {relation(
      "t", {attr("id", RawType::Integer), attr("parent", RawType::Integer)}, {"id"},
      {fk("t", {"parent"}, "t")})};
  db->tables.resize(1);
  db->tables[0].rows = {{Value::integer(0), Value::integer(1)},
                        {Value::integer(1), Value::integer(2)},
                        {Value::integer(2), Value::null()}};
  auto g = build_hypergraph(db);
  CHECK(g.adjacency[0].pairs.size() == 2);
  CHECK(g.adjacency[1].pairs.size() == 2);
  using P = std::pair<uint32_t, uint32_t>;
  CHECK(g.adjacency[0].pairs == std::vector<P>{{0, 1}, {1, 2}});
  CHECK(g.adjacency[1].pairs == std::vector<P>{{1, 0}, {2, 1}});
}

TEST_CASE("strict vs drop policy on dangling fk") {
  auto db = two_relation_db({{1, 9}}, {0});
  CHECK_THROWS_AS(build_hypergraph(db, FkEdgePolicy::Strict), std::runtime_error);
  std::vector<std::string> warnings;
  auto g = build_hypergraph(db, FkEdgePolicy::Drop, &warnings);
  CHECK(g.adjacency[0].pairs.empty());
  CHECK(warnings.size() == 1);
}

TEST_CASE("edge mirror symmetry and key-match soundness on random fixtures") {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 15; ++trial) {
    auto db = random_db(rng, 4, 10, trial % 3 == 0);
    auto g = build_hypergraph(db);
    for (size_t f = 0; f < g.fks.size(); ++f) {
      const auto& fwd = g.adjacency[f * 2].pairs;
      const auto& rev = g.adjacency[f * 2 + 1].pairs;
      CHECK(fwd.size() == rev.size());
      std::set<std::pair<uint32_t, uint32_t>> mirrored;
      for (auto [s, d] : rev) mirrored.insert({d, s});
      std::set<std::pair<uint32_t, uint32_t>> forward(fwd.begin(), fwd.end());
      CHECK(forward == mirrored);

      // every forward edge joins matching fk/pk cell values
      const auto& rfk = g.fks[f];
      for (auto [s, d] : fwd) {
        const auto& srow = db->tables[rfk.source_relation].rows[s];
        const auto& drow = db->tables[rfk.target_relation].rows[d];
        for (size_t k = 0; k < rfk.source_attrs.size(); ++k)
          CHECK(srow[rfk.source_attrs[k]] == drow[rfk.target_attrs[k]]);
      }

      // exhaustive join enumeration oracle: edge count equals match count
      size_t matches = 0;
      for (const auto& srow : db->tables[rfk.source_relation].rows) {
        bool any_null = false;
        for (size_t k : rfk.source_attrs) any_null = any_null || srow[k].is_null();
        if (any_null) continue;
        for (const auto& drow : db->tables[rfk.target_relation].rows) {
          bool match = true;
          for (size_t k = 0; k < rfk.source_attrs.size(); ++k)
            if (!(srow[rfk.source_attrs[k]] == drow[rfk.target_attrs[k]])) match = false;
          if (match) ++matches;
        }
      }
      CHECK(fwd.size() == matches);
    }
  }
}

TEST_CASE("row permutation covariance") {
  std::mt19937_64 rng(57);
  auto db = random_db(rng, 3, 9);
  auto g = build_hypergraph(db);

  // permute rows of relation 1 and rebuild; edges must follow the relabeling
  auto permuted = std::make_shared<Database>(*db);
  size_t rel = 1;
  size_t n = permuted->tables[rel].rows.size();
  std::vector<uint32_t> perm(n);
  for (size_t i = 0; i < n; ++i) perm[i] = static_cast<uint32_t>(i);
  std::shuffle(perm.begin(), perm.end(), rng);  // perm[new_pos] = old_pos
  std::vector<Row> new_rows(n);
  for (size_t i = 0; i < n; ++i) new_rows[i] = permuted->tables[rel].rows[perm[i]];
  permuted->tables[rel].rows = new_rows;

  // pk values moved with the rows, so fk matches still hold
  auto g2 = build_hypergraph(permuted);
  std::vector<uint32_t> old_to_new(n);
  for (size_t i = 0; i < n; ++i) old_to_new[perm[i]] = static_cast<uint32_t>(i);

  for (uint32_t et = 0; et < g.num_edge_types(); ++et) {
    std::set<std::pair<uint32_t, uint32_t>> expected;
    for (auto [s, d] : g.adjacency[et].pairs) {
      uint32_t s2 = g.src_relation(et) == rel ? old_to_new[s] : s;
      uint32_t d2 = g.dst_relation(et) == rel ? old_to_new[d] : d;
      expected.insert({s2, d2});
    }
    std::set<std::pair<uint32_t, uint32_t>> actual(g2.adjacency[et].pairs.begin(),
                                                   g2.adjacency[et].pairs.end());
    CHECK(expected == actual);
  }
}

TEST_CASE("graph stats") {
  // star schema: 1 fact with 10 rows, 2 dims, 1 fk to each
  auto db = std::make_shared<Database>();
  db->schema.relations = {
      relation("fact",
               {attr("id", RawType::Integer), attr("d1", RawType::Integer),
                attr("d2", RawType::Integer), attr("value", RawType::Real)},
               {"id"}, {fk("fact", {"d1"}, "dim1"), fk("fact", {"d2"}, "dim2")}),
      relation("dim1", {attr("id", RawType::Integer), attr("txt", RawType::Text)}, {"id"}),
      relation("dim2", {attr("id", RawType::Integer), attr("ts", RawType::Timestamp)},
               {"id"}),
  };
  db->tables.resize(3);
  for (int i = 0; i < 10; ++i)
    db->tables[0].rows.push_back({Value::integer(i), Value::integer(i % 2),
                                  Value::integer(i % 3), Value::real(i * 1.0)});
  for (int i = 0; i < 2; ++i)
    db->tables[1].rows.push_back(
        {Value::integer(i), Value::text("some longer text value d" + std::to_string(i))});
  for (int i = 0; i < 3; ++i)
    db->tables[2].rows.push_back(
        {Value::integer(i), Value::timestamp({2020, 1, 1 + i, 0, 0, 0})});
  db->schema = detect_schema(*db);
  auto g = build_hypergraph(std::shared_ptr<const Database>(db));
  auto st = graph_stats(g, 0);
  CHECK(st.num_relations == 3);
  CHECK(st.num_edge_types == 2);
  CHECK(st.num_target_feature_cols == 1);
  CHECK(st.avg_target_edges == doctest::Approx(2.0));
  CHECK(st.total_rows == 15);
  CHECK(st.total_edges == 20);
  CHECK(st.has_text_col);
  CHECK(st.has_time_col);

  CHECK_THROWS_AS(graph_stats(g, 9), std::invalid_argument);

  // empty database
  auto empty = std::make_shared<Database>();
  empty->schema.relations = {relation("t", {attr("id", RawType::Integer)}, {"id"})};
  empty->tables.resize(1);
  auto eg = build_hypergraph(empty);
  auto est = graph_stats(eg, 0);
  CHECK(est.total_rows == 0);
  CHECK(est.total_edges == 0);
  CHECK_FALSE(est.has_text_col);
}

TEST_CASE("graph text export") {
  auto db = two_relation_db({{1, 0}}, {0});
  auto g = build_hypergraph(db);
  std::ostringstream out;
  export_graph_text(g, out);
  std::string text = out.str();
  CHECK(text.find("NODE 0 0") != std::string::npos);
  CHECK(text.find("EDGE 0 fwd 0 0 1 0") != std::string::npos);
  CHECK(text.find("EDGE 0 rev 1 0 0 0") != std::string::npos);
}
