#include "dbdl/fixture.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <stdexcept>
#include <vector>

#include "dbdl/ingest.hpp"
#include "json.hpp"

namespace dbdl {

namespace fs = std::filesystem;

std::string_view fixture_name(FixtureKind k) {
  switch (k) {
    case FixtureKind::Kinship: return "kinship";
    case FixtureKind::StarRegression: return "star_regression";
    case FixtureKind::FlatTable: return "flat_table";
    case FixtureKind::WeekdayEvents: return "weekday_events";
    case FixtureKind::TextTopics: return "text_topics";
  }
  return "?";
}

std::optional<FixtureKind> fixture_from_name(std::string_view name) {
  if (name == "kinship") return FixtureKind::Kinship;
  if (name == "star_regression") return FixtureKind::StarRegression;
  if (name == "flat_table") return FixtureKind::FlatTable;
  if (name == "weekday_events") return FixtureKind::WeekdayEvents;
  if (name == "text_topics") return FixtureKind::TextTopics;
  return std::nullopt;
}

namespace {

double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return lo + (hi - lo) * uniform01(rng);
}

std::string fmt(double v) {
  return Value::real(v).to_string();
}

struct CsvOut {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> records;
};

void write_dataset(const fs::path& dir, const std::string& manifest,
                   const std::vector<std::pair<std::string, CsvOut>>& files,
                   const std::string& rule) {
  fs::create_directories(dir);
  {
    std::ofstream out(dir / "manifest.json", std::ios::binary);
    out << manifest;
  }
  {
    std::ofstream out(dir / "rule.json", std::ios::binary);
    out << rule;
  }
  for (const auto& [name, csv] : files) write_csv((dir / name).string(), csv.header, csv.records);
}

void make_kinship(size_t size, uint64_t seed, const fs::path& dir) {
  std::mt19937_64 rng(seed);
  const size_t num_gens = 4;
  const size_t num_persons = std::max<size_t>(4 * num_gens, size / 4);

  CsvOut generation{{"id", "code"}, {}};
  for (size_t i = 0; i < num_gens; ++i)
    generation.records.push_back({std::to_string(i), "gen" + std::to_string(i)});

  std::vector<size_t> person_gen(num_persons);
  std::vector<std::vector<size_t>> by_gen(num_gens);
  CsvOut person{{"id", "gen_id", "tribe"}, {}};
  for (size_t i = 0; i < num_persons; ++i) {
    // keep every generation populated
    person_gen[i] = i < num_gens ? i : rng() % num_gens;
    by_gen[person_gen[i]].push_back(i);
    person.records.push_back({std::to_string(i), std::to_string(person_gen[i]),
                              "t" + std::to_string(rng() % 8)});
  }

  CsvOut pairs{{"id", "a", "b", "same_gen"}, {}};
  for (size_t i = 0; i < size; ++i) {
    size_t a, b;
    if (i % 2 == 0) {  // same generation
      size_t gen = rng() % num_gens;
      a = by_gen[gen][rng() % by_gen[gen].size()];
      b = by_gen[gen][rng() % by_gen[gen].size()];
    } else {
      size_t g1 = rng() % num_gens;
      size_t g2 = (g1 + 1 + rng() % (num_gens - 1)) % num_gens;
      a = by_gen[g1][rng() % by_gen[g1].size()];
      b = by_gen[g2][rng() % by_gen[g2].size()];
    }
    int label = person_gen[a] == person_gen[b] ? 1 : 0;
    pairs.records.push_back(
        {std::to_string(i), std::to_string(a), std::to_string(b), std::to_string(label)});
  }

  SchemaDef schema;
  schema.relations.resize(3);
  auto& rp = schema.relations[0];
  rp.name = "pairs";
  rp.attributes = {{"id", RawType::Integer, {}, false},
                   {"a", RawType::Integer, {}, false},
                   {"b", RawType::Integer, {}, false},
                   {"same_gen", RawType::Integer, {}, false}};
  rp.pk_attrs = {"id"};
  rp.fks = {{"pairs", {"a"}, "person"}, {"pairs", {"b"}, "person"}};
  auto& rr = schema.relations[1];
  rr.name = "person";
  rr.attributes = {{"id", RawType::Integer, {}, false},
                   {"gen_id", RawType::Integer, {}, false},
                   {"tribe", RawType::Text, {}, false}};
  rr.pk_attrs = {"id"};
  rr.fks = {{"person", {"gen_id"}, "generation"}};
  auto& rg = schema.relations[2];
  rg.name = "generation";
  rg.attributes = {{"id", RawType::Integer, {}, false}, {"code", RawType::Text, {}, false}};
  rg.pk_attrs = {"id"};

  DatasetTarget target{"pairs", "same_gen", TaskKind::Classification};
  nlohmann::ordered_json rule;
  rule["kind"] = "kinship";
  rule["label"] = "pairs.same_gen";
  rule["rule"] = "same_gen = 1 iff person(a).gen_id == person(b).gen_id";
  // generation has one row per code, so the ratio heuristic would read the
  // code column as free text; pin it to categorical
  write_dataset(dir,
                manifest_json("kinship", schema, {"pairs.csv", "person.csv", "generation.csv"},
                              target, {{"generation.code", "categorical"}}),
                {{"pairs.csv", pairs}, {"person.csv", person}, {"generation.csv", generation}},
                rule.dump(2) + "\n");
}

void make_star_regression(size_t size, uint64_t seed, const fs::path& dir) {
  std::mt19937_64 rng(seed);
  const size_t num_branches = std::max<size_t>(2, size / 50);
  const double intercept = 2.0, base_coef = 1.5, mean_coef = 3.0;

  CsvOut branch{{"id", "region"}, {}};
  for (size_t i = 0; i < num_branches; ++i)
    branch.records.push_back({std::to_string(i), "region" + std::to_string(rng() % 4)});

  CsvOut account{{"id", "branch_id", "base", "balance"}, {}};
  CsvOut txn{{"id", "account_id", "amount"}, {}};
  size_t txn_id = 0;
  for (size_t i = 0; i < size; ++i) {
    double base = uniform(rng, 0.0, 2.0);
    size_t count = rng() % 7;  // 0..6 transactions
    double sum = 0;
    for (size_t t = 0; t < count; ++t) {
      double amount = uniform(rng, 0.0, 4.0);
      sum += amount;
      txn.records.push_back({std::to_string(txn_id++), std::to_string(i), fmt(amount)});
    }
    double mean = count ? sum / static_cast<double>(count) : 0.0;
    double y = intercept + base_coef * base + mean_coef * mean;
    account.records.push_back({std::to_string(i), std::to_string(rng() % num_branches),
                               fmt(base), fmt(y)});
  }

  SchemaDef schema;
  schema.relations.resize(3);
  auto& ra = schema.relations[0];
  ra.name = "account";
  ra.attributes = {{"id", RawType::Integer, {}, false},
                   {"branch_id", RawType::Integer, {}, false},
                   {"base", RawType::Real, {}, false},
                   {"balance", RawType::Real, {}, false}};
  ra.pk_attrs = {"id"};
  ra.fks = {{"account", {"branch_id"}, "branch"}};
  auto& rb = schema.relations[1];
  rb.name = "branch";
  rb.attributes = {{"id", RawType::Integer, {}, false},
                   {"region", RawType::Text, {}, false}};
  rb.pk_attrs = {"id"};
  auto& rt = schema.relations[2];
  rt.name = "txn";
  rt.attributes = {{"id", RawType::Integer, {}, false},
                   {"account_id", RawType::Integer, {}, false},
                   {"amount", RawType::Real, {}, false}};
  rt.pk_attrs = {"id"};
  rt.fks = {{"txn", {"account_id"}, "account"}};

  DatasetTarget target{"account", "balance", TaskKind::Regression};
  nlohmann::ordered_json rule;
  rule["kind"] = "star_regression";
  rule["label"] = "account.balance";
  rule["rule"] = "balance = 2 + 1.5*base + 3*mean(txn.amount over the account's "
                 "transactions; mean of none = 0)";
  rule["intercept"] = intercept;
  rule["base_coef"] = base_coef;
  rule["mean_coef"] = mean_coef;
  write_dataset(dir,
                manifest_json("star_regression", schema,
                              {"account.csv", "branch.csv", "txn.csv"}, target),
                {{"account.csv", account}, {"branch.csv", branch}, {"txn.csv", txn}},
                rule.dump(2) + "\n");
}

void make_flat_table(size_t size, uint64_t seed, const fs::path& dir) {
  std::mt19937_64 rng(seed);
  const std::vector<double> w = {0.8, -0.6, 0.4};
  const double cat_effect = 0.5, margin = 0.1;

  CsvOut rows{{"id", "x1", "x2", "x3", "c", "label"}, {}};
  for (size_t i = 0; i < size; ++i) {
    double x1, x2, x3, score;
    size_t c;
    do {
      x1 = uniform(rng, -1, 1);
      x2 = uniform(rng, -1, 1);
      x3 = uniform(rng, -1, 1);
      c = rng() % 4;
      score = w[0] * x1 + w[1] * x2 + w[2] * x3 + (c % 2 == 1 ? cat_effect : -cat_effect);
    } while (std::abs(score) < margin);
    rows.records.push_back({std::to_string(i), fmt(x1), fmt(x2), fmt(x3),
                            std::to_string(c), score > 0 ? "1" : "0"});
  }

  SchemaDef schema;
  schema.relations.resize(1);
  auto& r = schema.relations[0];
  r.name = "rows";
  r.attributes = {{"id", RawType::Integer, {}, false}, {"x1", RawType::Real, {}, false},
                  {"x2", RawType::Real, {}, false},    {"x3", RawType::Real, {}, false},
                  {"c", RawType::Integer, {}, false},  {"label", RawType::Integer, {}, false}};
  r.pk_attrs = {"id"};

  DatasetTarget target{"rows", "label", TaskKind::Classification};
  nlohmann::ordered_json rule;
  rule["kind"] = "flat_table";
  rule["label"] = "rows.label";
  rule["rule"] = "label = 1 iff 0.8*x1 - 0.6*x2 + 0.4*x3 + (c odd ? 0.5 : -0.5) > 0; "
                 "rows within 0.1 of the boundary are resampled";
  rule["weights"] = w;
  rule["cat_effect"] = cat_effect;
  rule["margin"] = margin;
  write_dataset(dir, manifest_json("flat_table", schema, {"rows.csv"}, target),
                {{"rows.csv", rows}}, rule.dump(2) + "\n");
}

void make_weekday_events(size_t size, uint64_t seed, const fs::path& dir) {
  std::mt19937_64 rng(seed);
  CsvOut events{{"id", "at", "amount", "label"}, {}};
  for (size_t i = 0; i < size; ++i) {
    DateTime dt;
    dt.year = 2015 + static_cast<int>(rng() % 10);
    dt.month = 1 + static_cast<int>(rng() % 12);
    dt.day = 1 + static_cast<int>(rng() % 28);
    dt.hour = static_cast<int>(rng() % 24);
    dt.minute = static_cast<int>(rng() % 60);
    dt.second = static_cast<int>(rng() % 60);
    int label = dt.weekday() >= 5 ? 1 : 0;  // weekend
    events.records.push_back({std::to_string(i), dt.to_iso(), fmt(uniform(rng, -1, 1)),
                              std::to_string(label)});
  }

  SchemaDef schema;
  schema.relations.resize(1);
  auto& r = schema.relations[0];
  r.name = "events";
  r.attributes = {{"id", RawType::Integer, {}, false},
                  {"at", RawType::Timestamp, {}, false},
                  {"amount", RawType::Real, {}, false},
                  {"label", RawType::Integer, {}, false}};
  r.pk_attrs = {"id"};

  DatasetTarget target{"events", "label", TaskKind::Classification};
  nlohmann::ordered_json rule;
  rule["kind"] = "weekday_events";
  rule["label"] = "events.label";
  rule["rule"] = "label = 1 iff weekday(at) is Saturday or Sunday";
  write_dataset(dir, manifest_json("weekday_events", schema, {"events.csv"}, target),
                {{"events.csv", events}}, rule.dump(2) + "\n");
}

void make_text_topics(size_t size, uint64_t seed, const fs::path& dir) {
  std::mt19937_64 rng(seed);
  const std::vector<std::string> phrases = {
      "quarterly revenue outlook and market guidance",
      "playoff roster injuries before the championship game",
      "volcanic eruption monitoring near coastal villages",
      "orchestral premiere features a young cello soloist",
  };
  CsvOut docs{{"id", "body", "noise", "label"}, {}};
  for (size_t i = 0; i < size; ++i) {
    size_t cls = rng() % phrases.size();
    docs.records.push_back({std::to_string(i),
                            phrases[cls] + " case " + std::to_string(i),
                            fmt(uniform(rng, -1, 1)), std::to_string(cls)});
  }

  SchemaDef schema;
  schema.relations.resize(1);
  auto& r = schema.relations[0];
  r.name = "docs";
  r.attributes = {{"id", RawType::Integer, {}, false},
                  {"body", RawType::Text, {}, false},
                  {"noise", RawType::Real, {}, false},
                  {"label", RawType::Integer, {}, false}};
  r.pk_attrs = {"id"};

  DatasetTarget target{"docs", "label", TaskKind::Classification};
  nlohmann::ordered_json rule;
  rule["kind"] = "text_topics";
  rule["label"] = "docs.label";
  rule["rule"] = "label = index of the phrase family the body text starts with";
  rule["phrases"] = phrases;
  write_dataset(dir, manifest_json("text_topics", schema, {"docs.csv"}, target),
                {{"docs.csv", docs}}, rule.dump(2) + "\n");
}

}  // namespace

void make_fixture(FixtureKind kind, size_t size, uint64_t seed, const std::string& out_dir) {
  if (size < 8) throw std::invalid_argument("fixture size too small");
  fs::path dir(out_dir);
  switch (kind) {
    case FixtureKind::Kinship: make_kinship(size, seed, dir); break;
    case FixtureKind::StarRegression: make_star_regression(size, seed, dir); break;
    case FixtureKind::FlatTable: make_flat_table(size, seed, dir); break;
    case FixtureKind::WeekdayEvents: make_weekday_events(size, seed, dir); break;
    case FixtureKind::TextTopics: make_text_topics(size, seed, dir); break;
  }
}

}  // namespace dbdl
