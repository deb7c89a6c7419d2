// Command-line entry point: dataset inspection, fixture generation, graph
// export, training/search runs and metrics export.

#include <iostream>
#include <fstream>

#include "CLI11.hpp"
#include "dbdl/experiment.hpp"
#include "dbdl/fixture.hpp"
#include "dbdl/hypergraph.hpp"
#include "dbdl/ingest.hpp"

using namespace dbdl;

namespace {

struct CommonArgs {
  uint64_t seed = 0;
  bool strict_integrity = false;
};

std::optional<DatasetTarget> parse_target(const std::string& relation,
                                          const std::string& attribute,
                                          const std::string& task) {
  if (relation.empty() && attribute.empty()) return std::nullopt;
  DatasetTarget t;
  t.relation = relation;
  t.attribute = attribute;
  if (task == "classification")
    t.task = TaskKind::Classification;
  else if (task == "regression")
    t.task = TaskKind::Regression;
  else
    throw CLI::ValidationError("--task must be classification or regression");
  return t;
}

void print_integrity(const Dataset& ds) {
  if (ds.integrity.is_empty()) {
    std::cout << "integrity: ok\n";
    return;
  }
  std::cout << "integrity: " << ds.integrity.pk_violations.size() << " pk violations, "
            << ds.integrity.fk_violations.size() << " fk violations\n";
  for (const auto& v : ds.integrity.pk_violations)
    std::cout << "  pk " << ds.db->schema.relations[v.relation].name << " key "
              << v.key_repr << " rows " << v.rows.size() << "\n";
  for (const auto& v : ds.integrity.fk_violations)
    std::cout << "  fk " << ds.db->schema.relations[v.relation].name << " row " << v.row
              << " key " << v.key_repr << "\n";
}

int cmd_inspect(const std::string& path, const CommonArgs& common) {
  auto ds = ingest_dataset(path);
  std::cout << "dataset: " << ds.name << "\n";
  for (const auto& rel : ds.db->schema.relations) {
    std::cout << "relation " << rel.name << " ("
              << ds.db->tables[ds.db->schema.relation_index(rel.name)].rows.size()
              << " rows)\n";
    for (const auto& attr : rel.attributes) {
      std::cout << "  " << attr.name << ": " << raw_type_name(attr.raw) << " -> "
                << semantic_kind_name(attr.semantic.kind);
      if (attr.semantic.kind == SemanticKind::Categorical)
        std::cout << "(" << attr.semantic.cardinality << ")";
      std::cout << "\n";
    }
    for (const auto& fk : rel.fks) {
      std::cout << "  fk (";
      for (size_t i = 0; i < fk.source_attrs.size(); ++i)
        std::cout << (i ? "," : "") << fk.source_attrs[i];
      std::cout << ") -> " << fk.target_relation << "\n";
    }
  }
  if (ds.target)
    std::cout << "target: " << ds.target->relation << "." << ds.target->attribute << " ("
              << (ds.target->task == TaskKind::Classification ? "classification"
                                                              : "regression")
              << ")\n";
  for (const auto& w : ds.warnings) std::cout << "warning: " << w << "\n";
  print_integrity(ds);
  if (common.strict_integrity && !ds.integrity.is_empty()) return 1;
  return 0;
}

int cmd_build_graph(const std::string& path, const std::string& export_path, bool stats,
                    const CommonArgs& common) {
  auto ds = ingest_dataset(path);
  print_integrity(ds);
  auto g = build_hypergraph(ds.db, common.strict_integrity ? FkEdgePolicy::Strict
                                                           : FkEdgePolicy::Drop);
  std::cout << "graph: " << g.num_relations() << " relations, " << g.fks.size()
            << " fk edge types\n";
  if (stats) {
    size_t target = ds.target ? g.schema().relation_index(ds.target->relation) : 0;
    auto st = graph_stats(g, target);
    std::cout << "num_relations " << st.num_relations << "\n"
              << "num_edge_types " << st.num_edge_types << "\n"
              << "num_target_feature_cols " << st.num_target_feature_cols << "\n"
              << "avg_target_edges " << st.avg_target_edges << "\n"
              << "total_rows " << st.total_rows << "\n"
              << "total_edges " << st.total_edges << "\n"
              << "has_text_col " << (st.has_text_col ? "true" : "false") << "\n"
              << "has_time_col " << (st.has_time_col ? "true" : "false") << "\n";
  }
  if (!export_path.empty()) {
    std::ofstream out(export_path);
    if (!out) {
      std::cerr << "cannot write " << export_path << "\n";
      return 1;
    }
    export_graph_text(g, out);
    std::cout << "graph written to " << export_path << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Deep learning directly from relational databases"};
  app.require_subcommand(1);
  app.fallthrough();  // global flags may follow the subcommand

  CommonArgs common;
  app.add_option("--seed", common.seed, "random seed for every stochastic stage");
  app.add_flag("--strict-integrity", common.strict_integrity,
               "fail on referential integrity violations");

  std::string dataset, out_dir, export_path, kind_name = "kinship";
  std::string model_name = "dbformer", fixed_config, sidecar;
  std::string target_relation, target_attr, task_name = "classification";
  size_t size = 1000, trials = 16;
  bool stats = false;

  ModelSpec model;
  TrainConfig train_cfg;

  auto* inspect = app.add_subcommand("inspect-schema", "ingest and print the schema");
  inspect->add_option("dataset", dataset)->required();

  auto* build = app.add_subcommand("build-graph", "build the hypergraph");
  build->add_option("dataset", dataset)->required();
  build->add_option("--export", export_path, "write NODE/EDGE lines to a file");
  build->add_flag("--stats", stats, "print dataset statistics");

  auto* fixture = app.add_subcommand("make-fixture", "generate a synthetic dataset");
  fixture->add_option("--kind", kind_name,
                      "kinship|star_regression|flat_table|weekday_events|text_topics");
  fixture->add_option("--size", size, "target relation row count");
  fixture->add_option("--out", out_dir)->required();

  auto add_model_options = [&](CLI::App* cmd) {
    cmd->add_option("dataset", dataset)->required();
    cmd->add_option("--model", model_name, "dbformer|dbgnn|db_tabtransformer|tabular_fnn");
    cmd->add_option("--config", fixed_config, "small|medium|large fixed configuration");
    cmd->add_option("--dim", model.dim);
    cmd->add_option("--layers", model.layers);
    cmd->add_option("--heads", model.heads);
    cmd->add_option("--dropout", model.dropout);
    cmd->add_option("--decoder-layers", model.decoder_layers);
    cmd->add_option("--decoder-hidden", model.decoder_hidden);
    cmd->add_flag("--batch-norm", model.decoder_batch_norm);
    cmd->add_flag("--text", model.use_text, "embed text attributes");
    cmd->add_flag("--time", model.use_time, "embed timestamp attributes");
    cmd->add_option("--lr", train_cfg.lr);
    cmd->add_option("--steps", train_cfg.steps);
    cmd->add_option("--batch-scale", train_cfg.batch_scale);
    cmd->add_option("--eval-every", train_cfg.eval_every);
    cmd->add_option("--wall-limit", train_cfg.wall_limit_seconds,
                    "wall-clock cap in seconds (0 = off)");
    cmd->add_option("--sidecar", sidecar, "precomputed text vector file");
    cmd->add_option("--target-relation", target_relation);
    cmd->add_option("--target-attr", target_attr);
    cmd->add_option("--task", task_name, "classification|regression");
    cmd->add_option("--out", out_dir)->required();
  };

  auto* train = app.add_subcommand("train", "one training run");
  add_model_options(train);

  auto* search = app.add_subcommand("search", "hyperparameter random search");
  add_model_options(search);
  search->add_option("--trials", trials);

  auto* export_cmd = app.add_subcommand("export", "print the metric summary of a run");
  export_cmd->add_option("run_dir", out_dir)->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (inspect->parsed()) return cmd_inspect(dataset, common);
    if (build->parsed()) return cmd_build_graph(dataset, export_path, stats, common);
    if (fixture->parsed()) {
      auto kind = fixture_from_name(kind_name);
      if (!kind) {
        std::cerr << "unknown fixture kind: " << kind_name << "\n";
        return 1;
      }
      make_fixture(*kind, size, common.seed, out_dir);
      std::cout << "fixture " << kind_name << " written to " << out_dir << "\n";
      return 0;
    }
    if (export_cmd->parsed()) {
      std::cout << export_metrics(out_dir);
      return 0;
    }
    if (train->parsed() || search->parsed()) {
      ExperimentOptions opt;
      auto kind = assembly_from_name(model_name);
      if (!kind) {
        std::cerr << "unknown model: " << model_name << "\n";
        return 1;
      }
      if (!fixed_config.empty()) {
        bool found = false;
        for (const auto& fc : fixed_configs()) {
          if (fc.name == fixed_config) {
            model = fc.model;
            train_cfg.lr = fc.train.lr;
            found = true;
          }
        }
        if (!found) {
          std::cerr << "unknown fixed config: " << fixed_config << "\n";
          return 1;
        }
      }
      model.kind = *kind;
      opt.model = model;
      opt.train = train_cfg;
      opt.train.seed = common.seed;
      opt.strict_integrity = common.strict_integrity;
      opt.target_override = parse_target(target_relation, target_attr, task_name);
      if (!sidecar.empty()) opt.text_sidecar = sidecar;
      if (search->parsed()) {
        opt.search = true;
        opt.space.trials = trials;
      }
      auto result = run_experiment(dataset, opt, out_dir);
      std::cout << export_metrics(out_dir);
      std::cout << "artifact written to " << out_dir << "\n";
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
