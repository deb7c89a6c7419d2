#include "dbdl/experiment.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "dbdl/hypergraph.hpp"
#include "json.hpp"

namespace dbdl {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << content;
}

std::string run_config_json(const std::string& dataset_name, const DatasetTarget& target,
                            const RunRecord& rec) {
  ordered_json j;
  j["dataset"] = dataset_name;
  j["target"] = {{"relation", target.relation},
                 {"attribute", target.attribute},
                 {"task", target.task == TaskKind::Classification ? "classification"
                                                                  : "regression"}};
  j["model"] = ordered_json::parse(rec.model.to_json());
  j["train"] = {{"lr", rec.config.lr},
                {"batch_scale", rec.config.batch_scale},
                {"batch", rec.batch_size},
                {"steps", rec.config.steps},
                {"eval_every", rec.config.eval_every},
                {"seed", rec.config.seed}};
  return j.dump(2) + "\n";
}

void write_run_files(const fs::path& dir, const std::string& dataset_name,
                     const DatasetTarget& target, const RunRecord& rec) {
  fs::create_directories(dir);
  write_file(dir / "config.json", run_config_json(dataset_name, target, rec));
  {
    std::ostringstream log;
    rec.write_log(log);
    write_file(dir / "metrics.log", log.str());
  }
  {
    std::ostringstream preds;
    rec.write_predictions(preds);
    write_file(dir / "predictions.tsv", preds.str());
  }
  if (!rec.final_params.empty()) {
    std::vector<NamedParam> params;
    params.reserve(rec.final_params.size());
    for (const auto& [name, tensor] : rec.final_params)
      params.push_back({name, Var(tensor)});
    save_checkpoint((dir / "checkpoint.bin").string(), params);
  }
}

struct ParsedRun {
  ordered_json config;
  size_t best_step = 0;
  double best_metric = 0;
  double train_target_mean = 0;
  bool diverged = false;
  std::vector<std::pair<double, double>> predictions;  // label, prediction
};

ParsedRun parse_run(const fs::path& dir) {
  ParsedRun run;
  {
    std::ifstream in(dir / "config.json");
    if (!in) throw std::runtime_error("artifact incomplete: missing " +
                                      (dir / "config.json").string());
    run.config = ordered_json::parse(in);
  }
  {
    std::ifstream in(dir / "metrics.log");
    if (!in) throw std::runtime_error("artifact incomplete: missing " +
                                      (dir / "metrics.log").string());
    std::string line;
    bool saw_best = false;
    while (std::getline(in, line)) {
      std::istringstream ss(line);
      std::string tag;
      ss >> tag;
      if (tag == "meta") {
        std::string key;
        ss >> key >> run.train_target_mean;
      } else if (tag == "best") {
        std::string word;
        ss >> word >> run.best_step >> word >> run.best_metric;
        if (ss >> word && word == "diverged") run.diverged = true;
        saw_best = true;
      }
    }
    if (!saw_best)
      throw std::runtime_error("artifact incomplete: no best line in metrics.log");
  }
  {
    std::ifstream in(dir / "predictions.tsv");
    if (!in) throw std::runtime_error("artifact incomplete: missing " +
                                      (dir / "predictions.tsv").string());
    size_t idx;
    double label, pred;
    while (in >> idx >> label >> pred) run.predictions.emplace_back(label, pred);
  }
  return run;
}

double recompute_metric(const ParsedRun& run) {
  std::vector<double> labels, preds;
  for (auto [l, p] : run.predictions) {
    labels.push_back(l);
    preds.push_back(p);
  }
  auto task = run.config.at("target").at("task").get<std::string>();
  if (task == "classification") {
    std::vector<size_t> li, pi;
    for (size_t i = 0; i < labels.size(); ++i) {
      li.push_back(static_cast<size_t>(labels[i]));
      pi.push_back(static_cast<size_t>(preds[i]));
    }
    return accuracy(pi, li);
  }
  return nrmse(labels, preds, run.train_target_mean);
}

}  // namespace

ExperimentResult run_experiment(const std::string& dataset_path,
                                const ExperimentOptions& options,
                                const std::string& out_dir) {
  auto ds = ingest_dataset(dataset_path, options.target_override);
  if (!ds.target)
    throw std::runtime_error("dataset declares no prediction target; pass one explicitly");
  if (!ds.integrity.is_empty() && options.strict_integrity)
    throw std::runtime_error("integrity violations: " +
                             std::to_string(ds.integrity.pk_violations.size()) + " pk, " +
                             std::to_string(ds.integrity.fk_violations.size()) + " fk");

  auto g = build_hypergraph(ds.db, options.strict_integrity ? FkEdgePolicy::Strict
                                                            : FkEdgePolicy::Drop);

  TaskSpec task;
  task.kind = ds.target->task;
  task.target_relation = g.schema().relation_index(ds.target->relation);
  task.target_attr = ds.target->attribute;

  SampleSpec sample;
  sample.target_relation = task.target_relation;
  sample.target_attr = task.target_attr;
  sample.task = task.kind;

  TextVectorSource text = options.text_sidecar
                              ? TextVectorSource::load_sidecar(*options.text_sidecar,
                                                               options.model.text_dim)
                              : TextVectorSource::hashing(options.model.text_dim);

  ExperimentResult result;
  result.out_dir = out_dir;
  if (options.search) {
    result.search =
        random_search(g, sample, task, options.model, options.train, options.space, text);
    result.best_index = result.search.best_index;
  } else {
    result.search.runs.push_back(
        train_loop(g, sample, task, options.model, options.train, text));
    result.search.best_index = 0;
    result.best_index = 0;
  }

  fs::path dir(out_dir);
  fs::create_directories(dir);
  if (options.search) {
    std::ostringstream combined;
    for (size_t i = 0; i < result.search.runs.size(); ++i) {
      char trial_name[32];
      std::snprintf(trial_name, sizeof trial_name, "trial_%02zu", i);
      write_run_files(dir / trial_name, ds.name, *ds.target, result.search.runs[i]);
      combined << "trial " << i << "\n";
      result.search.runs[i].write_log(combined);
    }
    write_file(dir / "metrics.log", combined.str());
    ordered_json j;
    j["dataset"] = ds.name;
    j["search"] = true;
    j["trials"] = result.search.runs.size();
    j["best_trial"] = result.search.best_index;
    write_file(dir / "config.json", j.dump(2) + "\n");
    // persist the winning parameters at the top level
    const auto& best = result.search.runs[result.search.best_index];
    if (!best.final_params.empty()) {
      std::vector<NamedParam> params;
      for (const auto& [name, tensor] : best.final_params)
        params.push_back({name, Var(tensor)});
      save_checkpoint((dir / "checkpoint.bin").string(), params);
    }
  } else {
    write_run_files(dir, ds.name, *ds.target, result.search.runs[0]);
  }

  std::ostringstream summary;
  summary << export_metrics(out_dir);
  double wall = 0;
  for (const auto& r : result.search.runs) wall += r.wall_seconds;
  summary << "wall_seconds " << fmt_double(wall) << "\n";
  write_file(dir / "summary.txt", summary.str());
  return result;
}

std::string export_metrics(const std::string& artifact_dir) {
  fs::path dir(artifact_dir);
  std::vector<fs::path> run_dirs;
  bool is_search = fs::exists(dir / "trial_00");
  if (is_search) {
    for (size_t i = 0;; ++i) {
      char trial_name[32];
      std::snprintf(trial_name, sizeof trial_name, "trial_%02zu", i);
      if (!fs::exists(dir / trial_name)) break;
      run_dirs.push_back(dir / trial_name);
    }
  } else {
    run_dirs.push_back(dir);
  }
  if (run_dirs.empty()) throw std::runtime_error("artifact has no runs: " + artifact_dir);

  std::vector<ParsedRun> runs;
  for (const auto& rd : run_dirs) runs.push_back(parse_run(rd));

  size_t best = 0;
  for (size_t i = 1; i < runs.size(); ++i) {
    bool classification =
        runs[i].config.at("target").at("task").get<std::string>() == "classification";
    if (classification ? runs[i].best_metric > runs[best].best_metric
                       : runs[i].best_metric < runs[best].best_metric)
      best = i;
  }

  std::ostringstream out;
  out << "run model dim layers heads M bn lr batch best_step metric recomputed best\n";
  for (size_t i = 0; i < runs.size(); ++i) {
    const auto& model = runs[i].config.at("model");
    const auto& train = runs[i].config.at("train");
    out << i << " " << model.at("model").get<std::string>() << " "
        << model.at("dim").get<size_t>() << " " << model.at("layers").get<size_t>() << " "
        << model.at("heads").get<size_t>() << " "
        << model.at("decoder_layers").get<size_t>() << " "
        << (model.at("decoder_batch_norm").get<bool>() ? 1 : 0) << " "
        << fmt_double(train.at("lr").get<double>()) << " "
        << train.at("batch").get<size_t>() << " " << runs[i].best_step << " "
        << fmt_double(runs[i].best_metric) << " ";
    if (runs[i].diverged)
      out << "diverged";
    else
      out << fmt_double(recompute_metric(runs[i]));
    out << (i == best ? " *" : "") << "\n";
  }
  return out.str();
}

}  // namespace dbdl
