#pragma once

#include <optional>
#include <string>

#include "dbdl/ingest.hpp"
#include "dbdl/train.hpp"

namespace dbdl {

/// One experiment invocation: ingest -> detect -> build graph -> split ->
/// train or search, writing a reproducible artifact directory.
struct ExperimentOptions {
  ModelSpec model;
  TrainConfig train;
  bool search = false;
  SearchSpace space;
  bool strict_integrity = false;
  std::optional<DatasetTarget> target_override;
  std::optional<std::string> text_sidecar;
};

struct ExperimentResult {
  std::string out_dir;
  SearchResult search;  // single runs live in runs[0]
  size_t best_index = 0;
};

ExperimentResult run_experiment(const std::string& dataset_path,
                                const ExperimentOptions& options,
                                const std::string& out_dir);

/// Renders the artifact's summary table: one row per run with the stored
/// best metric and a metric recomputed from the prediction dump, best row
/// marked with '*'.
std::string export_metrics(const std::string& artifact_dir);

}  // namespace dbdl
