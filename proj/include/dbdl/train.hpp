#pragma once

#include <array>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "dbdl/scheme.hpp"

namespace dbdl {

struct TaskSpec {
  TaskKind kind = TaskKind::Classification;
  size_t num_classes = 0;  // classification only, >= 2
  size_t target_relation = 0;
  std::string target_attr;
};

/// Optimization settings; the architecture lives in ModelSpec.
struct TrainConfig {
  double lr = 0.0001;
  double batch_scale = 1.0;   // batch = nearest power of two to scale*sqrt(rows)
  size_t steps = 4000;
  size_t eval_every = 50;
  uint64_t seed = 0;
  std::vector<size_t> fanout = {32};
  double wall_limit_seconds = 0.0;  // 0 = no wall-clock cap
};

/// Dense label indices for classification targets, built from the full
/// target column and persisted with the run.
struct LabelCodec {
  CategoryVocab vocab;

  static LabelCodec from_database(const Database& db, size_t target_relation,
                                  size_t target_attr);
  size_t num_classes() const { return vocab.size(); }
  size_t encode(const Value& v) const;  // throws on null or unknown labels
};

/// Flatten -> M-layer FNN with ReLU (and optional batch norm) between
/// hidden layers; a single linear map when layers == 1.
class DecoderHead {
 public:
  DecoderHead(size_t in_dim, size_t out_dim, size_t layers, size_t hidden, bool use_bn,
              std::mt19937_64& rng);

  Var forward(const Var& x, bool training);
  size_t out_dim() const { return out_dim_; }
  void collect(std::vector<NamedParam>& out) const;

 private:
  std::vector<Var> w_, b_;
  std::vector<BatchNorm> bn_;
  bool use_bn_;
  size_t out_dim_;
};

double rmse(std::span<const double> y, std::span<const double> yhat);
/// RMSE divided by the mean of the training targets; the mean must be
/// nonzero.
double nrmse(std::span<const double> y, std::span<const double> yhat, double ybar_train);
double accuracy(std::span<const size_t> pred, std::span<const size_t> labels);

struct TrainDivergence : std::runtime_error {
  explicit TrainDivergence(const std::string& what) : std::runtime_error(what) {}
};

struct StepLog {
  size_t step;
  double train_loss;
};

struct EvalLog {
  size_t step;
  double val_loss;
  double val_metric;  // accuracy or nrmse
};

struct RunRecord {
  ModelSpec model;
  TrainConfig config;
  size_t batch_size = 0;
  std::vector<StepLog> steps;
  std::vector<EvalLog> evals;
  double best_val_metric = 0.0;
  size_t best_step = 0;
  double train_target_mean = 0.0;  // regression
  bool diverged = false;
  double wall_seconds = 0.0;  // reporting only, kept out of the metric log

  // predictions of the best checkpoint on the validation seeds
  std::vector<double> val_labels;       // encoded class index or raw value
  std::vector<double> val_predictions;  // predicted class index or raw value

  // best-checkpoint parameter snapshot, for persisting the run
  std::vector<std::pair<std::string, Tensor>> final_params;

  /// Deterministic line-oriented log (no wall time).
  void write_log(std::ostream& out) const;
  /// One "index label prediction" line per validation seed.
  void write_predictions(std::ostream& out) const;
};

bool metric_improves(double candidate, double incumbent, TaskKind kind);

RunRecord train_loop(const HeteroGraph& g, const SampleSpec& sample, const TaskSpec& task,
                     const ModelSpec& mspec, const TrainConfig& config,
                     const TextVectorSource& text = TextVectorSource::hashing());

/// Hyperparameter search space; samples are drawn uniformly per the declared
/// distributions (log-uniform lr, exponential batch scale).
struct SearchSpace {
  double lr_min = 0.00005;
  double lr_max = 0.002;
  double batch_scale_min = 1.0;
  double batch_scale_max = 256.0;  // 2^8
  std::vector<size_t> dims = {16, 32, 64};
  size_t layers_min = 1;
  size_t layers_max = 5;
  std::vector<size_t> decoder_layers = {1, 2, 3};
  size_t trials = 16;
};

struct SampledConfig {
  ModelSpec model;
  TrainConfig train;
};

/// Draws one configuration from the space; trial_index advances the stream.
SampledConfig sample_config(const SearchSpace& space, const ModelSpec& base_model,
                            const TrainConfig& base_train, uint64_t seed,
                            size_t trial_index);

struct SearchResult {
  std::vector<RunRecord> runs;
  size_t best_index = 0;
};

/// Uniform random search over the space: `space.trials` full training runs,
/// best validation metric wins (max accuracy / min nrmse). Diverged trials
/// are kept in the record with the worst possible metric.
SearchResult random_search(const HeteroGraph& g, const SampleSpec& sample,
                           const TaskSpec& task, const ModelSpec& base_model,
                           const TrainConfig& base_train, const SearchSpace& space,
                           const TextVectorSource& text = TextVectorSource::hashing());

struct FixedConfig {
  std::string name;
  ModelSpec model;
  TrainConfig train;
};

/// The three fixed configurations (Large/Medium/Small).
std::array<FixedConfig, 3> fixed_configs();

/// Forward + decode a fixed seed list with frozen weights; returns raw
/// decoder outputs row-major (one row per seed).
std::vector<std::vector<double>> predict_seeds(Model& model, DecoderHead& decoder,
                                               const HeteroGraph& g,
                                               const SampleSpec& sample,
                                               const std::vector<NodeRef>& seeds,
                                               size_t depth, size_t chunk = 256);

}  // namespace dbdl
