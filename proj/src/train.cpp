#include "dbdl/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <stdexcept>

namespace dbdl {

namespace {

uint64_t mix(uint64_t x) {
  // splitmix64 finalizer
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

uint64_t derive_seed(uint64_t seed, uint64_t stream, uint64_t index) {
  return mix(seed ^ mix(stream) ^ mix(index * 0x2545f4914f6cdd1dull + 17));
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

}  // namespace

LabelCodec LabelCodec::from_database(const Database& db, size_t target_relation,
                                     size_t target_attr) {
  LabelCodec codec;
  codec.vocab = CategoryVocab::from_column(db.tables[target_relation], target_attr);
  return codec;
}

size_t LabelCodec::encode(const Value& v) const {
  size_t idx = vocab.index_of(v);
  if (idx >= vocab.size())
    throw std::invalid_argument("label value outside the training vocabulary: '" +
                                v.to_string() + "'");
  return idx;
}

DecoderHead::DecoderHead(size_t in_dim, size_t out_dim, size_t layers, size_t hidden,
                         bool use_bn, std::mt19937_64& rng)
    : use_bn_(use_bn), out_dim_(out_dim) {
  if (layers == 0) throw std::invalid_argument("decoder needs at least one layer");
  size_t cur = in_dim;
  for (size_t l = 0; l + 1 < layers; ++l) {
    w_.emplace_back(glorot_uniform(hidden, cur, rng), true);
    b_.emplace_back(Tensor({1, hidden}), true);
    if (use_bn_) bn_.emplace_back(hidden);
    cur = hidden;
  }
  w_.emplace_back(glorot_uniform(out_dim, cur, rng), true);
  b_.emplace_back(Tensor({1, out_dim}), true);
}

Var DecoderHead::forward(const Var& x, bool training) {
  Var h = x;
  for (size_t l = 0; l + 1 < w_.size(); ++l) {
    h = ops::relu(ops::add_rowvec(ops::matmul(h, w_[l], false, true), b_[l]));
    if (use_bn_) h = bn_[l].forward(h, training && h.value().rows() >= 2);
  }
  return ops::add_rowvec(ops::matmul(h, w_.back(), false, true), b_.back());
}

void DecoderHead::collect(std::vector<NamedParam>& out) const {
  for (size_t l = 0; l < w_.size(); ++l) {
    out.push_back({"decoder/w" + std::to_string(l), w_[l]});
    out.push_back({"decoder/b" + std::to_string(l), b_[l]});
  }
  for (size_t l = 0; l < bn_.size(); ++l) {
    out.push_back({"decoder/bn" + std::to_string(l) + "_gain", bn_[l].gain});
    out.push_back({"decoder/bn" + std::to_string(l) + "_bias", bn_[l].bias});
  }
}

double rmse(std::span<const double> y, std::span<const double> yhat) {
  if (y.size() != yhat.size() || y.empty())
    throw std::invalid_argument("rmse: length mismatch");
  double sum = 0;
  for (size_t i = 0; i < y.size(); ++i) {
    double d = y[i] - yhat[i];
    sum += d * d;
  }
  return std::sqrt(sum / static_cast<double>(y.size()));
}

double nrmse(std::span<const double> y, std::span<const double> yhat, double ybar_train) {
  if (ybar_train == 0.0)
    throw std::invalid_argument("nrmse: training target mean is zero");
  return rmse(y, yhat) / ybar_train;
}

double accuracy(std::span<const size_t> pred, std::span<const size_t> labels) {
  if (pred.size() != labels.size() || pred.empty())
    throw std::invalid_argument("accuracy: length mismatch");
  size_t hits = 0;
  for (size_t i = 0; i < pred.size(); ++i)
    if (pred[i] == labels[i]) ++hits;
  return static_cast<double>(hits) / static_cast<double>(pred.size());
}

bool metric_improves(double candidate, double incumbent, TaskKind kind) {
  return kind == TaskKind::Classification ? candidate > incumbent : candidate < incumbent;
}

void RunRecord::write_log(std::ostream& out) const {
  out << "config model=" << assembly_name(model.kind) << " lr=" << fmt_double(config.lr)
      << " batch_scale=" << fmt_double(config.batch_scale) << " batch=" << batch_size
      << " dim=" << model.dim << " layers=" << model.layers << " heads=" << model.heads
      << " decoder_layers=" << model.decoder_layers
      << " decoder_hidden=" << model.decoder_hidden
      << " batch_norm=" << (model.decoder_batch_norm ? 1 : 0)
      << " dropout=" << fmt_double(model.dropout) << " steps=" << config.steps
      << " seed=" << config.seed << "\n";
  for (const auto& s : steps)
    out << "step " << s.step << " train_loss " << fmt_double(s.train_loss) << "\n";
  for (const auto& e : evals)
    out << "eval " << e.step << " val_loss " << fmt_double(e.val_loss) << " val_metric "
        << fmt_double(e.val_metric) << "\n";
  out << "meta train_target_mean " << fmt_double(train_target_mean) << "\n";
  out << "best step " << best_step << " metric " << fmt_double(best_val_metric)
      << (diverged ? " diverged" : "") << "\n";
}

void RunRecord::write_predictions(std::ostream& out) const {
  for (size_t i = 0; i < val_labels.size(); ++i)
    out << i << " " << fmt_double(val_labels[i]) << " " << fmt_double(val_predictions[i])
        << "\n";
}

namespace {

struct Pipeline {
  Model model;
  DecoderHead decoder;
  std::vector<NamedParam> params;

  Pipeline(const ModelSpec& mspec, const HeteroGraph& g, const TaskSpec& task,
           const TextVectorSource& text, uint64_t seed, size_t out_dim)
      : model(mspec, g, task.target_relation, text, derive_seed(seed, 1, 0)),
        decoder([&] {
          std::mt19937_64 rng(derive_seed(seed, 2, 0));
          return DecoderHead(model.output_dim(), out_dim, mspec.decoder_layers,
                             mspec.decoder_hidden, mspec.decoder_batch_norm, rng);
        }()) {
    params = model.parameters();
    decoder.collect(params);
  }
};

struct EvalOutcome {
  double loss = 0;
  double metric = 0;
  std::vector<double> labels;
  std::vector<double> predictions;
};

EvalOutcome evaluate(Pipeline& pipe, const HeteroGraph& g, const SampleSpec& sample,
                     const TaskSpec& task, const LabelCodec* codec,
                     const std::vector<NodeRef>& seeds, size_t depth, size_t chunk,
                     double ybar_train) {
  EvalOutcome out;
  double loss_sum = 0;
  size_t n = 0;
  for (size_t off = 0; off < seeds.size(); off += chunk) {
    std::vector<NodeRef> part(seeds.begin() + off,
                              seeds.begin() + std::min(seeds.size(), off + chunk));
    auto nodes = bfs_expand(g, part, depth);
    auto batch = mask_targets(extract_subgraph(g, nodes, part, task.target_relation),
                              sample, g.schema());
    Var state = pipe.model.forward_batch(batch, false, nullptr);
    Var logits = pipe.decoder.forward(state, false);
    if (task.kind == TaskKind::Classification) {
      std::vector<size_t> enc;
      for (const auto& v : batch.labels) enc.push_back(codec->encode(v));
      Var loss = ops::cross_entropy(logits, enc);
      loss_sum += loss.value().data[0] * static_cast<double>(part.size());
      for (size_t i = 0; i < part.size(); ++i) {
        size_t arg = 0;
        for (size_t c = 1; c < logits.value().cols(); ++c)
          if (logits.value().at(i, c) > logits.value().at(i, arg)) arg = c;
        out.predictions.push_back(static_cast<double>(arg));
        out.labels.push_back(static_cast<double>(enc[i]));
      }
    } else {
      Tensor targets({part.size(), 1});
      for (size_t i = 0; i < part.size(); ++i) {
        auto num = batch.labels[i].numeric();
        if (!num) throw std::invalid_argument("regression label is not numeric");
        targets.data[i] = *num;
      }
      Var loss = ops::mse(logits, targets);
      loss_sum += loss.value().data[0] * static_cast<double>(part.size());
      for (size_t i = 0; i < part.size(); ++i) {
        out.predictions.push_back(logits.value().at(i, 0));
        out.labels.push_back(targets.data[i]);
      }
    }
    n += part.size();
  }
  out.loss = loss_sum / static_cast<double>(n);
  if (task.kind == TaskKind::Classification) {
    std::vector<size_t> p(out.predictions.begin(), out.predictions.end());
    std::vector<size_t> l(out.labels.begin(), out.labels.end());
    out.metric = accuracy(p, l);
  } else {
    out.metric = nrmse(out.labels, out.predictions, ybar_train);
  }
  return out;
}

}  // namespace

std::vector<std::vector<double>> predict_seeds(Model& model, DecoderHead& decoder,
                                               const HeteroGraph& g,
                                               const SampleSpec& sample,
                                               const std::vector<NodeRef>& seeds,
                                               size_t depth, size_t chunk) {
  std::vector<std::vector<double>> out;
  for (size_t off = 0; off < seeds.size(); off += chunk) {
    std::vector<NodeRef> part(seeds.begin() + off,
                              seeds.begin() + std::min(seeds.size(), off + chunk));
    auto nodes = bfs_expand(g, part, depth);
    auto batch = mask_targets(extract_subgraph(g, nodes, part, sample.target_relation),
                              sample, g.schema());
    Var logits = decoder.forward(model.forward_batch(batch, false, nullptr), false);
    for (size_t i = 0; i < part.size(); ++i) {
      std::vector<double> row(logits.value().cols());
      for (size_t c = 0; c < row.size(); ++c) row[c] = logits.value().at(i, c);
      out.push_back(std::move(row));
    }
  }
  return out;
}

RunRecord train_loop(const HeteroGraph& g, const SampleSpec& sample, const TaskSpec& task,
                     const ModelSpec& mspec, const TrainConfig& config,
                     const TextVectorSource& text) {
  auto t0 = std::chrono::steady_clock::now();
  if (config.steps < 1) throw std::invalid_argument("train_loop: steps must be >= 1");
  // lr == 0 is allowed as an explicit no-update mode; the optimizer itself
  // rejects it, so updates are skipped entirely
  if (config.lr < 0) throw std::invalid_argument("train_loop: lr must be non-negative");

  const auto& rel = g.schema().relations.at(task.target_relation);
  size_t attr = rel.attr_index(task.target_attr);
  if (rel.attributes[attr].semantic.kind == SemanticKind::Key)
    throw std::invalid_argument("target attribute '" + task.target_attr +
                                "' is a key column");

  // labeled rows become seeds
  std::vector<NodeRef> labeled;
  for (uint32_t i = 0; i < g.relation_rows(task.target_relation); ++i)
    if (!g.db->tables[task.target_relation].rows[i][attr].is_null())
      labeled.push_back({static_cast<uint32_t>(task.target_relation), i});

  SplitSpec split_spec{0.7, derive_seed(config.seed, 3, 0)};
  auto [train_seeds, val_seeds] = split_train_val(labeled, split_spec);

  LabelCodec codec;
  double ybar = 0;
  if (task.kind == TaskKind::Classification) {
    codec = LabelCodec::from_database(*g.db, task.target_relation, attr);
    if (codec.num_classes() < 2)
      throw std::invalid_argument("classification needs at least 2 label classes");
  } else {
    for (const auto& s : train_seeds) {
      auto num = g.db->tables[task.target_relation].rows[s.row][attr].numeric();
      if (!num) throw std::invalid_argument("regression label is not numeric");
      ybar += *num;
    }
    ybar /= static_cast<double>(train_seeds.size());
    if (ybar == 0.0) throw std::invalid_argument("nrmse undefined: training mean is zero");
  }

  size_t out_dim = task.kind == TaskKind::Classification ? codec.num_classes() : 1;
  Pipeline pipe(mspec, g, task, text, config.seed, out_dim);

  std::vector<AdamState> adam(pipe.params.size());
  size_t depth = sample.depth_limit.value_or(std::max<size_t>(1, mspec.layers));
  size_t batch_size =
      batch_size_for(config.batch_scale, g.relation_rows(task.target_relation));

  RunRecord rec;
  rec.model = mspec;
  rec.config = config;
  rec.batch_size = batch_size;
  rec.train_target_mean = ybar;
  rec.best_val_metric =
      task.kind == TaskKind::Classification ? -1.0 : std::numeric_limits<double>::infinity();

  std::vector<Tensor> best_params;
  auto snapshot = [&] {
    best_params.clear();
    for (auto& p : pipe.params) best_params.push_back(p.var.value());
  };
  auto restore = [&] {
    for (size_t i = 0; i < pipe.params.size(); ++i)
      pipe.params[i].var.value_mut() = best_params[i];
  };

  auto run_eval = [&](size_t step) {
    auto ev = evaluate(pipe, g, sample, task, &codec, val_seeds, depth, batch_size, ybar);
    rec.evals.push_back({step, ev.loss, ev.metric});
    if (rec.evals.size() == 1 || metric_improves(ev.metric, rec.best_val_metric, task.kind)) {
      rec.best_val_metric = ev.metric;
      rec.best_step = step;
      rec.val_labels = ev.labels;
      rec.val_predictions = ev.predictions;
      snapshot();
    }
  };

  for (size_t step = 1; step <= config.steps; ++step) {
    // draw the step's seed batch without replacement
    std::mt19937_64 step_rng(derive_seed(config.seed, 4, step));
    std::vector<NodeRef> batch_seeds;
    if (train_seeds.size() <= batch_size) {
      batch_seeds = train_seeds;
    } else {
      std::vector<uint32_t> pool(train_seeds.size());
      for (size_t i = 0; i < pool.size(); ++i) pool[i] = static_cast<uint32_t>(i);
      for (size_t i = 0; i < batch_size; ++i) {
        size_t j = i + static_cast<size_t>(step_rng() % (pool.size() - i));
        std::swap(pool[i], pool[j]);
        batch_seeds.push_back(train_seeds[pool[i]]);
      }
    }
    auto nodes = hetero_sample_nodes(g, batch_seeds, config.fanout, depth,
                                     derive_seed(config.seed, 5, step));
    auto batch = mask_targets(extract_subgraph(g, nodes, batch_seeds, task.target_relation),
                              sample, g.schema());

    std::mt19937_64 drop_rng(derive_seed(config.seed, 6, step));
    Var state = pipe.model.forward_batch(batch, true, &drop_rng);
    Var logits = pipe.decoder.forward(state, true);

    Var loss;
    if (task.kind == TaskKind::Classification) {
      std::vector<size_t> enc;
      for (const auto& v : batch.labels) enc.push_back(codec.encode(v));
      loss = ops::cross_entropy(logits, enc);
    } else {
      Tensor targets({batch.labels.size(), 1});
      for (size_t i = 0; i < batch.labels.size(); ++i)
        targets.data[i] = *batch.labels[i].numeric();
      loss = ops::mse(logits, targets);
    }
    double loss_value = loss.value().data[0];
    if (!std::isfinite(loss_value))
      throw TrainDivergence("non-finite loss at step " + std::to_string(step) +
                            " (lr=" + fmt_double(config.lr) + ")");
    rec.steps.push_back({step, loss_value});

    if (config.lr > 0) {
      for (auto& p : pipe.params) p.var.zero_grad();
      backward(loss);
      for (size_t i = 0; i < pipe.params.size(); ++i)
        adam_step(pipe.params[i].var, adam[i], config.lr);
    }

    if (step % config.eval_every == 0 || step == config.steps) run_eval(step);

    if (config.wall_limit_seconds > 0) {
      double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      if (elapsed > config.wall_limit_seconds) {
        if (rec.evals.empty() || rec.evals.back().step != step) run_eval(step);
        break;
      }
    }
  }

  restore();
  for (const auto& p : pipe.params)
    rec.final_params.emplace_back(p.name, p.var.value());
  rec.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rec;
}

SampledConfig sample_config(const SearchSpace& space, const ModelSpec& base_model,
                            const TrainConfig& base_train, uint64_t seed,
                            size_t trial_index) {
  std::mt19937_64 rng(derive_seed(seed, 7, trial_index));
  SampledConfig out{base_model, base_train};
  out.train.lr =
      std::exp(std::log(space.lr_min) +
               uniform01(rng) * (std::log(space.lr_max) - std::log(space.lr_min)));
  out.train.batch_scale =
      std::exp(std::log(space.batch_scale_min) +
               uniform01(rng) *
                   (std::log(space.batch_scale_max) - std::log(space.batch_scale_min)));
  out.model.dim = space.dims[rng() % space.dims.size()];
  out.model.layers =
      space.layers_min + static_cast<size_t>(rng() % (space.layers_max - space.layers_min + 1));
  out.model.decoder_layers = space.decoder_layers[rng() % space.decoder_layers.size()];
  out.model.decoder_batch_norm = rng() % 2 == 0;
  return out;
}

SearchResult random_search(const HeteroGraph& g, const SampleSpec& sample,
                           const TaskSpec& task, const ModelSpec& base_model,
                           const TrainConfig& base_train, const SearchSpace& space,
                           const TextVectorSource& text) {
  if (space.trials < 1) throw std::invalid_argument("random_search: trials must be >= 1");
  SearchResult result;
  for (size_t trial = 0; trial < space.trials; ++trial) {
    auto cfg = sample_config(space, base_model, base_train, base_train.seed, trial);
    cfg.train.seed = derive_seed(base_train.seed, 8, trial);
    RunRecord rec;
    try {
      rec = train_loop(g, sample, task, cfg.model, cfg.train, text);
    } catch (const TrainDivergence&) {
      rec.model = cfg.model;
      rec.config = cfg.train;
      rec.diverged = true;
      rec.best_val_metric = task.kind == TaskKind::Classification
                                ? 0.0
                                : std::numeric_limits<double>::infinity();
    }
    result.runs.push_back(std::move(rec));
  }
  result.best_index = 0;
  for (size_t i = 1; i < result.runs.size(); ++i)
    if (metric_improves(result.runs[i].best_val_metric,
                        result.runs[result.best_index].best_val_metric, task.kind))
      result.best_index = i;
  return result;
}

std::array<FixedConfig, 3> fixed_configs() {
  auto make = [](const char* name, size_t dim, size_t layers, size_t heads, size_t hidden) {
    FixedConfig cfg;
    cfg.name = name;
    cfg.model.kind = AssemblyKind::DBFormer;
    cfg.model.dim = dim;
    cfg.model.layers = layers;
    cfg.model.heads = heads;
    cfg.model.decoder_layers = 2;
    cfg.model.decoder_hidden = hidden;
    cfg.model.decoder_batch_norm = true;
    cfg.model.dropout = 0.1;
    cfg.model.use_text = true;
    cfg.model.use_time = true;
    cfg.train.lr = 0.0001;
    return cfg;
  };
  return {make("large", 64, 4, 4, 64), make("medium", 32, 3, 4, 64),
          make("small", 16, 2, 2, 32)};
}

}  // namespace dbdl
