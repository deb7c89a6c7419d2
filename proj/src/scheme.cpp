#include "dbdl/scheme.hpp"

#include <cmath>
#include <stdexcept>

#include "json.hpp"

namespace dbdl {

using nlohmann::json;

std::string_view assembly_name(AssemblyKind k) {
  switch (k) {
    case AssemblyKind::DBFormer: return "dbformer";
    case AssemblyKind::DBGnn: return "dbgnn";
    case AssemblyKind::DBTabTransformer: return "db_tabtransformer";
    case AssemblyKind::TabularFnn: return "tabular_fnn";
  }
  return "?";
}

std::optional<AssemblyKind> assembly_from_name(std::string_view name) {
  if (name == "dbformer") return AssemblyKind::DBFormer;
  if (name == "dbgnn") return AssemblyKind::DBGnn;
  if (name == "db_tabtransformer") return AssemblyKind::DBTabTransformer;
  if (name == "tabular_fnn") return AssemblyKind::TabularFnn;
  return std::nullopt;
}

void ModelSpec::validate() const {
  if (dim == 0) throw std::invalid_argument("model spec: dim must be positive");
  if (layers == 0 && kind != AssemblyKind::TabularFnn)
    throw std::invalid_argument("model spec: layers must be >= 1");
  if (heads == 0 || dim % heads != 0)
    throw std::invalid_argument("model spec: dim must be divisible by heads");
  if (!(dropout >= 0.0 && dropout < 1.0))
    throw std::invalid_argument("model spec: dropout must lie in [0,1)");
  if (decoder_layers == 0)
    throw std::invalid_argument("model spec: decoder needs at least one layer");
  if (decoder_hidden == 0)
    throw std::invalid_argument("model spec: decoder hidden width must be positive");
}

std::string ModelSpec::to_json() const {
  json j;
  j["model"] = std::string(assembly_name(kind));
  j["dim"] = dim;
  j["layers"] = layers;
  j["heads"] = heads;
  j["dropout"] = dropout;
  j["use_text"] = use_text;
  j["use_time"] = use_time;
  j["text_dim"] = text_dim;
  j["decoder_layers"] = decoder_layers;
  j["decoder_hidden"] = decoder_hidden;
  j["decoder_batch_norm"] = decoder_batch_norm;
  return j.dump(2);
}

ModelSpec ModelSpec::from_json(const std::string& text) {
  json j = json::parse(text);
  ModelSpec spec;
  auto kind = assembly_from_name(j.at("model").get<std::string>());
  if (!kind) throw std::invalid_argument("unknown model name in spec");
  spec.kind = *kind;
  spec.dim = j.at("dim").get<size_t>();
  spec.layers = j.at("layers").get<size_t>();
  spec.heads = j.at("heads").get<size_t>();
  spec.dropout = j.at("dropout").get<double>();
  spec.use_text = j.at("use_text").get<bool>();
  spec.use_time = j.at("use_time").get<bool>();
  spec.text_dim = j.at("text_dim").get<size_t>();
  spec.decoder_layers = j.at("decoder_layers").get<size_t>();
  spec.decoder_hidden = j.at("decoder_hidden").get<size_t>();
  spec.decoder_batch_norm = j.at("decoder_batch_norm").get<bool>();
  return spec;
}

namespace blocks {

Var block_self_attention(const Var& x, size_t block_len, size_t heads, const Var& wq,
                         const Var& wk, const Var& wv, const Var& wo, double rho,
                         std::mt19937_64* rng) {
  size_t n = x.value().rows();
  if (block_len == 0 || n % block_len != 0)
    throw std::invalid_argument("self_attention: rows not divisible by block length");
  Var q = ops::matmul(x, wq);
  Var k = ops::matmul(x, wk);
  Var v = ops::matmul(x, wv);
  std::vector<ops::AttnBlock> blocks;
  for (uint32_t off = 0; off < n; off += static_cast<uint32_t>(block_len))
    blocks.push_back({off, static_cast<uint32_t>(block_len), off,
                      static_cast<uint32_t>(block_len)});
  Var mixed = ops::block_attention(q, k, v, std::move(blocks), heads, rho, rng);
  return ops::matmul(mixed, wo);
}

Var self_attention(const Var& x, size_t heads, const Var& wq, const Var& wk,
                   const Var& wv, const Var& wo, double rho, std::mt19937_64* rng) {
  return block_self_attention(x, x.value().rows(), heads, wq, wk, wv, wo, rho, rng);
}

CrossAttention::CrossAttention(size_t dim, std::mt19937_64& rng)
    : wq(glorot_uniform(dim, dim, rng), true),
      wk(glorot_uniform(dim, dim, rng), true),
      wv(glorot_uniform(dim, dim, rng), true),
      wo(glorot_uniform(dim, dim, rng), true) {}

Var CrossAttention::combine(const Var& t_center, const Var& t_neighbor, double rho,
                            std::mt19937_64* rng) const {
  if (t_center.value().cols() != t_neighbor.value().cols())
    throw std::invalid_argument("cross_attention: dimension mismatch");
  Var q = ops::matmul(t_center, wq);
  Var k = ops::matmul(t_neighbor, wk);
  Var v = ops::matmul(t_neighbor, wv);
  std::vector<ops::AttnBlock> blocks = {
      {0, static_cast<uint32_t>(q.value().rows()), 0,
       static_cast<uint32_t>(k.value().rows())}};
  return ops::matmul(ops::block_attention(q, k, v, std::move(blocks), 1, rho, rng), wo);
}

void CrossAttention::collect(const std::string& prefix, std::vector<NamedParam>& out) const {
  out.push_back({prefix + "wq", wq});
  out.push_back({prefix + "wk", wk});
  out.push_back({prefix + "wv", wv});
  out.push_back({prefix + "wo", wo});
}

AttendAggregate::AttendAggregate(size_t dim, std::mt19937_64& rng)
    : wq(glorot_uniform(dim, dim, rng), true),
      wk(glorot_uniform(dim, dim, rng), true),
      wv(glorot_uniform(dim, dim, rng), true) {}

Var AttendAggregate::aggregate(const Var& center, std::span<const Var> messages) const {
  size_t n = center.value().rows(), d = center.value().cols();
  if (messages.empty()) return Var(Tensor({n, d}));
  for (const auto& m : messages)
    if (!m.value().same_shape(center.value()))
      throw std::invalid_argument("attend_aggregate: message shape mismatch");
  Var q = ops::matmul(center, wq);
  Var stacked = ops::concat_rows(messages);
  Var k = ops::matmul(stacked, wk);
  Var v = ops::matmul(stacked, wv);
  std::vector<uint32_t> owner(messages.size(), 0);
  return ops::position_attention(q, k, v, std::move(owner), n, 1);
}

void AttendAggregate::collect(const std::string& prefix, std::vector<NamedParam>& out) const {
  out.push_back({prefix + "wq", wq});
  out.push_back({prefix + "wk", wk});
  out.push_back({prefix + "wv", wv});
}

Var sum_aggregate(std::span<const Var> states, const std::vector<size_t>& shape_if_empty) {
  if (states.empty()) return Var(Tensor(shape_if_empty));
  Var acc = states[0];
  for (size_t i = 1; i < states.size(); ++i) {
    if (!states[i].value().same_shape(acc.value()))
      throw std::invalid_argument("sum_aggregate: shape mismatch");
    acc = ops::add(acc, states[i]);
  }
  return acc;
}

Var add_mean_combine(const Var& t_i, const Var& t_j) {
  if (t_j.value().rows() == 0)
    throw std::invalid_argument("add_mean_combine: empty neighbor tuple");
  if (t_i.value().cols() != t_j.value().cols())
    throw std::invalid_argument("add_mean_combine: dimension mismatch");
  return ops::add_rowvec(t_i, ops::mean_rows(t_j));
}

Var concat_attributes(const Var& tokens) {
  return ops::reshape(tokens, {1, tokens.value().numel()});
}

SageCombine::SageCombine(size_t center_dim, size_t neighbor_dim, std::mt19937_64& rng)
    : w_self(glorot_uniform(center_dim, center_dim, rng), true),
      w_neigh(glorot_uniform(center_dim, neighbor_dim, rng), true) {}

Var SageCombine::combine(const Var& t_center, const Var& t_neighbor, size_t degree) const {
  if (degree < 1) throw std::invalid_argument("sage_combine: degree must be >= 1");
  Var self_part = ops::matmul(t_center, w_self, false, true);
  Var neigh_part = ops::matmul(t_neighbor, w_neigh, false, true);
  return ops::scale(ops::add(self_part, neigh_part), 1.0 / static_cast<double>(degree));
}

void SageCombine::collect(const std::string& prefix, std::vector<NamedParam>& out) const {
  out.push_back({prefix + "w_self", w_self});
  out.push_back({prefix + "w_neigh", w_neigh});
}

ResidualFnn::ResidualFnn(size_t dim, std::mt19937_64& rng)
    : w1(glorot_uniform(2 * dim, dim, rng), true),
      b1(Tensor({1, 2 * dim}), true),
      w2(glorot_uniform(dim, 2 * dim, rng), true),
      b2(Tensor({1, dim}), true),
      ln1_gain(Tensor({1, dim}, std::vector<double>(dim, 1.0)), true),
      ln1_bias(Tensor({1, dim}), true),
      ln2_gain(Tensor({1, dim}, std::vector<double>(dim, 1.0)), true),
      ln2_bias(Tensor({1, dim}), true) {}

Var ResidualFnn::combine(const Var& h, const Var& m) const {
  if (!h.value().same_shape(m.value()))
    throw std::invalid_argument("residual combine: shape mismatch");
  Var u = ops::layer_norm_rows(ops::add(h, m), ln1_gain, ln1_bias);
  Var f = ops::ffn(u, w1, b1, w2, b2);
  return ops::layer_norm_rows(ops::add(u, f), ln2_gain, ln2_bias);
}

void ResidualFnn::collect(const std::string& prefix, std::vector<NamedParam>& out) const {
  out.push_back({prefix + "w1", w1});
  out.push_back({prefix + "b1", b1});
  out.push_back({prefix + "w2", w2});
  out.push_back({prefix + "b2", b2});
  out.push_back({prefix + "ln1_gain", ln1_gain});
  out.push_back({prefix + "ln1_bias", ln1_bias});
  out.push_back({prefix + "ln2_gain", ln2_gain});
  out.push_back({prefix + "ln2_bias", ln2_bias});
}

EncoderLayer::EncoderLayer(size_t dim, size_t heads_, double dropout_, std::mt19937_64& rng)
    : wq(glorot_uniform(dim, dim, rng), true),
      wk(glorot_uniform(dim, dim, rng), true),
      wv(glorot_uniform(dim, dim, rng), true),
      wo(glorot_uniform(dim, dim, rng), true),
      w1(glorot_uniform(2 * dim, dim, rng), true),
      b1(Tensor({1, 2 * dim}), true),
      w2(glorot_uniform(dim, 2 * dim, rng), true),
      b2(Tensor({1, dim}), true),
      ln1_gain(Tensor({1, dim}, std::vector<double>(dim, 1.0)), true),
      ln1_bias(Tensor({1, dim}), true),
      ln2_gain(Tensor({1, dim}, std::vector<double>(dim, 1.0)), true),
      ln2_bias(Tensor({1, dim}), true),
      heads(heads_),
      dropout(dropout_) {}

Var EncoderLayer::forward(const Var& x, size_t block_len, bool training,
                          std::mt19937_64* rng) const {
  double rho = training ? dropout : 0.0;
  Var attn = block_self_attention(x, block_len, heads, wq, wk, wv, wo, rho,
                                  rho > 0 ? rng : nullptr);
  Var x1 = ops::layer_norm_rows(ops::add(x, attn), ln1_gain, ln1_bias);
  Var f = ops::ffn(x1, w1, b1, w2, b2);
  return ops::layer_norm_rows(ops::add(x1, f), ln2_gain, ln2_bias);
}

void EncoderLayer::collect(const std::string& prefix, std::vector<NamedParam>& out) const {
  out.push_back({prefix + "wq", wq});
  out.push_back({prefix + "wk", wk});
  out.push_back({prefix + "wv", wv});
  out.push_back({prefix + "wo", wo});
  out.push_back({prefix + "w1", w1});
  out.push_back({prefix + "b1", b1});
  out.push_back({prefix + "w2", w2});
  out.push_back({prefix + "b2", b2});
  out.push_back({prefix + "ln1_gain", ln1_gain});
  out.push_back({prefix + "ln1_bias", ln1_bias});
  out.push_back({prefix + "ln2_gain", ln2_gain});
  out.push_back({prefix + "ln2_bias", ln2_bias});
}

}  // namespace blocks

namespace {

EmbedderSpec embedder_spec_for(const ModelSpec& spec, const SchemaDef& schema,
                               AssemblyKind kind, size_t target_relation) {
  bool stack = kind == AssemblyKind::DBTabTransformer;
  auto espec = EmbedderSpec::from_schema(schema, spec.dim, spec.use_text, spec.use_time,
                                         stack, spec.text_dim);
  if (kind == AssemblyKind::TabularFnn) {
    // operates solely on the target table
    for (size_t r = 0; r < espec.modes.size(); ++r)
      if (r != target_relation)
        std::fill(espec.modes[r].begin(), espec.modes[r].end(), EmbedMode::Skip);
  }
  return espec;
}

}  // namespace

Model::Model(const ModelSpec& spec, const HeteroGraph& graph, size_t target_relation,
             const TextVectorSource& text, uint64_t param_seed)
    : spec_(spec), target_relation_(target_relation),
      embedder_([&] {
        spec.validate();
        if (target_relation >= graph.num_relations())
          throw std::invalid_argument("assemble_model: unknown target relation");
        std::mt19937_64 seed_rng(param_seed);
        return Embedder(
            embedder_spec_for(spec, graph.schema(), spec.kind, target_relation),
            *graph.db, text, seed_rng);
      }()) {
  size_t R = graph.num_relations();
  size_t E = graph.num_edge_types();
  for (size_t r = 0; r < R; ++r) tokens_.push_back(embedder_.token_count(r));
  if (tokens_[target_relation_] == 0)
    throw std::invalid_argument(
        "assemble_model: target relation has no embeddable attributes");
  for (size_t r = 0; r < R; ++r) state_dim_.push_back(tokens_[r] * spec_.dim);
  for (uint32_t et = 0; et < E; ++et) {
    src_rel_.push_back(graph.src_relation(et));
    dst_rel_.push_back(graph.dst_relation(et));
  }

  // all parameters come from one seeded stream; the embedder consumed the
  // first draws, so continue from a derived stream
  std::mt19937_64 rng(param_seed ^ 0x9e3779b97f4a7c15ull);

  switch (spec_.kind) {
    case AssemblyKind::DBFormer:
      for (size_t l = 0; l < spec_.layers; ++l) {
        DbformerLayer layer;
        for (size_t r = 0; r < R; ++r)
          layer.encoder.emplace_back(spec_.dim, spec_.heads, spec_.dropout, rng);
        for (size_t et = 0; et < E; ++et) {
          layer.cross.emplace_back(spec_.dim, rng);
          layer.attend.emplace_back(spec_.dim, rng);
        }
        for (size_t r = 0; r < R; ++r) layer.closing.emplace_back(spec_.dim, rng);
        dbformer_.push_back(std::move(layer));
      }
      break;
    case AssemblyKind::DBGnn:
      for (size_t l = 0; l < spec_.layers; ++l) {
        DbgnnLayer layer;
        for (size_t r = 0; r < R; ++r) layer.norm.emplace_back(state_dim_[r]);
        for (size_t et = 0; et < E; ++et)
          layer.sage.emplace_back(state_dim_[src_rel_[et]], state_dim_[dst_rel_[et]], rng);
        dbgnn_.push_back(std::move(layer));
      }
      break;
    case AssemblyKind::DBTabTransformer: {
      cat_slots_.resize(R);
      other_slots_.resize(R);
      for (size_t r = 0; r < R; ++r) {
        auto attrs = embedder_.spec().token_attrs(r);
        for (size_t slot = 0; slot < attrs.size(); ++slot) {
          if (embedder_.spec().modes[r][attrs[slot]] == EmbedMode::CategoricalLookup)
            cat_slots_[r].push_back(slot);
          else
            other_slots_[r].push_back(slot);
        }
      }
      for (size_t l = 0; l < spec_.layers; ++l) {
        TabTransLayer layer;
        for (size_t r = 0; r < R; ++r) {
          layer.encoder.emplace_back(spec_.dim, spec_.heads, spec_.dropout, rng);
          layer.ln_gain.emplace_back(
              Tensor({1, spec_.dim}, std::vector<double>(spec_.dim, 1.0)), true);
          layer.ln_bias.emplace_back(Tensor({1, spec_.dim}), true);
        }
        tabtrans_.push_back(std::move(layer));
      }
      break;
    }
    case AssemblyKind::TabularFnn:
      break;
  }
}

size_t Model::output_dim() const { return state_dim_[target_relation_]; }

Var Model::embed_all(const MiniBatch& batch, size_t relation) const {
  return embedder_.embed_rows(relation, batch.rows[relation], batch.global_rows[relation]);
}

Var Model::gather_seed_states(const Var& state, const MiniBatch& batch,
                              size_t tokens) const {
  std::vector<uint32_t> idx;
  idx.reserve(batch.seeds.size() * tokens);
  for (uint32_t s : batch.seeds)
    for (size_t p = 0; p < tokens; ++p)
      idx.push_back(static_cast<uint32_t>(s * tokens + p));
  Var rows = ops::gather_rows(state, std::move(idx));
  return ops::reshape(rows, {batch.seeds.size(), tokens * spec_.dim});
}

Var Model::forward_batch(const MiniBatch& batch, bool training, std::mt19937_64* rng) {
  if (!batch.label_mask_applied)
    throw std::invalid_argument("forward_batch: batch must be masked first");
  switch (spec_.kind) {
    case AssemblyKind::DBFormer: return forward_dbformer(batch, training, rng);
    case AssemblyKind::DBGnn: return forward_dbgnn(batch, training, rng);
    case AssemblyKind::DBTabTransformer: return forward_tabtrans(batch, training, rng);
    case AssemblyKind::TabularFnn: return forward_tabular(batch);
  }
  throw std::logic_error("unreachable");
}

Var Model::forward_dbformer(const MiniBatch& batch, bool training, std::mt19937_64* rng) {
  size_t R = batch.num_relations();
  size_t d = spec_.dim;
  double rho = training ? spec_.dropout : 0.0;
  std::mt19937_64* drop_rng = rho > 0 ? rng : nullptr;

  std::vector<Var> states(R);
  for (size_t r = 0; r < R; ++r) states[r] = embed_all(batch, r);

  for (const auto& layer : dbformer_) {
    std::vector<Var> that(R);
    for (size_t r = 0; r < R; ++r) {
      if (tokens_[r] == 0 || batch.rows[r].empty()) {
        that[r] = states[r];
        continue;
      }
      that[r] = layer.encoder[r].forward(states[r], tokens_[r], training, rng);
    }
    std::vector<Var> acc(R);
    for (size_t et = 0; et < batch.adjacency.size(); ++et) {
      const auto& edges = batch.adjacency[et].pairs;
      if (edges.empty()) continue;
      size_t c = src_rel_[et], nb = dst_rel_[et];
      size_t kc = tokens_[c], kn = tokens_[nb];
      if (kc == 0 || kn == 0) continue;

      const auto& cross = layer.cross[et];
      Var q_all = ops::matmul(that[c], cross.wq);
      Var k_all = ops::matmul(that[nb], cross.wk);
      Var v_all = ops::matmul(that[nb], cross.wv);
      std::vector<uint32_t> q_idx;
      std::vector<ops::AttnBlock> attn_blocks;
      std::vector<uint32_t> centers;
      q_idx.reserve(edges.size() * kc);
      for (size_t e = 0; e < edges.size(); ++e) {
        auto [s, dd] = edges[e];
        for (size_t p = 0; p < kc; ++p)
          q_idx.push_back(static_cast<uint32_t>(s * kc + p));
        attn_blocks.push_back({static_cast<uint32_t>(e * kc), static_cast<uint32_t>(kc),
                               static_cast<uint32_t>(dd * kn), static_cast<uint32_t>(kn)});
        centers.push_back(s);
      }
      Var q_edges = ops::gather_rows(q_all, std::move(q_idx));
      Var mixed = ops::block_attention(q_edges, k_all, v_all, std::move(attn_blocks), 1,
                                       rho, drop_rng);
      Var messages = ops::matmul(mixed, cross.wo);

      const auto& att = layer.attend[et];
      Var qa = ops::matmul(that[c], att.wq);
      Var ka = ops::matmul(messages, att.wk);
      Var va = ops::matmul(messages, att.wv);
      Var agg = ops::position_attention(qa, ka, va, std::move(centers), kc,
                                        batch.rows[c].size(), rho, drop_rng);
      acc[c] = acc[c].defined() ? ops::add(acc[c], agg) : agg;
    }
    for (size_t r = 0; r < R; ++r) {
      if (tokens_[r] == 0 || batch.rows[r].empty()) {
        states[r] = that[r];
        continue;
      }
      Var m = acc[r].defined()
                  ? acc[r]
                  : Var(Tensor({batch.rows[r].size() * tokens_[r], d}));
      states[r] = layer.closing[r].combine(that[r], m);
    }
  }
  return gather_seed_states(states[target_relation_], batch, tokens_[target_relation_]);
}

Var Model::forward_dbgnn(const MiniBatch& batch, bool training, std::mt19937_64* rng) {
  (void)rng;
  size_t R = batch.num_relations();
  std::vector<Var> states(R);
  for (size_t r = 0; r < R; ++r) {
    Var tok = embed_all(batch, r);
    states[r] = ops::reshape(tok, {batch.rows[r].size(), state_dim_[r]});
  }

  for (auto& layer : dbgnn_) {
    std::vector<Var> that(R);
    for (size_t r = 0; r < R; ++r) {
      size_t n = batch.rows[r].size();
      if (n == 0 || state_dim_[r] == 0) {
        that[r] = states[r];
        continue;
      }
      // single-row batches fall back to the running statistics
      Var normed = layer.norm[r].forward(states[r], training && n >= 2);
      that[r] = ops::relu(normed);
    }
    std::vector<Var> acc(R);
    for (size_t et = 0; et < batch.adjacency.size(); ++et) {
      const auto& adj = batch.adjacency[et];
      if (adj.pairs.empty()) continue;
      size_t c = src_rel_[et], nb = dst_rel_[et];
      const auto& sage = layer.sage[et];
      Var a = ops::matmul(that[c], sage.w_self, false, true);
      Var b = ops::matmul(that[nb], sage.w_neigh, false, true);
      std::vector<uint32_t> s_idx, d_idx;
      std::vector<double> inv_deg;
      for (auto [s, dd] : adj.pairs) {
        s_idx.push_back(s);
        d_idx.push_back(dd);
        inv_deg.push_back(1.0 / static_cast<double>(adj.degree(s)));
      }
      Var msgs = ops::scale_rows(
          ops::add(ops::gather_rows(a, s_idx), ops::gather_rows(b, std::move(d_idx))),
          std::move(inv_deg));
      Var agg = ops::scatter_add_rows(msgs, std::move(s_idx), batch.rows[c].size());
      acc[c] = acc[c].defined() ? ops::add(acc[c], agg) : agg;
    }
    for (size_t r = 0; r < R; ++r)
      states[r] = acc[r].defined()
                      ? acc[r]
                      : Var(Tensor({batch.rows[r].size(), state_dim_[r]}));
  }
  return ops::gather_rows(states[target_relation_], batch.seeds);
}

Var Model::forward_tabtrans(const MiniBatch& batch, bool training, std::mt19937_64* rng) {
  size_t R = batch.num_relations();
  size_t d = spec_.dim;
  std::vector<Var> states(R);
  for (size_t r = 0; r < R; ++r) states[r] = embed_all(batch, r);

  for (const auto& layer : tabtrans_) {
    std::vector<Var> that(R);
    for (size_t r = 0; r < R; ++r) {
      size_t n = batch.rows[r].size(), k = tokens_[r];
      if (n == 0 || k == 0) {
        that[r] = states[r];
        continue;
      }
      const auto& cats = cat_slots_[r];
      const auto& others = other_slots_[r];
      if (others.empty()) {
        that[r] = layer.encoder[r].forward(states[r], k, training, rng);
      } else if (cats.empty()) {
        that[r] = ops::layer_norm_rows(states[r], layer.ln_gain[r], layer.ln_bias[r]);
      } else {
        std::vector<uint32_t> cat_idx, oth_idx;
        for (size_t i = 0; i < n; ++i) {
          for (size_t slot : cats) cat_idx.push_back(static_cast<uint32_t>(i * k + slot));
          for (size_t slot : others) oth_idx.push_back(static_cast<uint32_t>(i * k + slot));
        }
        Var enc = layer.encoder[r].forward(ops::gather_rows(states[r], cat_idx),
                                           cats.size(), training, rng);
        Var ln = ops::layer_norm_rows(ops::gather_rows(states[r], oth_idx),
                                      layer.ln_gain[r], layer.ln_bias[r]);
        // stitch the split token streams back into attribute order
        std::vector<uint32_t> inverse(n * k);
        size_t pos = 0;
        for (uint32_t row : cat_idx) inverse[row] = static_cast<uint32_t>(pos++);
        for (uint32_t row : oth_idx) inverse[row] = static_cast<uint32_t>(pos++);
        std::vector<Var> parts = {enc, ln};
        that[r] = ops::gather_rows(ops::concat_rows(parts), std::move(inverse));
      }
    }
    std::vector<Var> acc(R);
    for (size_t et = 0; et < batch.adjacency.size(); ++et) {
      const auto& adj = batch.adjacency[et];
      if (adj.pairs.empty()) continue;
      size_t c = src_rel_[et], nb = dst_rel_[et];
      size_t kc = tokens_[c], kn = tokens_[nb];
      if (kc == 0 || kn == 0) continue;
      Var nbr_means = ops::block_mean_rows(that[nb], kn);
      std::vector<uint32_t> q_idx, m_idx;
      for (auto [s, dd] : adj.pairs) {
        for (size_t p = 0; p < kc; ++p) {
          q_idx.push_back(static_cast<uint32_t>(s * kc + p));
          m_idx.push_back(dd);
        }
      }
      Var msgs = ops::add(ops::gather_rows(that[c], q_idx),
                          ops::gather_rows(nbr_means, std::move(m_idx)));
      Var agg = ops::scatter_add_rows(msgs, std::move(q_idx),
                                      batch.rows[c].size() * kc);
      acc[c] = acc[c].defined() ? ops::add(acc[c], agg) : agg;
    }
    for (size_t r = 0; r < R; ++r) {
      if (tokens_[r] == 0 || batch.rows[r].empty()) {
        states[r] = that[r];
        continue;
      }
      states[r] = acc[r].defined()
                      ? acc[r]
                      : Var(Tensor({batch.rows[r].size() * tokens_[r], d}));
    }
  }
  return gather_seed_states(states[target_relation_], batch, tokens_[target_relation_]);
}

Var Model::forward_tabular(const MiniBatch& batch) const {
  Var tok = embed_all(batch, target_relation_);
  Var flat = ops::reshape(tok, {batch.rows[target_relation_].size(),
                                state_dim_[target_relation_]});
  return ops::gather_rows(flat, batch.seeds);
}

std::vector<NamedParam> Model::parameters() const {
  std::vector<NamedParam> out;
  embedder_.collect_params(out);
  for (size_t l = 0; l < dbformer_.size(); ++l) {
    const auto& layer = dbformer_[l];
    std::string base = "layer" + std::to_string(l) + "/";
    for (size_t r = 0; r < layer.encoder.size(); ++r)
      layer.encoder[r].collect(base + "rel" + std::to_string(r) + "/encoder/", out);
    for (size_t et = 0; et < layer.cross.size(); ++et) {
      layer.cross[et].collect(base + "et" + std::to_string(et) + "/cross/", out);
      layer.attend[et].collect(base + "et" + std::to_string(et) + "/attend/", out);
    }
    for (size_t r = 0; r < layer.closing.size(); ++r)
      layer.closing[r].collect(base + "rel" + std::to_string(r) + "/closing/", out);
  }
  for (size_t l = 0; l < dbgnn_.size(); ++l) {
    const auto& layer = dbgnn_[l];
    std::string base = "layer" + std::to_string(l) + "/";
    for (size_t r = 0; r < layer.norm.size(); ++r) {
      out.push_back({base + "rel" + std::to_string(r) + "/bn_gain", layer.norm[r].gain});
      out.push_back({base + "rel" + std::to_string(r) + "/bn_bias", layer.norm[r].bias});
    }
    for (size_t et = 0; et < layer.sage.size(); ++et)
      layer.sage[et].collect(base + "et" + std::to_string(et) + "/sage/", out);
  }
  for (size_t l = 0; l < tabtrans_.size(); ++l) {
    const auto& layer = tabtrans_[l];
    std::string base = "layer" + std::to_string(l) + "/";
    for (size_t r = 0; r < layer.encoder.size(); ++r) {
      layer.encoder[r].collect(base + "rel" + std::to_string(r) + "/encoder/", out);
      out.push_back({base + "rel" + std::to_string(r) + "/ln_gain", layer.ln_gain[r]});
      out.push_back({base + "rel" + std::to_string(r) + "/ln_bias", layer.ln_bias[r]});
    }
  }
  return out;
}

Model assemble_model(const ModelSpec& spec, const HeteroGraph& graph,
                     size_t target_relation, const TextVectorSource& text,
                     uint64_t param_seed) {
  return Model(spec, graph, target_relation, text, param_seed);
}

}  // namespace dbdl
