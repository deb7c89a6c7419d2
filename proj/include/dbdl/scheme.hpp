#pragma once

#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "dbdl/embed.hpp"
#include "dbdl/sampler.hpp"
#include "dbdl/tensor.hpp"

namespace dbdl {

enum class AssemblyKind { DBFormer, DBGnn, DBTabTransformer, TabularFnn };

std::string_view assembly_name(AssemblyKind k);
std::optional<AssemblyKind> assembly_from_name(std::string_view name);

/// Declarative model assembly: embedder variant, scheme depth/width and the
/// decoder head configuration. Serializes to JSON and round-trips exactly.
struct ModelSpec {
  AssemblyKind kind = AssemblyKind::DBFormer;
  size_t dim = 16;     // embedding dimension D
  size_t layers = 2;   // scheme layers N
  size_t heads = 2;    // attention heads in tuple transformations
  double dropout = 0.0;
  bool use_text = false;
  bool use_time = false;
  size_t text_dim = 64;
  size_t decoder_layers = 2;  // M
  size_t decoder_hidden = 64;
  bool decoder_batch_norm = false;

  void validate() const;
  std::string to_json() const;
  static ModelSpec from_json(const std::string& text);

  bool operator==(const ModelSpec&) const = default;
};

namespace blocks {

/// softmax((X Wq)(X Wk)^T / sqrt(D/heads)) (X Wv) per head, concatenated,
/// then Wo. X may hold several independent token blocks of equal length.
Var self_attention(const Var& x, size_t heads, const Var& wq, const Var& wk,
                   const Var& wv, const Var& wo, double rho = 0.0,
                   std::mt19937_64* rng = nullptr);
Var block_self_attention(const Var& x, size_t block_len, size_t heads, const Var& wq,
                         const Var& wk, const Var& wv, const Var& wo, double rho = 0.0,
                         std::mt19937_64* rng = nullptr);

/// Queries from the referencing tuple's tokens, keys/values from the
/// referenced tuple's tokens; single-head, scale 1/sqrt(D).
struct CrossAttention {
  Var wq, wk, wv, wo;

  CrossAttention() = default;
  CrossAttention(size_t dim, std::mt19937_64& rng);
  Var combine(const Var& t_center, const Var& t_neighbor, double rho = 0.0,
              std::mt19937_64* rng = nullptr) const;
  void collect(const std::string& prefix, std::vector<NamedParam>& out) const;
};

/// Per-token-position scaled dot-product pooling of neighbor messages with
/// the center tuple as query. Empty multisets aggregate to zero.
struct AttendAggregate {
  Var wq, wk, wv;

  AttendAggregate() = default;
  AttendAggregate(size_t dim, std::mt19937_64& rng);
  Var aggregate(const Var& center, std::span<const Var> messages) const;
  void collect(const std::string& prefix, std::vector<NamedParam>& out) const;
};

/// Elementwise sum; the empty multiset yields zeros of the given shape.
Var sum_aggregate(std::span<const Var> states, const std::vector<size_t>& shape_if_empty);

/// t_i plus the mean over t_j's tokens, broadcast across t_i's tokens (the
/// AddMean combination).
Var add_mean_combine(const Var& t_i, const Var& t_j);

/// Row-major flatten of an n x D token matrix into 1 x (n*D).
Var concat_attributes(const Var& tokens);

/// (W_self t_i + W_neigh t_j) / deg; summing over the deg incident
/// neighbors yields SAGE with mean aggregation.
struct SageCombine {
  Var w_self, w_neigh;

  SageCombine() = default;
  SageCombine(size_t center_dim, size_t neighbor_dim, std::mt19937_64& rng);
  Var combine(const Var& t_center, const Var& t_neighbor, size_t degree) const;
  void collect(const std::string& prefix, std::vector<NamedParam>& out) const;
};

/// LN(h + m) followed by a residual FFN with a second LN, token-wise.
struct ResidualFnn {
  Var w1, b1, w2, b2;
  Var ln1_gain, ln1_bias, ln2_gain, ln2_bias;

  ResidualFnn() = default;
  ResidualFnn(size_t dim, std::mt19937_64& rng);
  Var combine(const Var& h, const Var& m) const;
  void collect(const std::string& prefix, std::vector<NamedParam>& out) const;
};

/// Tuple transformation: self-attention encoder with residual layer norms,
/// applied per token block.
struct EncoderLayer {
  Var wq, wk, wv, wo;
  Var w1, b1, w2, b2;
  Var ln1_gain, ln1_bias, ln2_gain, ln2_bias;
  size_t heads = 1;
  double dropout = 0.0;

  EncoderLayer() = default;
  EncoderLayer(size_t dim, size_t heads, double dropout, std::mt19937_64& rng);
  Var forward(const Var& x, size_t block_len, bool training,
              std::mt19937_64* rng) const;
  void collect(const std::string& prefix, std::vector<NamedParam>& out) const;
};

}  // namespace blocks

/// A fully assembled scheme instance over a fixed schema. forward_batch
/// returns the flattened final target-relation states of the seeds; the
/// decoder head lives with the training harness.
class Model {
 public:
  Model(const ModelSpec& spec, const HeteroGraph& graph, size_t target_relation,
        const TextVectorSource& text, uint64_t param_seed);

  const ModelSpec& spec() const { return spec_; }
  const Embedder& embedder() const { return embedder_; }
  size_t target_relation() const { return target_relation_; }
  /// Width of one seed's flattened final state.
  size_t output_dim() const;

  Var forward_batch(const MiniBatch& batch, bool training = false,
                    std::mt19937_64* rng = nullptr);

  std::vector<NamedParam> parameters() const;

 private:
  struct DbformerLayer {
    std::vector<blocks::EncoderLayer> encoder;     // per relation
    std::vector<blocks::CrossAttention> cross;     // per edge type
    std::vector<blocks::AttendAggregate> attend;   // per edge type
    std::vector<blocks::ResidualFnn> closing;      // per relation
  };
  struct DbgnnLayer {
    std::vector<BatchNorm> norm;                   // per relation
    std::vector<blocks::SageCombine> sage;         // per edge type
  };
  struct TabTransLayer {
    std::vector<blocks::EncoderLayer> encoder;     // per relation (categorical tokens)
    std::vector<Var> ln_gain, ln_bias;             // per relation (other tokens)
  };

  Var embed_all(const MiniBatch& batch, size_t relation) const;
  Var forward_dbformer(const MiniBatch& batch, bool training, std::mt19937_64* rng);
  Var forward_dbgnn(const MiniBatch& batch, bool training, std::mt19937_64* rng);
  Var forward_tabtrans(const MiniBatch& batch, bool training, std::mt19937_64* rng);
  Var forward_tabular(const MiniBatch& batch) const;
  Var gather_seed_states(const Var& state, const MiniBatch& batch, size_t tokens) const;

  ModelSpec spec_;
  size_t target_relation_ = 0;
  Embedder embedder_;
  std::vector<size_t> tokens_;      // per relation
  std::vector<size_t> state_dim_;   // per relation (flattened assemblies)
  std::vector<size_t> src_rel_, dst_rel_;  // per edge type
  std::vector<std::vector<size_t>> cat_slots_, other_slots_;  // tabtransformer split
  std::vector<DbformerLayer> dbformer_;
  std::vector<DbgnnLayer> dbgnn_;
  std::vector<TabTransLayer> tabtrans_;
};

/// Builds the named assembly; throws a descriptive error when the spec does
/// not compose over the given schema.
Model assemble_model(const ModelSpec& spec, const HeteroGraph& graph,
                     size_t target_relation, const TextVectorSource& text,
                     uint64_t param_seed);

}  // namespace dbdl
