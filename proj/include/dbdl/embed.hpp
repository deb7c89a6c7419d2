#pragma once

#include <map>
#include <random>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "dbdl/relmodel.hpp"
#include "dbdl/tensor.hpp"

namespace dbdl {

enum class EmbedMode {
  CategoricalLookup,
  NumericLinear,
  NumericStack,
  Timestamp,
  TextTranscode,
  Skip
};

/// Sorted distinct non-null column values -> dense index. The slot at
/// `size()` is reserved for masked and unknown values.
struct CategoryVocab {
  std::vector<Value> values;

  size_t size() const { return values.size(); }
  size_t index_of(const Value& v) const;  // masked slot for null/unknown
  static CategoryVocab from_column(const Table& table, size_t attr_index);
};

/// Per-string feature vectors for text attributes: a precomputed sidecar
/// file when available, otherwise deterministic character-trigram hashing.
struct TextVectorSource {
  size_t dim = 64;
  std::map<std::tuple<std::string, std::string, uint32_t>, std::vector<double>> sidecar;

  static TextVectorSource hashing(size_t dim = 64) { return TextVectorSource{dim, {}}; }
  /// Line format: relation column row v0 .. v{L-1}
  static TextVectorSource load_sidecar(const std::string& path, size_t dim);

  std::vector<double> vector_for(const std::string& relation, const std::string& column,
                                 uint32_t row, const std::string& text) const;
};

/// Hash a string into R^L with signed trigram counts, L2-normalized.
std::vector<double> hash_text_vector(const std::string& text, size_t dim);

struct EmbedderSpec {
  size_t dim = 16;
  bool use_text = false;
  bool use_time = false;
  bool stack_numeric = false;  // Stack instead of Linear for numeric attrs
  size_t text_dim = 64;        // L
  size_t time_dim = 13;        // d, cyclic features padded to this width
  std::vector<std::vector<EmbedMode>> modes;  // [relation][attribute]

  static EmbedderSpec from_schema(const SchemaDef& schema, size_t dim, bool use_text,
                                  bool use_time, bool stack_numeric = false,
                                  size_t text_dim = 64);

  size_t token_count(size_t relation) const;
  /// Token slots of a relation in attribute order: the attr index each
  /// embedded token comes from.
  std::vector<size_t> token_attrs(size_t relation) const;
};

/// Cyclic sin/cos features of (month, day, weekday, hour, minute, second)
/// plus a linearly scaled year channel, zero-padded to `width`.
std::vector<double> timestamp_features(const DateTime& ts, size_t width);

/// Owns every per-attribute embedding parameter of a model: lookup tables,
/// linear maps, mask vectors and per-column positional vectors.
class Embedder {
 public:
  Embedder(EmbedderSpec spec, const Database& db, TextVectorSource text,
           std::mt19937_64& rng);

  const EmbedderSpec& spec() const { return spec_; }
  size_t dim() const { return spec_.dim; }
  size_t token_count(size_t relation) const { return spec_.token_count(relation); }

  /// Token matrix for a set of rows of one relation: (rows * tokens) x D,
  /// token order = attribute order, positional vectors added. Null cells use
  /// the masked path. global_rows is needed only for sidecar text lookup.
  Var embed_rows(size_t relation, std::span<const Row> rows,
                 std::span<const uint32_t> global_rows) const;

  // single-value embedding surfaces (no positional term)
  Var embed_categorical(size_t relation, size_t attr, size_t index) const;
  Var embed_numeric(size_t relation, size_t attr, double x, bool masked) const;
  Var embed_timestamp(size_t relation, size_t attr, const DateTime& ts) const;
  Var transcode_text(size_t relation, size_t attr, std::span<const double> v) const;

  const CategoryVocab& vocab(size_t relation, size_t attr) const;
  Var positional(size_t relation, size_t attr) const;

  void collect_params(std::vector<NamedParam>& out) const;

 private:
  struct AttrParams {
    EmbedMode mode = EmbedMode::Skip;
    CategoryVocab vocab;
    Var table;  // categorical: (card+1) x D
    Var w;      // linear 1xD, timestamp Dxd, text DxL
    Var b;      // 1xD
    Var mask;   // 1xD
    Var pos;    // 1xD
  };

  const AttrParams& at(size_t relation, size_t attr) const;

  EmbedderSpec spec_;
  TextVectorSource text_;
  std::vector<std::vector<AttrParams>> params_;
  std::vector<std::string> relation_names_;
  std::vector<std::vector<std::string>> attr_names_;
};

}  // namespace dbdl
