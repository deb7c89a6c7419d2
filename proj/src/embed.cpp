#include "dbdl/embed.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>
#include <stdexcept>

namespace dbdl {

size_t CategoryVocab::index_of(const Value& v) const {
  if (v.is_null()) return values.size();
  auto it = std::lower_bound(values.begin(), values.end(), v);
  if (it != values.end() && *it == v)
    return static_cast<size_t>(it - values.begin());
  return values.size();  // unknown -> masked slot
}

CategoryVocab CategoryVocab::from_column(const Table& table, size_t attr_index) {
  std::set<Value> distinct;
  for (const auto& row : table.rows)
    if (!row[attr_index].is_null()) distinct.insert(row[attr_index]);
  CategoryVocab v;
  v.values.assign(distinct.begin(), distinct.end());
  return v;
}

TextVectorSource TextVectorSource::load_sidecar(const std::string& path, size_t dim) {
  TextVectorSource src;
  src.dim = dim;
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open text vector sidecar: " + path);
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string rel, col;
    uint32_t row = 0;
    if (!(ss >> rel >> col >> row))
      throw std::runtime_error("sidecar line " + std::to_string(lineno) + ": bad header");
    std::vector<double> vec(dim);
    for (size_t i = 0; i < dim; ++i)
      if (!(ss >> vec[i]))
        throw std::runtime_error("sidecar line " + std::to_string(lineno) + ": expected " +
                                 std::to_string(dim) + " values");
    src.sidecar[{rel, col, row}] = std::move(vec);
  }
  return src;
}

std::vector<double> TextVectorSource::vector_for(const std::string& relation,
                                                 const std::string& column, uint32_t row,
                                                 const std::string& text) const {
  auto it = sidecar.find({relation, column, row});
  if (it != sidecar.end()) return it->second;
  return hash_text_vector(text, dim);
}

std::vector<double> hash_text_vector(const std::string& text, size_t dim) {
  std::vector<double> v(dim, 0.0);
  std::string padded = "^" + text + "$";
  for (size_t i = 0; i + 3 <= padded.size(); ++i) {
    uint64_t h = 1469598103934665603ull;  // FNV-1a offset basis
    for (size_t j = 0; j < 3; ++j) {
      h ^= static_cast<unsigned char>(padded[i + j]);
      h *= 1099511628211ull;
    }
    double sign = (h >> 63) ? -1.0 : 1.0;
    v[h % dim] += sign;
  }
  double norm = 0;
  for (double x : v) norm += x * x;
  if (norm > 0) {
    norm = std::sqrt(norm);
    for (double& x : v) x /= norm;
  }
  return v;
}

EmbedderSpec EmbedderSpec::from_schema(const SchemaDef& schema, size_t dim, bool use_text,
                                       bool use_time, bool stack_numeric,
                                       size_t text_dim) {
  EmbedderSpec spec;
  spec.dim = dim;
  spec.use_text = use_text;
  spec.use_time = use_time;
  spec.stack_numeric = stack_numeric;
  spec.text_dim = text_dim;
  for (const auto& rel : schema.relations) {
    std::vector<EmbedMode> modes;
    for (const auto& attr : rel.attributes) {
      switch (attr.semantic.kind) {
        case SemanticKind::Categorical:
          modes.push_back(EmbedMode::CategoricalLookup);
          break;
        case SemanticKind::Numeric:
          modes.push_back(stack_numeric ? EmbedMode::NumericStack : EmbedMode::NumericLinear);
          break;
        case SemanticKind::Text:
          modes.push_back(use_text ? EmbedMode::TextTranscode : EmbedMode::Skip);
          break;
        case SemanticKind::Datetime:
          modes.push_back(use_time ? EmbedMode::Timestamp : EmbedMode::Skip);
          break;
        case SemanticKind::Key:
        case SemanticKind::Ignored:
          modes.push_back(EmbedMode::Skip);
          break;
      }
      if (modes.back() == EmbedMode::Timestamp && dim <= spec.time_dim)
        throw std::invalid_argument("timestamp embedder needs embedding dim > " +
                                    std::to_string(spec.time_dim));
    }
    spec.modes.push_back(std::move(modes));
  }
  return spec;
}

size_t EmbedderSpec::token_count(size_t relation) const {
  size_t n = 0;
  for (EmbedMode m : modes.at(relation))
    if (m != EmbedMode::Skip) ++n;
  return n;
}

std::vector<size_t> EmbedderSpec::token_attrs(size_t relation) const {
  std::vector<size_t> out;
  for (size_t a = 0; a < modes.at(relation).size(); ++a)
    if (modes[relation][a] != EmbedMode::Skip) out.push_back(a);
  return out;
}

std::vector<double> timestamp_features(const DateTime& ts, size_t width) {
  constexpr double tau = 2.0 * std::numbers::pi;
  std::vector<double> f = {
      std::sin(tau * ts.month / 12.0),    std::cos(tau * ts.month / 12.0),
      std::sin(tau * ts.day / 31.0),      std::cos(tau * ts.day / 31.0),
      std::sin(tau * ts.weekday() / 7.0), std::cos(tau * ts.weekday() / 7.0),
      std::sin(tau * ts.hour / 24.0),     std::cos(tau * ts.hour / 24.0),
      std::sin(tau * ts.minute / 60.0),   std::cos(tau * ts.minute / 60.0),
      std::sin(tau * ts.second / 60.0),   std::cos(tau * ts.second / 60.0),
      (ts.year - 2000) / 100.0,
  };
  if (width < f.size()) throw std::invalid_argument("timestamp feature width too small");
  f.resize(width, 0.0);
  return f;
}

Embedder::Embedder(EmbedderSpec spec, const Database& db, TextVectorSource text,
                   std::mt19937_64& rng)
    : spec_(std::move(spec)), text_(std::move(text)) {
  if (spec_.modes.size() != db.schema.relations.size())
    throw std::invalid_argument("embedder spec does not match schema");
  params_.resize(spec_.modes.size());
  for (size_t r = 0; r < spec_.modes.size(); ++r) {
    const auto& rel = db.schema.relations[r];
    relation_names_.push_back(rel.name);
    attr_names_.push_back({});
    params_[r].resize(rel.arity());
    for (size_t a = 0; a < rel.arity(); ++a) {
      attr_names_[r].push_back(rel.attributes[a].name);
      AttrParams& p = params_[r][a];
      p.mode = spec_.modes[r][a];
      size_t d = spec_.dim;
      switch (p.mode) {
        case EmbedMode::Skip:
          break;
        case EmbedMode::CategoricalLookup:
          p.vocab = CategoryVocab::from_column(db.tables[r], a);
          p.table = Var(glorot_uniform(p.vocab.size() + 1, d, rng), true);
          break;
        case EmbedMode::NumericLinear:
          p.w = Var(glorot_uniform(1, d, rng), true);
          p.b = Var(Tensor({1, d}), true);
          p.mask = Var(glorot_uniform(1, d, rng), true);
          break;
        case EmbedMode::NumericStack:
          p.mask = Var(glorot_uniform(1, d, rng), true);
          break;
        case EmbedMode::Timestamp:
          p.w = Var(glorot_uniform(d, spec_.time_dim, rng), true);
          p.b = Var(Tensor({1, d}), true);
          p.mask = Var(glorot_uniform(1, d, rng), true);
          break;
        case EmbedMode::TextTranscode:
          p.w = Var(glorot_uniform(d, spec_.text_dim, rng), true);
          p.b = Var(Tensor({1, d}), true);
          p.mask = Var(glorot_uniform(1, d, rng), true);
          break;
      }
      if (p.mode != EmbedMode::Skip) p.pos = Var(glorot_uniform(1, d, rng), true);
    }
  }
}

const Embedder::AttrParams& Embedder::at(size_t relation, size_t attr) const {
  return params_.at(relation).at(attr);
}

const CategoryVocab& Embedder::vocab(size_t relation, size_t attr) const {
  return at(relation, attr).vocab;
}

Var Embedder::positional(size_t relation, size_t attr) const {
  return at(relation, attr).pos;
}

Var Embedder::embed_categorical(size_t relation, size_t attr, size_t index) const {
  const auto& p = at(relation, attr);
  if (p.mode != EmbedMode::CategoricalLookup)
    throw std::invalid_argument("attribute is not categorical");
  if (index > p.vocab.size()) throw std::invalid_argument("category index out of range");
  return ops::gather_rows(p.table, {static_cast<uint32_t>(index)});
}

Var Embedder::embed_numeric(size_t relation, size_t attr, double x, bool masked) const {
  const auto& p = at(relation, attr);
  if (p.mode != EmbedMode::NumericLinear && p.mode != EmbedMode::NumericStack)
    throw std::invalid_argument("attribute is not numeric");
  if (masked) return ops::gather_rows(p.mask, {0});
  if (!std::isfinite(x)) throw std::domain_error("embed_numeric: non-finite input");
  if (p.mode == EmbedMode::NumericStack)
    return Var(Tensor({1, spec_.dim}, std::vector<double>(spec_.dim, x)));
  Var xv(Tensor::scalar(x));
  return ops::add_rowvec(ops::matmul(xv, p.w), p.b);
}

Var Embedder::embed_timestamp(size_t relation, size_t attr, const DateTime& ts) const {
  const auto& p = at(relation, attr);
  if (p.mode != EmbedMode::Timestamp)
    throw std::invalid_argument("attribute is not a timestamp");
  Var f(Tensor::row(timestamp_features(ts, spec_.time_dim)));
  return ops::add_rowvec(ops::matmul(f, p.w, false, true), p.b);
}

Var Embedder::transcode_text(size_t relation, size_t attr, std::span<const double> v) const {
  const auto& p = at(relation, attr);
  if (p.mode != EmbedMode::TextTranscode)
    throw std::invalid_argument("attribute is not text");
  if (v.size() != spec_.text_dim)
    throw std::invalid_argument("text vector dimension mismatch");
  Var f(Tensor::row(std::vector<double>(v.begin(), v.end())));
  return ops::add_rowvec(ops::matmul(f, p.w, false, true), p.b);
}

Var Embedder::embed_rows(size_t relation, std::span<const Row> rows,
                         std::span<const uint32_t> global_rows) const {
  size_t n = rows.size();
  size_t d = spec_.dim;
  auto attrs = spec_.token_attrs(relation);
  if (attrs.empty()) return Var(Tensor({0, d}));

  std::vector<Var> tokens;
  tokens.reserve(attrs.size());
  for (size_t a : attrs) {
    const auto& p = at(relation, a);
    Var tok;
    switch (p.mode) {
      case EmbedMode::CategoricalLookup: {
        std::vector<uint32_t> idx(n);
        for (size_t i = 0; i < n; ++i)
          idx[i] = static_cast<uint32_t>(p.vocab.index_of(rows[i][a]));
        tok = ops::gather_rows(p.table, std::move(idx));
        break;
      }
      case EmbedMode::NumericLinear:
      case EmbedMode::NumericStack: {
        Tensor xcol({n, 1});
        std::vector<uint32_t> masked;
        for (size_t i = 0; i < n; ++i) {
          auto num = rows[i][a].numeric();
          if (num && std::isfinite(*num))
            xcol.data[i] = *num;
          else
            masked.push_back(static_cast<uint32_t>(i));
        }
        if (p.mode == EmbedMode::NumericLinear) {
          tok = ops::add_rowvec(ops::matmul(Var(xcol), p.w), p.b);
        } else {
          Tensor stacked({n, d});
          for (size_t i = 0; i < n; ++i)
            for (size_t j = 0; j < d; ++j) stacked.at(i, j) = xcol.data[i];
          tok = Var(std::move(stacked));
        }
        if (!masked.empty()) tok = ops::replace_rows(tok, std::move(masked), p.mask);
        break;
      }
      case EmbedMode::Timestamp: {
        Tensor feats({n, spec_.time_dim});
        std::vector<uint32_t> masked;
        for (size_t i = 0; i < n; ++i) {
          if (rows[i][a].is_null()) {
            masked.push_back(static_cast<uint32_t>(i));
            continue;
          }
          auto f = timestamp_features(rows[i][a].as_timestamp(), spec_.time_dim);
          std::copy(f.begin(), f.end(), feats.data.data() + i * spec_.time_dim);
        }
        tok = ops::add_rowvec(ops::matmul(Var(feats), p.w, false, true), p.b);
        if (!masked.empty()) tok = ops::replace_rows(tok, std::move(masked), p.mask);
        break;
      }
      case EmbedMode::TextTranscode: {
        Tensor feats({n, spec_.text_dim});
        std::vector<uint32_t> masked;
        for (size_t i = 0; i < n; ++i) {
          if (rows[i][a].is_null()) {
            masked.push_back(static_cast<uint32_t>(i));
            continue;
          }
          uint32_t grow = global_rows.empty() ? static_cast<uint32_t>(i) : global_rows[i];
          auto v = text_.vector_for(relation_names_[relation], attr_names_[relation][a],
                                    grow, rows[i][a].as_text());
          std::copy(v.begin(), v.end(), feats.data.data() + i * spec_.text_dim);
        }
        tok = ops::add_rowvec(ops::matmul(Var(feats), p.w, false, true), p.b);
        if (!masked.empty()) tok = ops::replace_rows(tok, std::move(masked), p.mask);
        break;
      }
      case EmbedMode::Skip:
        break;
    }
    tokens.push_back(ops::add_rowvec(tok, p.pos));
  }
  if (tokens.size() == 1) return tokens[0];
  return ops::interleave_rows(tokens);
}

void Embedder::collect_params(std::vector<NamedParam>& out) const {
  for (size_t r = 0; r < params_.size(); ++r) {
    for (size_t a = 0; a < params_[r].size(); ++a) {
      const auto& p = params_[r][a];
      if (p.mode == EmbedMode::Skip) continue;
      std::string base = "embed/" + relation_names_[r] + "/" + attr_names_[r][a] + "/";
      if (p.table.defined()) out.push_back({base + "table", p.table});
      if (p.w.defined()) out.push_back({base + "w", p.w});
      if (p.b.defined()) out.push_back({base + "b", p.b});
      if (p.mask.defined()) out.push_back({base + "mask", p.mask});
      if (p.pos.defined()) out.push_back({base + "pos", p.pos});
    }
  }
}

}  // namespace dbdl
