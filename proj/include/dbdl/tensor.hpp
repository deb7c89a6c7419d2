#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace dbdl {

/// Dense row-major f64 array.
struct Tensor {
  std::vector<size_t> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<size_t> s);
  Tensor(std::vector<size_t> s, std::vector<double> d);

  static Tensor zeros(std::vector<size_t> s) { return Tensor(std::move(s)); }
  static Tensor scalar(double v) { return Tensor({1, 1}, {v}); }
  static Tensor row(std::vector<double> v);
  static Tensor matrix(size_t r, size_t c, std::vector<double> v);

  size_t numel() const { return data.size(); }
  size_t ndim() const { return shape.size(); }
  size_t rows() const { return shape.at(0); }
  size_t cols() const { return shape.at(1); }
  double& at(size_t r, size_t c) { return data[r * cols() + c]; }
  double at(size_t r, size_t c) const { return data[r * cols() + c]; }
  bool same_shape(const Tensor& o) const { return shape == o.shape; }
  bool all_finite() const;
};

namespace detail {

struct Node {
  Tensor value;
  Tensor grad;  // empty until first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backprop;

  Tensor& ensure_grad();
};

}  // namespace detail

/// Handle to a node of the recorded computation. Copy = same node.
class Var {
 public:
  Var() = default;
  explicit Var(Tensor v, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Tensor& value() const { return node_->value; }
  Tensor& value_mut() { return node_->value; }
  const Tensor& grad() const;
  bool requires_grad() const { return node_ && node_->requires_grad; }
  void zero_grad();

  std::shared_ptr<detail::Node> node() const { return node_; }
  static Var wrap(std::shared_ptr<detail::Node> n);

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Reverse-mode sweep from a scalar. Gradients accumulate; repeated calls
/// without zeroing add up.
void backward(const Var& loss);

namespace ops {

Var matmul(const Var& a, const Var& b, bool trans_a = false, bool trans_b = false);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double c);
Var add_rowvec(const Var& x, const Var& bias);  // bias 1xC broadcast over rows
Var relu(const Var& x);
Var softmax_rows(const Var& x);
Var layer_norm_rows(const Var& x, const Var& gain, const Var& bias, double eps = 1e-5);
Var sum_all(const Var& x);                        // 1x1
Var sum_rows(const Var& x);                       // NxC -> 1xC
Var mean_rows(const Var& x);                      // NxC -> 1xC
Var gather_rows(const Var& x, std::vector<uint32_t> idx);
Var slice_rows(const Var& x, size_t off, size_t len);
Var slice_cols(const Var& x, size_t off, size_t len);
Var concat_rows(std::span<const Var> parts);
Var concat_cols(std::span<const Var> parts);
/// Copies x, overwriting the listed rows with the 1xC vector v.
Var replace_rows(const Var& x, std::vector<uint32_t> idx, const Var& v);
/// k matrices of identical NxC shape -> (N*k)xC with row i*k+j = mats[j] row i.
Var interleave_rows(std::span<const Var> mats);
Var reshape(const Var& x, std::vector<size_t> shape);
Var dropout(const Var& x, double rho, std::mt19937_64& rng, bool training);
/// out[target[i]] += x[i]; out has out_rows rows.
Var scatter_add_rows(const Var& x, std::vector<uint32_t> target, size_t out_rows);
Var scale_rows(const Var& x, std::vector<double> factors);
/// (n*k)xC -> nxC, averaging each consecutive block of k rows.
Var block_mean_rows(const Var& x, size_t block_len);

/// relu(x W1^T + b1) W2^T + b2, applied row-wise. Weights stored (out x in).
Var ffn(const Var& x, const Var& w1, const Var& b1, const Var& w2, const Var& b2);

/// Mean over rows of -log softmax(logits)[label]. Labels must be in range.
Var cross_entropy(const Var& logits, const std::vector<size_t>& labels);
Var mse(const Var& pred, const Tensor& target);

/// One attention block per entry: softmax(Q_blk K_blk^T / sqrt(D/heads)) V_blk
/// with multi-head column splitting; Q rows [q_off, q_off+q_len), K/V rows
/// [k_off, k_off+k_len). Output has Q's row count. With rng != nullptr and
/// rho > 0, dropout is applied to the attention probabilities.
struct AttnBlock {
  uint32_t q_off, q_len, k_off, k_len;
};
Var block_attention(const Var& q, const Var& k, const Var& v,
                    std::vector<AttnBlock> blocks, size_t heads, double rho = 0.0,
                    std::mt19937_64* rng = nullptr);

/// Per-token-position attention over a node's incident messages. Centers own
/// `tokens` consecutive rows of q; each message owns `tokens` consecutive rows
/// of k/v; message e belongs to center message_center[e]. Scores use scale
/// 1/sqrt(D). Centers without messages yield zero rows.
Var position_attention(const Var& q, const Var& k, const Var& v,
                       std::vector<uint32_t> message_center, size_t tokens,
                       size_t num_centers, double rho = 0.0,
                       std::mt19937_64* rng = nullptr);

/// Training-mode batch normalization over columns (population statistics),
/// differentiable through the batch stats. Requires >= 2 rows. Reports the
/// batch statistics for the caller's running-average update.
Var batch_norm_train(const Var& x, const Var& gain, const Var& bias, double eps,
                     Tensor* batch_mean = nullptr, Tensor* batch_var = nullptr);
/// Eval-mode normalization with fixed statistics.
Var batch_norm_eval(const Var& x, const Var& gain, const Var& bias,
                    const Tensor& mean, const Tensor& var, double eps);

}  // namespace ops

/// Batch normalization layer state: learned gain/bias plus running stats
/// (momentum 0.1).
struct BatchNorm {
  Var gain, bias;
  Tensor running_mean, running_var;
  double momentum = 0.1;
  double eps = 1e-5;

  explicit BatchNorm(size_t channels);
  Var forward(const Var& x, bool training);
};

struct AdamState {
  Tensor m, v;
  size_t t = 0;
};

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Vanilla Adam with bias correction. lr must be positive.
void adam_step(Var& param, AdamState& state, double lr, const AdamHyper& hp = {});

/// Compares analytic gradients of f against central finite differences over
/// every coordinate of every param. Returns the max relative error
/// |a-n| / max(1e-8, |a|+|n|). f must be deterministic.
double grad_check(const std::function<Var()>& f, std::span<Var> params, double h = 1e-6);

struct NamedParam {
  std::string name;
  Var var;
};

/// Binary checkpoint: name, shape, little-endian f64 payload per parameter.
/// Round trip is bit exact.
void save_checkpoint(const std::string& path, std::span<const NamedParam> params);
void load_checkpoint(const std::string& path, std::span<NamedParam> params);

/// Uniform in +-sqrt(6/(fan_in+fan_out)).
Tensor glorot_uniform(size_t rows, size_t cols, std::mt19937_64& rng);

}  // namespace dbdl
