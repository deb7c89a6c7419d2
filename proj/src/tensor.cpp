#include "dbdl/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

namespace dbdl {

namespace {

size_t numel_of(const std::vector<size_t>& shape) {
  size_t n = 1;
  for (size_t d : shape) n *= d;
  return n;
}

double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

}  // namespace

Tensor::Tensor(std::vector<size_t> s) : shape(std::move(s)), data(numel_of(shape), 0.0) {}

Tensor::Tensor(std::vector<size_t> s, std::vector<double> d)
    : shape(std::move(s)), data(std::move(d)) {
  if (data.size() != numel_of(shape))
    throw std::invalid_argument("tensor data size does not match shape");
}

Tensor Tensor::row(std::vector<double> v) {
  size_t n = v.size();
  return Tensor({1, n}, std::move(v));
}

Tensor Tensor::matrix(size_t r, size_t c, std::vector<double> v) {
  return Tensor({r, c}, std::move(v));
}

bool Tensor::all_finite() const {
  for (double x : data)
    if (!std::isfinite(x)) return false;
  return true;
}

namespace detail {

Tensor& Node::ensure_grad() {
  if (grad.data.empty() && value.numel() > 0) grad = Tensor(value.shape);
  if (grad.data.empty() && value.numel() == 0) grad = Tensor(value.shape);
  return grad;
}

}  // namespace detail

using detail::Node;

Var::Var(Tensor v, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(v);
  node_->requires_grad = requires_grad;
}

Var Var::wrap(std::shared_ptr<Node> n) {
  Var v;
  v.node_ = std::move(n);
  return v;
}

const Tensor& Var::grad() const {
  return node_->ensure_grad();
}

void Var::zero_grad() {
  if (node_ && !node_->grad.data.empty())
    std::fill(node_->grad.data.begin(), node_->grad.data.end(), 0.0);
}

void backward(const Var& loss) {
  if (!loss.defined() || loss.value().numel() != 1)
    throw std::invalid_argument("backward: loss must be a scalar");
  auto root = loss.node();
  root->ensure_grad().data[0] += 1.0;
  if (!root->requires_grad) return;

  // children-first order = reverse post-order from the root
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, size_t>> stack;
  stack.emplace_back(root.get(), 0);
  visited.insert(root.get());
  while (!stack.empty()) {
    Node* n = stack.back().first;
    size_t& i = stack.back().second;
    if (i < n->parents.size()) {
      Node* p = n->parents[i++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (!n->backprop) continue;
    n->backprop(*n);
    // interior grads are fully consumed; only leaves accumulate across calls
    std::fill(n->grad.data.begin(), n->grad.data.end(), 0.0);
  }
}

namespace ops {

namespace {

Var make_op(Tensor value, std::vector<Var> parents, std::function<void(Node&)> bp) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  bool rg = false;
  for (const auto& p : parents) rg = rg || p.requires_grad();
  node->requires_grad = rg;
  if (rg) {
    for (auto& p : parents) node->parents.push_back(p.node());
    node->backprop = std::move(bp);
  }
  return Var::wrap(node);
}

void check_2d(const Tensor& t, const char* who) {
  if (t.ndim() != 2) throw std::invalid_argument(std::string(who) + ": expected a matrix");
}

// C += or = op(A) * op(B)
void mm_into(Tensor& c, const Tensor& a, const Tensor& b, bool ta, bool tb, bool accumulate) {
  size_t m = ta ? a.cols() : a.rows();
  size_t k = ta ? a.rows() : a.cols();
  size_t kb = tb ? b.cols() : b.rows();
  size_t n = tb ? b.rows() : b.cols();
  if (k != kb) throw std::invalid_argument("matmul: inner dimensions disagree");
  if (!accumulate) c = Tensor({m, n});
  for (size_t i = 0; i < m; ++i) {
    double* crow = c.data.data() + i * n;
    for (size_t p = 0; p < k; ++p) {
      double av = ta ? a.at(p, i) : a.at(i, p);
      if (av == 0.0) continue;
      if (!tb) {
        const double* brow = b.data.data() + p * n;
        for (size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      } else {
        for (size_t j = 0; j < n; ++j) crow[j] += av * b.at(j, p);
      }
    }
  }
}

Tensor mm(const Tensor& a, const Tensor& b, bool ta, bool tb) {
  Tensor c;
  mm_into(c, a, b, ta, tb, false);
  return c;
}

void acc(Tensor& dst, const Tensor& src) {
  for (size_t i = 0; i < src.data.size(); ++i) dst.data[i] += src.data[i];
}

}  // namespace

Var matmul(const Var& a, const Var& b, bool trans_a, bool trans_b) {
  check_2d(a.value(), "matmul");
  check_2d(b.value(), "matmul");
  Tensor c = mm(a.value(), b.value(), trans_a, trans_b);
  return make_op(std::move(c), {a, b}, [trans_a, trans_b](Node& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    const Tensor& g = self.grad;
    if (pa.requires_grad) {
      Tensor& da = pa.ensure_grad();
      if (!trans_a)
        mm_into(da, g, pb.value, false, !trans_b, true);
      else
        mm_into(da, pb.value, g, trans_b, true, true);
    }
    if (pb.requires_grad) {
      Tensor& db = pb.ensure_grad();
      if (!trans_b)
        mm_into(db, pa.value, g, !trans_a, false, true);
      else
        mm_into(db, g, pa.value, true, trans_a, true);
    }
  });
}

Var add(const Var& a, const Var& b) {
  if (!a.value().same_shape(b.value())) throw std::invalid_argument("add: shape mismatch");
  Tensor c = a.value();
  acc(c, b.value());
  return make_op(std::move(c), {a, b}, [](Node& self) {
    for (auto& p : self.parents)
      if (p->requires_grad) acc(p->ensure_grad(), self.grad);
  });
}

Var sub(const Var& a, const Var& b) {
  if (!a.value().same_shape(b.value())) throw std::invalid_argument("sub: shape mismatch");
  Tensor c = a.value();
  for (size_t i = 0; i < c.data.size(); ++i) c.data[i] -= b.value().data[i];
  return make_op(std::move(c), {a, b}, [](Node& self) {
    if (self.parents[0]->requires_grad) acc(self.parents[0]->ensure_grad(), self.grad);
    if (self.parents[1]->requires_grad) {
      Tensor& db = self.parents[1]->ensure_grad();
      for (size_t i = 0; i < self.grad.data.size(); ++i) db.data[i] -= self.grad.data[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  if (!a.value().same_shape(b.value())) throw std::invalid_argument("mul: shape mismatch");
  Tensor c = a.value();
  for (size_t i = 0; i < c.data.size(); ++i) c.data[i] *= b.value().data[i];
  return make_op(std::move(c), {a, b}, [](Node& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      Tensor& da = pa.ensure_grad();
      for (size_t i = 0; i < self.grad.data.size(); ++i)
        da.data[i] += self.grad.data[i] * pb.value.data[i];
    }
    if (pb.requires_grad) {
      Tensor& db = pb.ensure_grad();
      for (size_t i = 0; i < self.grad.data.size(); ++i)
        db.data[i] += self.grad.data[i] * pa.value.data[i];
    }
  });
}

Var scale(const Var& a, double c) {
  Tensor out = a.value();
  for (double& x : out.data) x *= c;
  return make_op(std::move(out), {a}, [c](Node& self) {
    Tensor& da = self.parents[0]->ensure_grad();
    for (size_t i = 0; i < self.grad.data.size(); ++i) da.data[i] += c * self.grad.data[i];
  });
}

Var add_rowvec(const Var& x, const Var& bias) {
  check_2d(x.value(), "add_rowvec");
  if (bias.value().rows() != 1 || bias.value().cols() != x.value().cols())
    throw std::invalid_argument("add_rowvec: bias must be 1 x cols");
  Tensor out = x.value();
  size_t n = out.rows(), c = out.cols();
  for (size_t i = 0; i < n; ++i)
    for (size_t j = 0; j < c; ++j) out.at(i, j) += bias.value().data[j];
  return make_op(std::move(out), {x, bias}, [](Node& self) {
    if (self.parents[0]->requires_grad) acc(self.parents[0]->ensure_grad(), self.grad);
    if (self.parents[1]->requires_grad) {
      Tensor& db = self.parents[1]->ensure_grad();
      size_t n = self.grad.rows(), c = self.grad.cols();
      for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < c; ++j) db.data[j] += self.grad.at(i, j);
    }
  });
}

Var relu(const Var& x) {
  Tensor out = x.value();
  for (double& v : out.data) v = v > 0 ? v : 0.0;
  Tensor saved = out;
  return make_op(std::move(out), {x}, [saved](Node& self) {
    Tensor& dx = self.parents[0]->ensure_grad();
    for (size_t i = 0; i < self.grad.data.size(); ++i)
      if (saved.data[i] > 0) dx.data[i] += self.grad.data[i];
  });
}

Var softmax_rows(const Var& x) {
  check_2d(x.value(), "softmax_rows");
  if (!x.value().all_finite())
    throw std::domain_error("softmax_rows: non-finite input");
  Tensor out = x.value();
  size_t n = out.rows(), c = out.cols();
  for (size_t i = 0; i < n; ++i) {
    double* row = out.data.data() + i * c;
    double mx = row[0];
    for (size_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    double sum = 0;
    for (size_t j = 0; j < c; ++j) {
      row[j] = std::exp(row[j] - mx);
      sum += row[j];
    }
    for (size_t j = 0; j < c; ++j) row[j] /= sum;
  }
  Tensor probs = out;
  return make_op(std::move(out), {x}, [probs](Node& self) {
    Tensor& dx = self.parents[0]->ensure_grad();
    size_t n = probs.rows(), c = probs.cols();
    for (size_t i = 0; i < n; ++i) {
      double dot = 0;
      for (size_t j = 0; j < c; ++j) dot += self.grad.at(i, j) * probs.at(i, j);
      for (size_t j = 0; j < c; ++j)
        dx.at(i, j) += probs.at(i, j) * (self.grad.at(i, j) - dot);
    }
  });
}

Var layer_norm_rows(const Var& x, const Var& gain, const Var& bias, double eps) {
  check_2d(x.value(), "layer_norm_rows");
  size_t n = x.value().rows(), c = x.value().cols();
  if (gain.value().cols() != c || bias.value().cols() != c)
    throw std::invalid_argument("layer_norm_rows: gain/bias must be 1 x cols");
  Tensor out({n, c});
  Tensor xhat({n, c});
  std::vector<double> inv_std(n);
  for (size_t i = 0; i < n; ++i) {
    double mean = 0;
    for (size_t j = 0; j < c; ++j) mean += x.value().at(i, j);
    mean /= static_cast<double>(c);
    double var = 0;
    for (size_t j = 0; j < c; ++j) {
      double d = x.value().at(i, j) - mean;
      var += d * d;
    }
    var /= static_cast<double>(c);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (size_t j = 0; j < c; ++j) {
      xhat.at(i, j) = (x.value().at(i, j) - mean) * inv_std[i];
      out.at(i, j) = xhat.at(i, j) * gain.value().data[j] + bias.value().data[j];
    }
  }
  return make_op(std::move(out), {x, gain, bias}, [xhat, inv_std](Node& self) {
    auto& px = *self.parents[0];
    auto& pg = *self.parents[1];
    auto& pb = *self.parents[2];
    size_t n = xhat.rows(), c = xhat.cols();
    const Tensor& g = self.grad;
    if (pg.requires_grad) {
      Tensor& dg = pg.ensure_grad();
      for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < c; ++j) dg.data[j] += g.at(i, j) * xhat.at(i, j);
    }
    if (pb.requires_grad) {
      Tensor& db = pb.ensure_grad();
      for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < c; ++j) db.data[j] += g.at(i, j);
    }
    if (px.requires_grad) {
      Tensor& dx = px.ensure_grad();
      const Tensor& gain = pg.value;
      for (size_t i = 0; i < n; ++i) {
        double sum_dxhat = 0, sum_dxhat_xhat = 0;
        for (size_t j = 0; j < c; ++j) {
          double dxh = g.at(i, j) * gain.data[j];
          sum_dxhat += dxh;
          sum_dxhat_xhat += dxh * xhat.at(i, j);
        }
        double inv_c = 1.0 / static_cast<double>(c);
        for (size_t j = 0; j < c; ++j) {
          double dxh = g.at(i, j) * gain.data[j];
          dx.at(i, j) += inv_std[i] *
                         (dxh - inv_c * sum_dxhat - xhat.at(i, j) * inv_c * sum_dxhat_xhat);
        }
      }
    }
  });
}

Var sum_all(const Var& x) {
  double s = 0;
  for (double v : x.value().data) s += v;
  return make_op(Tensor::scalar(s), {x}, [](Node& self) {
    Tensor& dx = self.parents[0]->ensure_grad();
    double g = self.grad.data[0];
    for (double& v : dx.data) v += g;
  });
}

Var sum_rows(const Var& x) {
  check_2d(x.value(), "sum_rows");
  size_t n = x.value().rows(), c = x.value().cols();
  Tensor out({1, c});
  for (size_t i = 0; i < n; ++i)
    for (size_t j = 0; j < c; ++j) out.data[j] += x.value().at(i, j);
  return make_op(std::move(out), {x}, [](Node& self) {
    Tensor& dx = self.parents[0]->ensure_grad();
    size_t n = dx.rows(), c = dx.cols();
    for (size_t i = 0; i < n; ++i)
      for (size_t j = 0; j < c; ++j) dx.at(i, j) += self.grad.data[j];
  });
}

Var mean_rows(const Var& x) {
  size_t n = x.value().rows();
  if (n == 0) throw std::invalid_argument("mean_rows: empty input");
  return scale(sum_rows(x), 1.0 / static_cast<double>(n));
}

Var gather_rows(const Var& x, std::vector<uint32_t> idx) {
  check_2d(x.value(), "gather_rows");
  size_t c = x.value().cols();
  for (uint32_t i : idx)
    if (i >= x.value().rows()) throw std::invalid_argument("gather_rows: index out of range");
  Tensor out({idx.size(), c});
  for (size_t r = 0; r < idx.size(); ++r)
    std::copy_n(x.value().data.data() + idx[r] * c, c, out.data.data() + r * c);
  return make_op(std::move(out), {x}, [idx = std::move(idx)](Node& self) {
    Tensor& dx = self.parents[0]->ensure_grad();
    size_t c = dx.cols();
    for (size_t r = 0; r < idx.size(); ++r)
      for (size_t j = 0; j < c; ++j) dx.at(idx[r], j) += self.grad.at(r, j);
  });
}

Var slice_rows(const Var& x, size_t off, size_t len) {
  check_2d(x.value(), "slice_rows");
  if (off + len > x.value().rows()) throw std::invalid_argument("slice_rows: out of range");
  size_t c = x.value().cols();
  Tensor out({len, c});
  std::copy_n(x.value().data.data() + off * c, len * c, out.data.data());
  return make_op(std::move(out), {x}, [off, len, c](Node& self) {
    Tensor& dx = self.parents[0]->ensure_grad();
    for (size_t i = 0; i < len * c; ++i) dx.data[off * c + i] += self.grad.data[i];
  });
}

Var slice_cols(const Var& x, size_t off, size_t len) {
  check_2d(x.value(), "slice_cols");
  if (off + len > x.value().cols()) throw std::invalid_argument("slice_cols: out of range");
  size_t n = x.value().rows();
  Tensor out({n, len});
  for (size_t i = 0; i < n; ++i)
    std::copy_n(x.value().data.data() + i * x.value().cols() + off, len,
                out.data.data() + i * len);
  return make_op(std::move(out), {x}, [off, len](Node& self) {
    Tensor& dx = self.parents[0]->ensure_grad();
    size_t n = dx.rows();
    for (size_t i = 0; i < n; ++i)
      for (size_t j = 0; j < len; ++j) dx.at(i, off + j) += self.grad.at(i, j);
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no parts");
  size_t c = parts[0].value().cols(), n = 0;
  for (const auto& p : parts) {
    check_2d(p.value(), "concat_rows");
    if (p.value().cols() != c) throw std::invalid_argument("concat_rows: column mismatch");
    n += p.value().rows();
  }
  Tensor out({n, c});
  size_t off = 0;
  std::vector<size_t> lens;
  for (const auto& p : parts) {
    std::copy_n(p.value().data.data(), p.value().numel(), out.data.data() + off * c);
    lens.push_back(p.value().rows());
    off += p.value().rows();
  }
  std::vector<Var> parents(parts.begin(), parts.end());
  return make_op(std::move(out), std::move(parents), [lens, c](Node& self) {
    size_t off = 0;
    for (size_t k = 0; k < lens.size(); ++k) {
      if (self.parents[k]->requires_grad) {
        Tensor& dp = self.parents[k]->ensure_grad();
        for (size_t i = 0; i < lens[k] * c; ++i) dp.data[i] += self.grad.data[off * c + i];
      }
      off += lens[k];
    }
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no parts");
  size_t n = parts[0].value().rows(), c = 0;
  for (const auto& p : parts) {
    check_2d(p.value(), "concat_cols");
    if (p.value().rows() != n) throw std::invalid_argument("concat_cols: row mismatch");
    c += p.value().cols();
  }
  Tensor out({n, c});
  size_t off = 0;
  std::vector<size_t> widths;
  for (const auto& p : parts) {
    size_t w = p.value().cols();
    for (size_t i = 0; i < n; ++i)
      std::copy_n(p.value().data.data() + i * w, w, out.data.data() + i * c + off);
    widths.push_back(w);
    off += w;
  }
  std::vector<Var> parents(parts.begin(), parts.end());
  return make_op(std::move(out), std::move(parents), [widths, n, c](Node& self) {
    size_t off = 0;
    for (size_t k = 0; k < widths.size(); ++k) {
      if (self.parents[k]->requires_grad) {
        Tensor& dp = self.parents[k]->ensure_grad();
        for (size_t i = 0; i < n; ++i)
          for (size_t j = 0; j < widths[k]; ++j)
            dp.at(i, j) += self.grad.data[i * c + off + j];
      }
      off += widths[k];
    }
  });
}

Var replace_rows(const Var& x, std::vector<uint32_t> idx, const Var& v) {
  check_2d(x.value(), "replace_rows");
  size_t c = x.value().cols();
  if (v.value().rows() != 1 || v.value().cols() != c)
    throw std::invalid_argument("replace_rows: replacement must be 1 x cols");
  std::sort(idx.begin(), idx.end());
  idx.erase(std::unique(idx.begin(), idx.end()), idx.end());
  for (uint32_t i : idx)
    if (i >= x.value().rows()) throw std::invalid_argument("replace_rows: index out of range");
  Tensor out = x.value();
  for (uint32_t i : idx)
    std::copy_n(v.value().data.data(), c, out.data.data() + i * c);
  return make_op(std::move(out), {x, v}, [idx = std::move(idx), c](Node& self) {
    auto& px = *self.parents[0];
    auto& pv = *self.parents[1];
    if (px.requires_grad) {
      Tensor& dx = px.ensure_grad();
      size_t k = 0;
      for (size_t i = 0; i < dx.rows(); ++i) {
        if (k < idx.size() && idx[k] == i) {
          ++k;
          continue;
        }
        for (size_t j = 0; j < c; ++j) dx.at(i, j) += self.grad.at(i, j);
      }
    }
    if (pv.requires_grad) {
      Tensor& dv = pv.ensure_grad();
      for (uint32_t i : idx)
        for (size_t j = 0; j < c; ++j) dv.data[j] += self.grad.at(i, j);
    }
  });
}

Var interleave_rows(std::span<const Var> mats) {
  if (mats.empty()) throw std::invalid_argument("interleave_rows: no inputs");
  size_t n = mats[0].value().rows(), c = mats[0].value().cols(), k = mats.size();
  for (const auto& m : mats)
    if (m.value().rows() != n || m.value().cols() != c)
      throw std::invalid_argument("interleave_rows: shape mismatch");
  Tensor out({n * k, c});
  for (size_t j = 0; j < k; ++j)
    for (size_t i = 0; i < n; ++i)
      std::copy_n(mats[j].value().data.data() + i * c, c,
                  out.data.data() + (i * k + j) * c);
  std::vector<Var> parents(mats.begin(), mats.end());
  return make_op(std::move(out), std::move(parents), [n, c, k](Node& self) {
    for (size_t j = 0; j < k; ++j) {
      if (!self.parents[j]->requires_grad) continue;
      Tensor& dm = self.parents[j]->ensure_grad();
      for (size_t i = 0; i < n; ++i)
        for (size_t col = 0; col < c; ++col)
          dm.at(i, col) += self.grad.at(i * k + j, col);
    }
  });
}

Var reshape(const Var& x, std::vector<size_t> shape) {
  if (numel_of(shape) != x.value().numel())
    throw std::invalid_argument("reshape: element count mismatch");
  Tensor out(std::move(shape), x.value().data);
  return make_op(std::move(out), {x}, [](Node& self) {
    Tensor& dx = self.parents[0]->ensure_grad();
    for (size_t i = 0; i < self.grad.data.size(); ++i) dx.data[i] += self.grad.data[i];
  });
}

Var scatter_add_rows(const Var& x, std::vector<uint32_t> target, size_t out_rows) {
  check_2d(x.value(), "scatter_add_rows");
  if (target.size() != x.value().rows())
    throw std::invalid_argument("scatter_add_rows: one target per row required");
  size_t c = x.value().cols();
  for (uint32_t t : target)
    if (t >= out_rows) throw std::invalid_argument("scatter_add_rows: target out of range");
  Tensor out({out_rows, c});
  for (size_t i = 0; i < target.size(); ++i)
    for (size_t j = 0; j < c; ++j) out.at(target[i], j) += x.value().at(i, j);
  return make_op(std::move(out), {x}, [target = std::move(target), c](Node& self) {
    Tensor& dx = self.parents[0]->ensure_grad();
    for (size_t i = 0; i < target.size(); ++i)
      for (size_t j = 0; j < c; ++j) dx.at(i, j) += self.grad.at(target[i], j);
  });
}

Var scale_rows(const Var& x, std::vector<double> factors) {
  check_2d(x.value(), "scale_rows");
  if (factors.size() != x.value().rows())
    throw std::invalid_argument("scale_rows: one factor per row required");
  Tensor out = x.value();
  size_t c = out.cols();
  for (size_t i = 0; i < factors.size(); ++i)
    for (size_t j = 0; j < c; ++j) out.at(i, j) *= factors[i];
  return make_op(std::move(out), {x}, [factors = std::move(factors), c](Node& self) {
    Tensor& dx = self.parents[0]->ensure_grad();
    for (size_t i = 0; i < factors.size(); ++i)
      for (size_t j = 0; j < c; ++j) dx.at(i, j) += factors[i] * self.grad.at(i, j);
  });
}

Var block_mean_rows(const Var& x, size_t block_len) {
  check_2d(x.value(), "block_mean_rows");
  if (block_len == 0 || x.value().rows() % block_len != 0)
    throw std::invalid_argument("block_mean_rows: rows not divisible by block length");
  size_t n = x.value().rows() / block_len, c = x.value().cols();
  Tensor out({n, c});
  double inv = 1.0 / static_cast<double>(block_len);
  for (size_t b = 0; b < n; ++b)
    for (size_t p = 0; p < block_len; ++p)
      for (size_t j = 0; j < c; ++j) out.at(b, j) += inv * x.value().at(b * block_len + p, j);
  return make_op(std::move(out), {x}, [block_len, inv, c](Node& self) {
    Tensor& dx = self.parents[0]->ensure_grad();
    size_t n = self.grad.rows();
    for (size_t b = 0; b < n; ++b)
      for (size_t p = 0; p < block_len; ++p)
        for (size_t j = 0; j < c; ++j)
          dx.at(b * block_len + p, j) += inv * self.grad.at(b, j);
  });
}

Var dropout(const Var& x, double rho, std::mt19937_64& rng, bool training) {
  if (!training || rho <= 0.0) return x;
  if (rho >= 1.0) throw std::invalid_argument("dropout: rho must be < 1");
  double keep = 1.0 - rho;
  Tensor out = x.value();
  std::vector<uint8_t> mask(out.numel());
  for (size_t i = 0; i < out.numel(); ++i) {
    mask[i] = uniform01(rng) < keep ? 1 : 0;
    out.data[i] = mask[i] ? out.data[i] / keep : 0.0;
  }
  return make_op(std::move(out), {x}, [mask = std::move(mask), keep](Node& self) {
    Tensor& dx = self.parents[0]->ensure_grad();
    for (size_t i = 0; i < self.grad.data.size(); ++i)
      if (mask[i]) dx.data[i] += self.grad.data[i] / keep;
  });
}

Var ffn(const Var& x, const Var& w1, const Var& b1, const Var& w2, const Var& b2) {
  Var h = relu(add_rowvec(matmul(x, w1, false, true), b1));
  return add_rowvec(matmul(h, w2, false, true), b2);
}

Var cross_entropy(const Var& logits, const std::vector<size_t>& labels) {
  check_2d(logits.value(), "cross_entropy");
  size_t n = logits.value().rows(), c = logits.value().cols();
  if (labels.size() != n) throw std::invalid_argument("cross_entropy: label count mismatch");
  for (size_t l : labels)
    if (l >= c) throw std::invalid_argument("cross_entropy: label out of range");
  Tensor probs({n, c});
  double loss = 0;
  for (size_t i = 0; i < n; ++i) {
    double mx = logits.value().at(i, 0);
    for (size_t j = 1; j < c; ++j) mx = std::max(mx, logits.value().at(i, j));
    double sum = 0;
    for (size_t j = 0; j < c; ++j) {
      probs.at(i, j) = std::exp(logits.value().at(i, j) - mx);
      sum += probs.at(i, j);
    }
    for (size_t j = 0; j < c; ++j) probs.at(i, j) /= sum;
    loss -= std::log(probs.at(i, labels[i]));
  }
  loss /= static_cast<double>(n);
  return make_op(Tensor::scalar(loss), {logits}, [probs, labels](Node& self) {
    Tensor& dl = self.parents[0]->ensure_grad();
    size_t n = probs.rows(), c = probs.cols();
    double g = self.grad.data[0] / static_cast<double>(n);
    for (size_t i = 0; i < n; ++i)
      for (size_t j = 0; j < c; ++j)
        dl.at(i, j) += g * (probs.at(i, j) - (labels[i] == j ? 1.0 : 0.0));
  });
}

Var mse(const Var& pred, const Tensor& target) {
  if (!pred.value().same_shape(target))
    throw std::invalid_argument("mse: shape mismatch");
  size_t n = pred.value().numel();
  if (n == 0) throw std::invalid_argument("mse: empty input");
  double loss = 0;
  for (size_t i = 0; i < n; ++i) {
    double d = pred.value().data[i] - target.data[i];
    loss += d * d;
  }
  loss /= static_cast<double>(n);
  return make_op(Tensor::scalar(loss), {pred}, [target](Node& self) {
    Tensor& dp = self.parents[0]->ensure_grad();
    size_t n = target.numel();
    double g = 2.0 * self.grad.data[0] / static_cast<double>(n);
    for (size_t i = 0; i < n; ++i)
      dp.data[i] += g * (self.parents[0]->value.data[i] - target.data[i]);
  });
}

Var block_attention(const Var& q, const Var& k, const Var& v,
                    std::vector<AttnBlock> blocks, size_t heads, double rho,
                    std::mt19937_64* rng) {
  check_2d(q.value(), "block_attention");
  size_t d = q.value().cols();
  if (k.value().cols() != d || v.value().cols() != d)
    throw std::invalid_argument("block_attention: dimension mismatch");
  if (heads == 0 || d % heads != 0)
    throw std::invalid_argument("block_attention: dim not divisible by heads");
  size_t dk = d / heads;
  double alpha = 1.0 / std::sqrt(static_cast<double>(dk));
  bool use_dropout = rng != nullptr && rho > 0.0;
  double keep = 1.0 - rho;

  Tensor out({q.value().rows(), d});
  // per (block, head): softmax probabilities and optional dropout mask
  std::vector<Tensor> saved_probs(blocks.size() * heads);
  std::vector<std::vector<uint8_t>> saved_masks(use_dropout ? blocks.size() * heads : 0);

  const Tensor& Q = q.value();
  const Tensor& K = k.value();
  const Tensor& V = v.value();
  for (size_t b = 0; b < blocks.size(); ++b) {
    const auto& blk = blocks[b];
    if (blk.q_off + blk.q_len > Q.rows() || blk.k_off + blk.k_len > K.rows())
      throw std::invalid_argument("block_attention: block out of range");
    if (blk.q_len == 0 || blk.k_len == 0) continue;
    for (size_t h = 0; h < heads; ++h) {
      size_t co = h * dk;
      Tensor probs({blk.q_len, blk.k_len});
      for (size_t i = 0; i < blk.q_len; ++i) {
        const double* qrow = Q.data.data() + (blk.q_off + i) * d + co;
        double mx = -1e300;
        for (size_t j = 0; j < blk.k_len; ++j) {
          const double* krow = K.data.data() + (blk.k_off + j) * d + co;
          double s = 0;
          for (size_t t = 0; t < dk; ++t) s += qrow[t] * krow[t];
          s *= alpha;
          probs.at(i, j) = s;
          mx = std::max(mx, s);
        }
        double sum = 0;
        for (size_t j = 0; j < blk.k_len; ++j) {
          probs.at(i, j) = std::exp(probs.at(i, j) - mx);
          sum += probs.at(i, j);
        }
        for (size_t j = 0; j < blk.k_len; ++j) probs.at(i, j) /= sum;
      }
      std::vector<uint8_t> mask;
      if (use_dropout) {
        mask.resize(probs.numel());
        for (size_t i = 0; i < probs.numel(); ++i)
          mask[i] = uniform01(*rng) < keep ? 1 : 0;
      }
      for (size_t i = 0; i < blk.q_len; ++i) {
        double* orow = out.data.data() + (blk.q_off + i) * d + co;
        for (size_t j = 0; j < blk.k_len; ++j) {
          double p = probs.at(i, j);
          if (use_dropout) p = mask[i * blk.k_len + j] ? p / keep : 0.0;
          if (p == 0.0) continue;
          const double* vrow = V.data.data() + (blk.k_off + j) * d + co;
          for (size_t t = 0; t < dk; ++t) orow[t] += p * vrow[t];
        }
      }
      saved_probs[b * heads + h] = std::move(probs);
      if (use_dropout) saved_masks[b * heads + h] = std::move(mask);
    }
  }

  return make_op(
      std::move(out), {q, k, v},
      [blocks = std::move(blocks), heads, dk, alpha, use_dropout, keep,
       saved_probs = std::move(saved_probs),
       saved_masks = std::move(saved_masks)](Node& self) {
        auto& pq = *self.parents[0];
        auto& pk = *self.parents[1];
        auto& pv = *self.parents[2];
        size_t d = heads * dk;
        const Tensor& g = self.grad;
        Tensor* dq = pq.requires_grad ? &pq.ensure_grad() : nullptr;
        Tensor* dkk = pk.requires_grad ? &pk.ensure_grad() : nullptr;
        Tensor* dv = pv.requires_grad ? &pv.ensure_grad() : nullptr;
        for (size_t b = 0; b < blocks.size(); ++b) {
          const auto& blk = blocks[b];
          if (blk.q_len == 0 || blk.k_len == 0) continue;
          for (size_t h = 0; h < heads; ++h) {
            size_t co = h * dk;
            const Tensor& probs = saved_probs[b * heads + h];
            const std::vector<uint8_t>* mask =
                use_dropout ? &saved_masks[b * heads + h] : nullptr;
            for (size_t i = 0; i < blk.q_len; ++i) {
              const double* grow = g.data.data() + (blk.q_off + i) * d + co;
              // dP~ then undo dropout to dP
              std::vector<double> dp(blk.k_len);
              for (size_t j = 0; j < blk.k_len; ++j) {
                const double* vrow =
                    pv.value.data.data() + (blk.k_off + j) * d + co;
                double s = 0;
                for (size_t t = 0; t < dk; ++t) s += grow[t] * vrow[t];
                double ptilde = probs.at(i, j);
                if (use_dropout)
                  ptilde = (*mask)[i * blk.k_len + j] ? ptilde / keep : 0.0;
                if (dv && ptilde != 0.0) {
                  double* dvrow = dv->data.data() + (blk.k_off + j) * d + co;
                  for (size_t t = 0; t < dk; ++t) dvrow[t] += ptilde * grow[t];
                }
                dp[j] = use_dropout
                            ? ((*mask)[i * blk.k_len + j] ? s / keep : 0.0)
                            : s;
              }
              double dot = 0;
              for (size_t j = 0; j < blk.k_len; ++j) dot += dp[j] * probs.at(i, j);
              const double* qrow = pq.value.data.data() + (blk.q_off + i) * d + co;
              for (size_t j = 0; j < blk.k_len; ++j) {
                double ds = probs.at(i, j) * (dp[j] - dot) * alpha;
                if (ds == 0.0) continue;
                const double* krow =
                    pk.value.data.data() + (blk.k_off + j) * d + co;
                if (dq) {
                  double* dqrow = dq->data.data() + (blk.q_off + i) * d + co;
                  for (size_t t = 0; t < dk; ++t) dqrow[t] += ds * krow[t];
                }
                if (dkk) {
                  double* dkrow = dkk->data.data() + (blk.k_off + j) * d + co;
                  for (size_t t = 0; t < dk; ++t) dkrow[t] += ds * qrow[t];
                }
              }
            }
          }
        }
      });
}

Var position_attention(const Var& q, const Var& k, const Var& v,
                       std::vector<uint32_t> message_center, size_t tokens,
                       size_t num_centers, double rho, std::mt19937_64* rng) {
  check_2d(q.value(), "position_attention");
  size_t d = q.value().cols();
  if (k.value().cols() != d || v.value().cols() != d)
    throw std::invalid_argument("position_attention: dimension mismatch");
  size_t e = message_center.size();
  if (k.value().rows() != e * tokens || v.value().rows() != e * tokens)
    throw std::invalid_argument("position_attention: message row count mismatch");
  if (q.value().rows() != num_centers * tokens)
    throw std::invalid_argument("position_attention: center row count mismatch");
  double alpha = 1.0 / std::sqrt(static_cast<double>(d));
  bool use_dropout = rng != nullptr && rho > 0.0;
  double keep = 1.0 - rho;

  // messages grouped per center, ascending message id
  std::vector<std::vector<uint32_t>> by_center(num_centers);
  for (uint32_t m = 0; m < e; ++m) {
    if (message_center[m] >= num_centers)
      throw std::invalid_argument("position_attention: center id out of range");
    by_center[message_center[m]].push_back(m);
  }

  Tensor out({num_centers * tokens, d});
  Tensor probs({std::max<size_t>(1, e * tokens), 1});  // prob of message m at position p
  std::vector<uint8_t> mask(use_dropout ? e * tokens : 0);

  const Tensor& Q = q.value();
  const Tensor& K = k.value();
  const Tensor& V = v.value();
  for (size_t c = 0; c < num_centers; ++c) {
    const auto& ms = by_center[c];
    if (ms.empty()) continue;
    for (size_t p = 0; p < tokens; ++p) {
      const double* qrow = Q.data.data() + (c * tokens + p) * d;
      double mx = -1e300;
      std::vector<double> sc(ms.size());
      for (size_t mi = 0; mi < ms.size(); ++mi) {
        const double* krow = K.data.data() + (ms[mi] * tokens + p) * d;
        double s = 0;
        for (size_t t = 0; t < d; ++t) s += qrow[t] * krow[t];
        sc[mi] = s * alpha;
        mx = std::max(mx, sc[mi]);
      }
      double sum = 0;
      for (double& s : sc) {
        s = std::exp(s - mx);
        sum += s;
      }
      double* orow = out.data.data() + (c * tokens + p) * d;
      for (size_t mi = 0; mi < ms.size(); ++mi) {
        double prob = sc[mi] / sum;
        probs.data[ms[mi] * tokens + p] = prob;
        double ptilde = prob;
        if (use_dropout) {
          mask[ms[mi] * tokens + p] = uniform01(*rng) < keep ? 1 : 0;
          ptilde = mask[ms[mi] * tokens + p] ? prob / keep : 0.0;
        }
        if (ptilde == 0.0) continue;
        const double* vrow = V.data.data() + (ms[mi] * tokens + p) * d;
        for (size_t t = 0; t < d; ++t) orow[t] += ptilde * vrow[t];
      }
    }
  }

  return make_op(
      std::move(out), {q, k, v},
      [by_center = std::move(by_center), tokens, alpha, use_dropout, keep,
       probs = std::move(probs), mask = std::move(mask)](Node& self) {
        auto& pq = *self.parents[0];
        auto& pk = *self.parents[1];
        auto& pv = *self.parents[2];
        size_t d = pq.value.cols();
        const Tensor& g = self.grad;
        Tensor* dq = pq.requires_grad ? &pq.ensure_grad() : nullptr;
        Tensor* dkk = pk.requires_grad ? &pk.ensure_grad() : nullptr;
        Tensor* dv = pv.requires_grad ? &pv.ensure_grad() : nullptr;
        for (size_t c = 0; c < by_center.size(); ++c) {
          const auto& ms = by_center[c];
          if (ms.empty()) continue;
          for (size_t p = 0; p < tokens; ++p) {
            const double* grow = g.data.data() + (c * tokens + p) * d;
            std::vector<double> dp(ms.size());
            for (size_t mi = 0; mi < ms.size(); ++mi) {
              size_t slot = ms[mi] * tokens + p;
              const double* vrow = pv.value.data.data() + slot * d;
              double s = 0;
              for (size_t t = 0; t < d; ++t) s += grow[t] * vrow[t];
              double prob = probs.data[slot];
              double ptilde = prob;
              if (use_dropout) ptilde = mask[slot] ? prob / keep : 0.0;
              if (dv && ptilde != 0.0) {
                double* dvrow = dv->data.data() + slot * d;
                for (size_t t = 0; t < d; ++t) dvrow[t] += ptilde * grow[t];
              }
              dp[mi] = use_dropout ? (mask[slot] ? s / keep : 0.0) : s;
            }
            double dot = 0;
            for (size_t mi = 0; mi < ms.size(); ++mi)
              dot += dp[mi] * probs.data[ms[mi] * tokens + p];
            const double* qrow = pq.value.data.data() + (c * tokens + p) * d;
            for (size_t mi = 0; mi < ms.size(); ++mi) {
              size_t slot = ms[mi] * tokens + p;
              double ds = probs.data[slot] * (dp[mi] - dot) * alpha;
              if (ds == 0.0) continue;
              const double* krow = pk.value.data.data() + slot * d;
              if (dq) {
                double* dqrow = dq->data.data() + (c * tokens + p) * d;
                for (size_t t = 0; t < d; ++t) dqrow[t] += ds * krow[t];
              }
              if (dkk) {
                double* dkrow = dkk->data.data() + slot * d;
                for (size_t t = 0; t < d; ++t) dkrow[t] += ds * qrow[t];
              }
            }
          }
        }
      });
}

Var batch_norm_train(const Var& x, const Var& gain, const Var& bias, double eps,
                     Tensor* batch_mean, Tensor* batch_var) {
  check_2d(x.value(), "batch_norm");
  size_t n = x.value().rows(), c = x.value().cols();
  if (n < 2) throw std::invalid_argument("batch_norm: training needs a batch of >= 2");
  if (gain.value().cols() != c || bias.value().cols() != c)
    throw std::invalid_argument("batch_norm: gain/bias must be 1 x cols");
  Tensor mean({1, c}), var({1, c});
  for (size_t j = 0; j < c; ++j) {
    double m = 0;
    for (size_t i = 0; i < n; ++i) m += x.value().at(i, j);
    m /= static_cast<double>(n);
    double v = 0;
    for (size_t i = 0; i < n; ++i) {
      double dd = x.value().at(i, j) - m;
      v += dd * dd;
    }
    v /= static_cast<double>(n);
    mean.data[j] = m;
    var.data[j] = v;
  }
  if (batch_mean) *batch_mean = mean;
  if (batch_var) *batch_var = var;

  Tensor xhat({n, c});
  std::vector<double> inv_std(c);
  Tensor out({n, c});
  for (size_t j = 0; j < c; ++j) inv_std[j] = 1.0 / std::sqrt(var.data[j] + eps);
  for (size_t i = 0; i < n; ++i)
    for (size_t j = 0; j < c; ++j) {
      xhat.at(i, j) = (x.value().at(i, j) - mean.data[j]) * inv_std[j];
      out.at(i, j) = xhat.at(i, j) * gain.value().data[j] + bias.value().data[j];
    }
  return make_op(std::move(out), {x, gain, bias}, [xhat, inv_std](Node& self) {
    auto& px = *self.parents[0];
    auto& pg = *self.parents[1];
    auto& pb = *self.parents[2];
    size_t n = xhat.rows(), c = xhat.cols();
    const Tensor& g = self.grad;
    if (pg.requires_grad) {
      Tensor& dg = pg.ensure_grad();
      for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < c; ++j) dg.data[j] += g.at(i, j) * xhat.at(i, j);
    }
    if (pb.requires_grad) {
      Tensor& db = pb.ensure_grad();
      for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < c; ++j) db.data[j] += g.at(i, j);
    }
    if (px.requires_grad) {
      Tensor& dx = px.ensure_grad();
      const Tensor& gain = pg.value;
      double inv_n = 1.0 / static_cast<double>(n);
      for (size_t j = 0; j < c; ++j) {
        double sum_dxhat = 0, sum_dxhat_xhat = 0;
        for (size_t i = 0; i < n; ++i) {
          double dxh = g.at(i, j) * gain.data[j];
          sum_dxhat += dxh;
          sum_dxhat_xhat += dxh * xhat.at(i, j);
        }
        for (size_t i = 0; i < n; ++i) {
          double dxh = g.at(i, j) * gain.data[j];
          dx.at(i, j) += inv_std[j] *
                         (dxh - inv_n * sum_dxhat - xhat.at(i, j) * inv_n * sum_dxhat_xhat);
        }
      }
    }
  });
}

Var batch_norm_eval(const Var& x, const Var& gain, const Var& bias, const Tensor& mean,
                    const Tensor& var, double eps) {
  check_2d(x.value(), "batch_norm");
  size_t n = x.value().rows(), c = x.value().cols();
  if (gain.value().cols() != c || bias.value().cols() != c || mean.cols() != c ||
      var.cols() != c)
    throw std::invalid_argument("batch_norm: channel mismatch");
  std::vector<double> inv_std(c);
  for (size_t j = 0; j < c; ++j) inv_std[j] = 1.0 / std::sqrt(var.data[j] + eps);
  Tensor out({n, c});
  Tensor xhat({n, c});
  for (size_t i = 0; i < n; ++i)
    for (size_t j = 0; j < c; ++j) {
      xhat.at(i, j) = (x.value().at(i, j) - mean.data[j]) * inv_std[j];
      out.at(i, j) = xhat.at(i, j) * gain.value().data[j] + bias.value().data[j];
    }
  return make_op(std::move(out), {x, gain, bias}, [xhat, inv_std](Node& self) {
    auto& px = *self.parents[0];
    auto& pg = *self.parents[1];
    auto& pb = *self.parents[2];
    size_t n = xhat.rows(), c = xhat.cols();
    if (pg.requires_grad) {
      Tensor& dg = pg.ensure_grad();
      for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < c; ++j) dg.data[j] += self.grad.at(i, j) * xhat.at(i, j);
    }
    if (pb.requires_grad) {
      Tensor& db = pb.ensure_grad();
      for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < c; ++j) db.data[j] += self.grad.at(i, j);
    }
    if (px.requires_grad) {
      Tensor& dx = px.ensure_grad();
      const Tensor& gain = pg.value;
      for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < c; ++j)
          dx.at(i, j) += self.grad.at(i, j) * gain.data[j] * inv_std[j];
    }
  });
}

}  // namespace ops

BatchNorm::BatchNorm(size_t channels)
    : gain(Tensor({1, channels}, std::vector<double>(channels, 1.0)), true),
      bias(Tensor({1, channels}), true),
      running_mean({1, channels}),
      running_var(Tensor({1, channels}, std::vector<double>(channels, 1.0))) {}

Var BatchNorm::forward(const Var& x, bool training) {
  if (training) {
    Tensor bm, bv;
    Var out = ops::batch_norm_train(x, gain, bias, eps, &bm, &bv);
    for (size_t j = 0; j < bm.numel(); ++j) {
      running_mean.data[j] = (1.0 - momentum) * running_mean.data[j] + momentum * bm.data[j];
      running_var.data[j] = (1.0 - momentum) * running_var.data[j] + momentum * bv.data[j];
    }
    return out;
  }
  return ops::batch_norm_eval(x, gain, bias, running_mean, running_var, eps);
}

void adam_step(Var& param, AdamState& state, double lr, const AdamHyper& hp) {
  if (lr <= 0) throw std::invalid_argument("adam_step: lr must be positive");
  Tensor& value = param.value_mut();
  const Tensor& grad = param.grad();
  if (state.m.data.empty()) {
    state.m = Tensor(value.shape);
    state.v = Tensor(value.shape);
  }
  if (!state.m.same_shape(value))
    throw std::invalid_argument("adam_step: state shape mismatch");
  state.t += 1;
  double bc1 = 1.0 - std::pow(hp.beta1, static_cast<double>(state.t));
  double bc2 = 1.0 - std::pow(hp.beta2, static_cast<double>(state.t));
  for (size_t i = 0; i < value.numel(); ++i) {
    double g = grad.data[i];
    state.m.data[i] = hp.beta1 * state.m.data[i] + (1.0 - hp.beta1) * g;
    state.v.data[i] = hp.beta2 * state.v.data[i] + (1.0 - hp.beta2) * g * g;
    double mhat = state.m.data[i] / bc1;
    double vhat = state.v.data[i] / bc2;
    value.data[i] -= lr * mhat / (std::sqrt(vhat) + hp.eps);
  }
}

double grad_check(const std::function<Var()>& f, std::span<Var> params, double h) {
  Var loss = f();
  std::vector<Tensor> saved_grads;
  for (auto& p : params) p.zero_grad();
  backward(loss);
  for (auto& p : params) saved_grads.push_back(p.grad());

  double max_err = 0;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    Tensor& value = params[pi].value_mut();
    for (size_t i = 0; i < value.numel(); ++i) {
      double orig = value.data[i];
      value.data[i] = orig + h;
      double fp = f().value().data[0];
      value.data[i] = orig - h;
      double fm = f().value().data[0];
      value.data[i] = orig;
      double numeric = (fp - fm) / (2.0 * h);
      double analytic = saved_grads[pi].data[i];
      double err = std::abs(analytic - numeric) /
                   std::max(1e-8, std::abs(analytic) + std::abs(numeric));
      max_err = std::max(max_err, err);
    }
  }
  return max_err;
}

namespace {

template <typename T>
void write_pod(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
void read_pod(std::istream& in, T& v) {
  in.read(reinterpret_cast<char*>(&v), sizeof v);
}

}  // namespace

void save_checkpoint(const std::string& path, std::span<const NamedParam> params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open checkpoint for writing: " + path);
  out.write("DBDL0001", 8);
  write_pod(out, static_cast<uint64_t>(params.size()));
  for (const auto& p : params) {
    write_pod(out, static_cast<uint64_t>(p.name.size()));
    out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    const Tensor& t = p.var.value();
    write_pod(out, static_cast<uint64_t>(t.ndim()));
    for (size_t d : t.shape) write_pod(out, static_cast<uint64_t>(d));
    out.write(reinterpret_cast<const char*>(t.data.data()),
              static_cast<std::streamsize>(t.data.size() * sizeof(double)));
  }
  if (!out) throw std::runtime_error("checkpoint write failed: " + path);
}

void load_checkpoint(const std::string& path, std::span<NamedParam> params) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
  char magic[8];
  in.read(magic, 8);
  if (std::memcmp(magic, "DBDL0001", 8) != 0)
    throw std::runtime_error("bad checkpoint magic: " + path);
  uint64_t count = 0;
  read_pod(in, count);
  std::unordered_map<std::string, NamedParam*> by_name;
  for (auto& p : params) by_name[p.name] = &p;
  for (uint64_t i = 0; i < count; ++i) {
    uint64_t name_len = 0;
    read_pod(in, name_len);
    std::string name(name_len, '\0');
    in.read(name.data(), static_cast<std::streamsize>(name_len));
    uint64_t ndim = 0;
    read_pod(in, ndim);
    std::vector<size_t> shape(ndim);
    size_t numel = 1;
    for (auto& d : shape) {
      uint64_t dd = 0;
      read_pod(in, dd);
      d = dd;
      numel *= d;
    }
    std::vector<double> data(numel);
    in.read(reinterpret_cast<char*>(data.data()),
            static_cast<std::streamsize>(numel * sizeof(double)));
    auto it = by_name.find(name);
    if (it == by_name.end())
      throw std::runtime_error("checkpoint names unknown parameter '" + name + "'");
    if (it->second->var.value().shape != shape)
      throw std::runtime_error("checkpoint shape mismatch for '" + name + "'");
    it->second->var.value_mut().data = std::move(data);
  }
  if (!in) throw std::runtime_error("checkpoint read failed: " + path);
}

Tensor glorot_uniform(size_t rows, size_t cols, std::mt19937_64& rng) {
  double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Tensor t({rows, cols});
  for (double& v : t.data) {
    double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    v = (2.0 * u - 1.0) * limit;
  }
  return t;
}

}  // namespace dbdl
