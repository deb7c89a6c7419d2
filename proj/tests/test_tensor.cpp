#include <cmath>
#include <cstdio>
#include <filesystem>
#include <random>

#include "dbdl/tensor.hpp"
#include "doctest.h"

using namespace dbdl;
using namespace dbdl::ops;

namespace {

Tensor random_tensor(size_t r, size_t c, std::mt19937_64& rng, double lo = -1.0,
                     double hi = 1.0) {
  Tensor t({r, c});
  for (double& v : t.data)
    v = lo + (hi - lo) * (static_cast<double>(rng() >> 11) * 0x1.0p-53);
  return t;
}

}  // namespace

TEST_CASE("softmax rows") {
  Var x(Tensor::matrix(2, 3, {0, 0, 0, std::log(1.0), std::log(2.0), std::log(3.0)}));
  Var s = softmax_rows(x);
  CHECK(s.value().at(0, 0) == doctest::Approx(1.0 / 3).epsilon(1e-12));
  CHECK(s.value().at(1, 0) == doctest::Approx(1.0 / 6).epsilon(1e-12));
  CHECK(s.value().at(1, 1) == doctest::Approx(2.0 / 6).epsilon(1e-12));
  CHECK(s.value().at(1, 2) == doctest::Approx(3.0 / 6).epsilon(1e-12));

  // shift invariance and row sums
  std::mt19937_64 rng(1);
  Tensor raw = random_tensor(5, 7, rng, -3, 3);
  Tensor shifted = raw;
  for (size_t i = 0; i < 5; ++i)
    for (size_t j = 0; j < 7; ++j) shifted.at(i, j) += 42.0;
  Var a = softmax_rows(Var(raw));
  Var b = softmax_rows(Var(shifted));
  for (size_t i = 0; i < 5; ++i) {
    double sum = 0;
    for (size_t j = 0; j < 7; ++j) {
      sum += a.value().at(i, j);
      CHECK(a.value().at(i, j) == doctest::Approx(b.value().at(i, j)).epsilon(1e-12));
    }
    CHECK(std::abs(sum - 1.0) <= 1e-12);
  }

  Tensor bad = Tensor::matrix(1, 2, {std::nan(""), 0.0});
  CHECK_THROWS_AS(softmax_rows(Var(bad)), std::domain_error);
}

TEST_CASE("layer norm") {
  Var gain(Tensor::row({1, 1}));
  Var bias(Tensor::row({0, 0}));
  Var c = layer_norm_rows(Var(Tensor::row({5, 5})), gain, bias);
  CHECK(c.value().at(0, 0) == doctest::Approx(0.0).epsilon(1e-9));

  Var y = layer_norm_rows(Var(Tensor::row({1, -1})), gain, bias);
  CHECK(y.value().at(0, 0) == doctest::Approx(1.0).epsilon(1e-4));
  CHECK(y.value().at(0, 1) == doctest::Approx(-1.0).epsilon(1e-4));

  // scale invariance under unit gain / zero bias
  std::mt19937_64 rng(2);
  Tensor raw = random_tensor(1, 6, rng);
  Tensor scaled = raw;
  for (double& v : scaled.data) v *= 3.0;
  Var g6(Tensor({1, 6}, std::vector<double>(6, 1.0)));
  Var b6(Tensor({1, 6}));
  Var u = layer_norm_rows(Var(raw), g6, b6);
  Var w = layer_norm_rows(Var(scaled), g6, b6);
  for (size_t j = 0; j < 6; ++j)  // identity up to the eps guard in the denominator
    CHECK(u.value().at(0, j) == doctest::Approx(w.value().at(0, j)).epsilon(1e-4));
}

TEST_CASE("batch norm") {
  BatchNorm bn(1);
  Var x(Tensor::matrix(2, 1, {2, 4}));
  Var out = bn.forward(x, true);
  CHECK(out.value().at(0, 0) == doctest::Approx(-1.0).epsilon(1e-4));
  CHECK(out.value().at(1, 0) == doctest::Approx(1.0).epsilon(1e-4));

  BatchNorm bn2(2);  // fresh running stats: mean 0, var 1
  Tensor input = Tensor::matrix(2, 2, {0.5, -0.25, 1.5, 0.75});
  Var eval_out = bn2.forward(Var(input), false);
  for (size_t i = 0; i < input.numel(); ++i)
    CHECK(eval_out.value().data[i] ==
          doctest::Approx(input.data[i]).epsilon(1e-5));

  CHECK_THROWS_AS(bn.forward(Var(Tensor::matrix(1, 1, {3})), true), std::invalid_argument);

  // same data, same stats path -> identical outputs
  BatchNorm a(3), b(3);
  std::mt19937_64 rng(3);
  Tensor data = random_tensor(8, 3, rng);
  Var oa = a.forward(Var(data), true);
  Var ob = b.forward(Var(data), true);
  CHECK(oa.value().data == ob.value().data);
}

TEST_CASE("ffn block") {
  // zero weights -> bias
  Var x(Tensor::row({1, -2}));
  Var w1z(Tensor({2, 2})), b1z(Tensor({1, 2})), w2z(Tensor({2, 2}));
  Var b2(Tensor::row({7, -3}));
  Var out = ffn(x, w1z, b1z, w2z, b2);
  CHECK(out.value().at(0, 0) == 7);
  CHECK(out.value().at(0, 1) == -3);

  // identity + all-negative input -> relu kills everything
  Var eye(Tensor::matrix(2, 2, {1, 0, 0, 1}));
  Var zero_b(Tensor({1, 2}));
  Var neg(Tensor::row({-1, -5}));
  Var dead = ffn(neg, eye, zero_b, eye, zero_b);
  CHECK(dead.value().at(0, 0) == 0);
  CHECK(dead.value().at(0, 1) == 0);

  // hand case
  Var w1(Tensor::matrix(2, 2, {1, 0, 0, 1}));
  Var b1(Tensor::row({0, 3}));
  Var w2(Tensor::matrix(2, 2, {1, 1, 0, 1}));
  Var hand = ffn(x, w1, b1, w2, zero_b);
  CHECK(hand.value().at(0, 0) == doctest::Approx(2.0));
  CHECK(hand.value().at(0, 1) == doctest::Approx(1.0));
}

TEST_CASE("backward basics") {
  Var x(Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6}), true);
  Var loss = sum_all(x);
  backward(loss);
  for (double g : x.grad().data) CHECK(g == 1.0);

  Var a(Tensor::scalar(3.0), true), b(Tensor::scalar(5.0), true);
  Var prod = mul(a, b);
  backward(prod);
  CHECK(a.grad().data[0] == 5.0);
  CHECK(b.grad().data[0] == 3.0);

  // accumulation without reset
  backward(prod);
  CHECK(a.grad().data[0] == 10.0);

  CHECK_THROWS_AS(backward(x), std::invalid_argument);
}

TEST_CASE("grad check: linear and elementwise ops") {
  std::mt19937_64 rng(7);
  Var w(random_tensor(4, 3, rng), true);
  Var b(random_tensor(1, 4, rng), true);
  Tensor xv = random_tensor(5, 3, rng);
  std::vector<Var> params = {w, b};
  auto f = [&]() { return sum_all(add_rowvec(matmul(Var(xv), w, false, true), b)); };
  CHECK(grad_check(f, params) <= 1e-9);

  Var m(random_tensor(3, 3, rng), true);
  std::vector<Var> params2 = {m};
  auto f2 = [&]() { return sum_all(mul(relu(m), m)); };
  CHECK(grad_check(f2, params2) <= 1e-6);
}

TEST_CASE("grad check: softmax + cross entropy") {
  std::mt19937_64 rng(11);
  Var logits(random_tensor(6, 4, rng), true);
  std::vector<size_t> labels = {0, 3, 1, 2, 2, 0};
  std::vector<Var> params = {logits};
  auto f = [&]() { return cross_entropy(logits, labels); };
  CHECK(grad_check(f, params) <= 1e-6);
}

TEST_CASE("cross entropy values") {
  Var uniform(Tensor::matrix(1, 5, {0, 0, 0, 0, 0}));
  CHECK(cross_entropy(uniform, {2}).value().data[0] ==
        doctest::Approx(std::log(5.0)).epsilon(1e-12));

  Var peaked(Tensor::matrix(1, 2, {100.0, 0.0}));
  CHECK(cross_entropy(peaked, {0}).value().data[0] <= 1e-12);

  Var hand(Tensor::matrix(1, 2, {0.0, std::log(3.0)}));
  CHECK(cross_entropy(hand, {0}).value().data[0] ==
        doctest::Approx(std::log(4.0)).epsilon(1e-12));

  CHECK_THROWS_AS(cross_entropy(uniform, {9}), std::invalid_argument);
}

TEST_CASE("mse values") {
  Var p(Tensor::matrix(2, 1, {2, 2}));
  Tensor y = Tensor::matrix(2, 1, {1, 3});
  CHECK(mse(p, y).value().data[0] == doctest::Approx(1.0));
  CHECK(mse(Var(y), y).value().data[0] == 0.0);
  Tensor off = Tensor::matrix(2, 1, {1.0 + 0.5, 3.0 + 0.5});
  CHECK(mse(Var(off), y).value().data[0] == doctest::Approx(0.25));
}

TEST_CASE("grad check: layer norm and batch norm") {
  std::mt19937_64 rng(13);
  Var x(random_tensor(4, 5, rng), true);
  Var g(random_tensor(1, 5, rng, 0.5, 1.5), true);
  Var b(random_tensor(1, 5, rng), true);
  std::vector<Var> params = {x, g, b};
  auto f = [&]() { return sum_all(mul(layer_norm_rows(x, g, b), x)); };
  CHECK(grad_check(f, params) <= 1e-6);

  auto f2 = [&]() { return sum_all(mul(batch_norm_train(x, g, b, 1e-5), x)); };
  CHECK(grad_check(f2, params) <= 1e-6);

  Tensor mean = random_tensor(1, 5, rng);
  Tensor var = random_tensor(1, 5, rng, 0.5, 2.0);
  auto f3 = [&]() {
    return sum_all(mul(batch_norm_eval(x, g, b, mean, var, 1e-5), x));
  };
  CHECK(grad_check(f3, params) <= 1e-7);
}

TEST_CASE("grad check: block attention") {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 3; ++trial) {
    size_t d = 4 + 2 * trial;
    Var q(random_tensor(5, d, rng), true);
    Var k(random_tensor(6, d, rng), true);
    Var v(random_tensor(6, d, rng), true);
    std::vector<AttnBlock> blocks = {{0, 3, 0, 4}, {3, 2, 4, 2}};
    size_t heads = trial == 2 ? 2 : 1;
    std::vector<Var> params = {q, k, v};
    auto f = [&]() {
      return sum_all(mul(block_attention(q, k, v, blocks, heads), q));
    };
    CHECK(grad_check(f, params) <= 1e-6);
  }
}

TEST_CASE("grad check: position attention") {
  std::mt19937_64 rng(19);
  size_t tokens = 3, d = 4, centers = 2;
  Var q(random_tensor(centers * tokens, d, rng), true);
  Var k(random_tensor(4 * tokens, d, rng), true);
  Var v(random_tensor(4 * tokens, d, rng), true);
  std::vector<uint32_t> owner = {0, 1, 0, 0};  // center 1 of the messages
  std::vector<Var> params = {q, k, v};
  auto f = [&]() {
    return sum_all(mul(position_attention(q, k, v, owner, tokens, centers), q));
  };
  CHECK(grad_check(f, params) <= 1e-6);
}

TEST_CASE("position attention conventions") {
  size_t tokens = 1;
  Var q(Tensor::matrix(2, 2, {1, 0, 0, 1}));
  Var k(Tensor::matrix(1, 2, {1, 1}));
  Var v(Tensor::matrix(1, 2, {1, 0}));
  // single message -> its value; center 1 has none -> zeros
  Var out = position_attention(q, k, v, {0}, tokens, 2);
  CHECK(out.value().rows() == 2);
  CHECK(out.value().at(0, 0) == 1.0);
  CHECK(out.value().at(1, 0) == 0.0);
  CHECK(out.value().at(1, 1) == 0.0);

  // identical messages aggregate to the same single value
  Var k2(Tensor::matrix(2, 2, {1, 1, 1, 1}));
  Var v2(Tensor::matrix(2, 2, {0.5, -2, 0.5, -2}));
  Var out2 = position_attention(q, k2, v2, {0, 0}, tokens, 2);
  CHECK(out2.value().at(0, 0) == doctest::Approx(0.5));
  CHECK(out2.value().at(0, 1) == doctest::Approx(-2.0));
}

TEST_CASE("gather/replace/interleave round trips") {
  std::mt19937_64 rng(23);
  Var x(random_tensor(5, 3, rng), true);
  std::vector<Var> params = {x};
  auto f = [&]() {
    Var g = gather_rows(x, {4, 0, 0, 2});
    return sum_all(mul(g, g));
  };
  CHECK(grad_check(f, params) <= 1e-7);

  Var v(random_tensor(1, 3, rng), true);
  std::vector<Var> params2 = {x, v};
  auto f2 = [&]() {
    Var r = replace_rows(x, {1, 3}, v);
    return sum_all(mul(r, r));
  };
  CHECK(grad_check(f2, params2) <= 1e-7);

  Var a(random_tensor(4, 2, rng), true);
  Var b(random_tensor(4, 2, rng), true);
  std::vector<Var> mats = {a, b};
  Var inter = interleave_rows(mats);
  CHECK(inter.value().rows() == 8);
  CHECK(inter.value().at(0, 0) == a.value().at(0, 0));
  CHECK(inter.value().at(1, 0) == b.value().at(0, 0));
  CHECK(inter.value().at(2, 1) == a.value().at(1, 1));
  std::vector<Var> params3 = {a, b};
  auto f3 = [&]() {
    Var i2 = interleave_rows(mats);
    return sum_all(mul(i2, i2));
  };
  CHECK(grad_check(f3, params3) <= 1e-7);
}

TEST_CASE("adam") {
  Var p(Tensor::row({1.0, -2.0}), true);
  AdamState st;
  p.zero_grad();
  backward(sum_all(scale(p, 0.0)));  // zero gradient
  Tensor before = p.value();
  adam_step(p, st, 0.01);
  CHECK(p.value().data == before.data);
  CHECK(st.t == 1);

  // first step with constant gradient: update magnitude ~ lr per coordinate
  Var q(Tensor::row({0.0, 0.0}), true);
  AdamState st2;
  Var loss = sum_all(mul(q, Var(Tensor::row({3.0, -5.0}))));
  q.zero_grad();
  backward(loss);
  adam_step(q, st2, 0.001);
  CHECK(q.value().data[0] == doctest::Approx(-0.001).epsilon(1e-6));
  CHECK(q.value().data[1] == doctest::Approx(0.001).epsilon(1e-6));

  CHECK_THROWS_AS(adam_step(q, st2, 0.0), std::invalid_argument);

  // determinism of a short descent
  auto run = [] {
    Var w(Tensor::row({2.0, -1.0, 0.5}), true);
    AdamState st;
    for (int i = 0; i < 25; ++i) {
      w.zero_grad();
      backward(sum_all(mul(w, w)));
      adam_step(w, st, 0.05);
    }
    return w.value().data;
  };
  CHECK(run() == run());
}

TEST_CASE("checkpoint round trip is bit exact") {
  std::mt19937_64 rng(29);
  std::vector<NamedParam> params = {{"w", Var(random_tensor(3, 4, rng), true)},
                                    {"b", Var(random_tensor(1, 4, rng), true)}};
  auto path = std::filesystem::temp_directory_path() / "dbdl_ckpt_test.bin";
  save_checkpoint(path.string(), params);

  std::vector<NamedParam> reload = {{"w", Var(Tensor({3, 4}), true)},
                                    {"b", Var(Tensor({1, 4}), true)}};
  load_checkpoint(path.string(), reload);
  CHECK(reload[0].var.value().data == params[0].var.value().data);
  CHECK(reload[1].var.value().data == params[1].var.value().data);
  std::filesystem::remove(path);
}

TEST_CASE("dropout scaling and determinism") {
  std::mt19937_64 rng(31);
  Var x(Tensor({1, 10000}, std::vector<double>(10000, 1.0)));
  Var d = dropout(x, 0.25, rng, true);
  double sum = 0;
  for (double v : d.value().data) sum += v;
  CHECK(sum / 10000.0 == doctest::Approx(1.0).epsilon(0.05));

  std::mt19937_64 r1(5), r2(5);
  Var a = dropout(x, 0.5, r1, true);
  Var b = dropout(x, 0.5, r2, true);
  CHECK(a.value().data == b.value().data);

  Var untouched = dropout(x, 0.5, r1, false);
  CHECK(untouched.value().data == x.value().data);
}
