#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "gradcheck.hpp"
#include "tslc/ops.hpp"
#include "tslc/rng.hpp"
#include "tslc/tape.hpp"
#include "tslc/tensor.hpp"

using namespace tslc;
using namespace tslc::ops;

namespace {

Tensor randt(std::vector<std::int64_t> shape, Rng& rng, float lo = -1.0f, float hi = 1.0f) {
  Tensor t = Tensor::zeros(shape);
  for (auto& v : t.f32()) v = rng.uniform(lo, hi);
  return t;
}

Tensor coeffs_for(std::int64_t n, Rng& rng) {
  Tensor c = Tensor::zeros({n, 1});
  for (auto& v : c.f32()) v = rng.uniform(-1.0f, 1.0f);
  return c;
}

}  // namespace

TEST_CASE("matmul matches hand results") {
  Tape off = Tape::disabled();
  Tensor eye = Tensor::from_data({2, 2}, {1, 0, 0, 1});
  Tensor a = Tensor::from_data({2, 2}, {1, 2, 3, 4});
  Tensor r = matmul(off, eye, a);
  CHECK(r.f32()[0] == 1.0f);
  CHECK(r.f32()[1] == 2.0f);
  CHECK(r.f32()[2] == 3.0f);
  CHECK(r.f32()[3] == 4.0f);

  Tensor ones = Tensor::from_data({2, 1}, {1, 1});
  Tensor s = matmul(off, a, ones);
  CHECK(s.f32()[0] == 3.0f);
  CHECK(s.f32()[1] == 7.0f);

  Tensor z = matmul(off, Tensor::from_data({1, 2}, {0, 0}), Tensor::from_data({2, 1}, {5, 5}));
  CHECK(z.f32()[0] == 0.0f);

  CHECK_THROWS_AS(matmul(off, a, Tensor::from_data({3, 1}, {1, 2, 3})), DimensionError);
}

TEST_CASE("conv2d matches hand results") {
  Tape off = Tape::disabled();
  // 1x1 kernel of [2] scales a field of ones to twos.
  Tensor x = Tensor::from_data({1, 3, 3}, std::vector<float>(9, 1.0f));
  Tensor w = Tensor::from_data({1, 1, 1, 1}, {2});
  Tensor y = conv2d(off, x, w, nullptr, 1, 0);
  CHECK(y.shape() == std::vector<std::int64_t>{1, 3, 3});
  for (float v : y.f32()) CHECK(v == 2.0f);

  // 2x2 ones with a 3x3 ones kernel, pad 1: every window covers all 4 cells.
  Tensor x2 = Tensor::from_data({1, 2, 2}, std::vector<float>(4, 1.0f));
  Tensor w3 = Tensor::from_data({1, 1, 3, 3}, std::vector<float>(9, 1.0f));
  Tensor y2 = conv2d(off, x2, w3, nullptr, 1, 1);
  CHECK(y2.shape() == std::vector<std::int64_t>{1, 2, 2});
  for (float v : y2.f32()) CHECK(v == 4.0f);

  Tensor wz = Tensor::zeros({2, 1, 3, 3});
  Tensor yz = conv2d(off, x, wz, nullptr, 1, 1);
  for (float v : yz.f32()) CHECK(v == 0.0f);

  // Non-integral output dims are rejected.
  Tensor x8 = Tensor::zeros({1, 8, 8});
  Tensor k3 = Tensor::zeros({1, 1, 3, 3});
  CHECK_THROWS_AS(conv2d(off, x8, k3, nullptr, 2, 1), DimensionError);
}

TEST_CASE("softmax cross entropy examples") {
  Tape off = Tape::disabled();
  Tensor uniform = Tensor::zeros({1, 4});
  Tensor lbl = Tensor::from_labels({1}, {2});
  CHECK(softmax_cross_entropy(off, uniform, lbl).item() ==
        doctest::Approx(std::log(4.0)).epsilon(1e-6));

  Tensor sat = Tensor::from_data({1, 2}, {1000, 0});
  Tensor l0 = Tensor::from_labels({1}, {0});
  CHECK(softmax_cross_entropy(off, sat, l0).item() == doctest::Approx(0.0).epsilon(1e-6));

  Tensor two = Tensor::zeros({1, 2});
  Tensor l1 = Tensor::from_labels({1}, {1});
  CHECK(softmax_cross_entropy(off, two, l1).item() ==
        doctest::Approx(std::log(2.0)).epsilon(1e-6));

  Tensor bad = Tensor::from_labels({1}, {7});
  CHECK_THROWS_AS(softmax_cross_entropy(off, two, bad), InputError);
}

TEST_CASE("backward on sum(W x) gives the broadcast of x") {
  Tape tape;
  Tensor w = Tensor::from_data({2, 2}, {0.5f, -1.0f, 2.0f, 0.25f});
  w.set_requires_grad(true);
  Tensor x = Tensor::from_data({2, 1}, {3.0f, -2.0f});
  Tensor ones = Tensor::from_data({1, 2}, {1, 1});
  Tensor loss = matmul(tape, ones, matmul(tape, w, x));
  loss.set_requires_grad(true);
  backward(tape, loss);
  // d/dW sum(Wx) = 1 x^T in every row.
  CHECK(w.grad()[0] == doctest::Approx(3.0));
  CHECK(w.grad()[1] == doctest::Approx(-2.0));
  CHECK(w.grad()[2] == doctest::Approx(3.0));
  CHECK(w.grad()[3] == doctest::Approx(-2.0));
}

TEST_CASE("frozen tensors get no grad buffer and backward needs a scalar") {
  Tape tape;
  Tensor w = Tensor::from_data({2, 2}, {1, 2, 3, 4});  // frozen: requires_grad unset
  Tensor x = Tensor::from_data({2, 2}, {1, 0, 0, 1});
  x.set_requires_grad(true);
  Tensor y = matmul(tape, w, x);
  CHECK(!w.requires_grad());
  CHECK_THROWS_AS(backward(tape, y), ContractError);  // non-scalar loss
}

TEST_CASE("sgd step formula") {
  Tensor p = Tensor::scalar(1.0f);
  p.set_requires_grad(true);
  p.grad()[0] = 1.0f;
  std::vector<Tensor> ps{p};
  sgd_step(ps, 0.1f, 0.0f);
  CHECK(p.f32()[0] == doctest::Approx(0.9));

  Tensor q = Tensor::scalar(5.0f);
  q.set_requires_grad(true);
  std::vector<Tensor> qs{q};
  sgd_step(qs, 0.1f, 0.0f);
  CHECK(q.f32()[0] == 5.0f);  // zero grad, zero decay: unchanged

  Tensor r = Tensor::scalar(2.0f);
  r.set_requires_grad(true);
  std::vector<Tensor> rs{r};
  sgd_step(rs, 0.1f, 0.5f);
  CHECK(r.f32()[0] == doctest::Approx(1.9));

  CHECK_THROWS_AS(sgd_step(rs, 0.0f, 0.0f), ContractError);
}

TEST_CASE("linear attention trivial cases") {
  Tape off = Tape::disabled();
  Rng rng(11);
  const std::int64_t t = 3, d = 4;
  Tensor xq = randt({t, d}, rng), xk = randt({t, d}, rng), xv = randt({t, d}, rng);

  // Zero projection: softmax of zeros over the token axis is uniform.
  Tensor w1z = Tensor::zeros({2 * d, d});
  Tensor qk[] = {xq, xk};
  Tensor aw = softmax_cols(off, matmul(off, concat(off, qk, 1), w1z));
  for (float v : aw.f32()) CHECK(v == doctest::Approx(1.0 / static_cast<double>(t)));

  // Single token: attention weights collapse to 1, so the output is an
  // affine map of x_v.
  Tensor q1 = randt({1, d}, rng), k1 = randt({1, d}, rng);
  Tensor v1 = randt({1, d}, rng), v2 = randt({1, d}, rng);
  Tensor w1 = randt({2 * d, d}, rng), w2 = randt({2 * d, d}, rng);
  Tensor o1 = linear_attention(off, q1, k1, v1, w1, w2);
  Tensor o2 = linear_attention(off, q1, k1, v2, w1, w2);
  Tensor vd = Tensor::zeros({1, d});
  for (std::int64_t i = 0; i < d; ++i) vd.f32()[i] = v1.f32()[i] - v2.f32()[i];
  Tensor od = linear_attention(off, q1, k1, vd, w1, w2);
  Tensor oz = linear_attention(off, q1, k1, Tensor::zeros({1, d}), w1, w2);
  for (std::int64_t i = 0; i < d; ++i)
    CHECK(o1.f32()[i] - o2.f32()[i] == doctest::Approx(od.f32()[i] - oz.f32()[i]).epsilon(1e-4));
}

TEST_CASE("gradients match finite differences on every op kind") {
  Rng rng(1234);
  auto run = [&](const char* name, auto make_loss, std::vector<Tensor> inputs) {
    auto res = gradcheck::check(make_loss, inputs);
    INFO(name << ": " << res.detail);
    CHECK(res.rel_err <= 1e-3);
  };

  for (int rep = 0; rep < 5; ++rep) {
    const std::int64_t m = 1 + static_cast<std::int64_t>(rng.below(3));
    const std::int64_t k = 1 + static_cast<std::int64_t>(rng.below(3));
    const std::int64_t n = 1 + static_cast<std::int64_t>(rng.below(3));
    Tensor a = randt({m, k}, rng), b = randt({k, n}, rng);
    a.set_requires_grad(true);
    b.set_requires_grad(true);
    Tensor c = coeffs_for(m * n, rng);
    run("matmul", [&](Tape& t) { return gradcheck::weighted_sum(t, matmul(t, a, b), c); },
        {a, b});
  }

  for (int rep = 0; rep < 3; ++rep) {
    Tensor x = randt({2, 4, 4}, rng);
    Tensor w = randt({3, 2, 3, 3}, rng);
    Tensor bias = randt({3}, rng);
    x.set_requires_grad(true);
    w.set_requires_grad(true);
    bias.set_requires_grad(true);
    Tensor c = coeffs_for(3 * 4 * 4, rng);
    run("conv2d",
        [&](Tape& t) { return gradcheck::weighted_sum(t, conv2d(t, x, w, &bias, 1, 1), c); },
        {x, w, bias});
  }

  {
    // Keep inputs away from the kink at zero.
    Tensor x = Tensor::zeros({3, 3});
    for (auto& v : x.f32()) {
      v = rng.uniform(-1.0f, 1.0f);
      if (std::abs(v) < 0.05f) v = 0.2f;
    }
    x.set_requires_grad(true);
    Tensor c = coeffs_for(9, rng);
    run("relu", [&](Tape& t) { return gradcheck::weighted_sum(t, relu(t, x), c); }, {x});
  }

  {
    Tensor logits = randt({4, 5}, rng);
    logits.set_requires_grad(true);
    Tensor lbl = Tensor::from_labels({4}, {0, 3, 2, 4});
    run("softmax_ce", [&](Tape& t) { return softmax_cross_entropy(t, logits, lbl); }, {logits});
  }

  {
    Tensor a = randt({2, 3}, rng), b = randt({2, 2}, rng);
    a.set_requires_grad(true);
    b.set_requires_grad(true);
    Tensor c = coeffs_for(10, rng);
    run("concat",
        [&](Tape& t) {
          const Tensor parts[] = {a, b};
          return gradcheck::weighted_sum(t, concat(t, parts, 1), c);
        },
        {a, b});
  }

  {
    Tensor x = randt({3, 4}, rng);
    Tensor alpha = Tensor::scalar(0.7f);
    x.set_requires_grad(true);
    alpha.set_requires_grad(true);
    Tensor c = coeffs_for(12, rng);
    run("scale", [&](Tape& t) { return gradcheck::weighted_sum(t, scale(t, x, alpha), c); },
        {x, alpha});
  }

  {
    Tensor x = randt({2, 3, 3}, rng);
    x.set_requires_grad(true);
    Tensor gamma = randt({2}, rng, 0.5f, 1.5f), beta = randt({2}, rng);
    Tensor mean = randt({2}, rng), var = randt({2}, rng, 0.5f, 1.5f);
    Tensor c = coeffs_for(18, rng);
    run("batchnorm (input grad)",
        [&](Tape& t) {
          return gradcheck::weighted_sum(t, batchnorm(t, x, gamma, beta, mean, var), c);
        },
        {x});
  }

  {
    Tensor q = randt({3, 4}, rng), k = randt({3, 4}, rng), v = randt({3, 4}, rng);
    q.set_requires_grad(true);
    k.set_requires_grad(true);
    v.set_requires_grad(true);
    Tensor c = coeffs_for(12, rng);
    run("attention",
        [&](Tape& t) { return gradcheck::weighted_sum(t, attention(t, q, k, v), c); },
        {q, k, v});
  }

  {
    const std::int64_t t_ = 3, d = 4;
    Tensor q = randt({t_, d}, rng), k = randt({t_, d}, rng), v = randt({t_, d}, rng);
    Tensor w1 = randt({2 * d, d}, rng), w2 = randt({2 * d, d}, rng);
    for (Tensor* p : {&q, &k, &v, &w1, &w2}) p->set_requires_grad(true);
    Tensor c = coeffs_for(t_ * d, rng);
    run("linear_attention",
        [&](Tape& t) {
          return gradcheck::weighted_sum(t, linear_attention(t, q, k, v, w1, w2), c);
        },
        {q, k, v, w1, w2});
  }
}

TEST_CASE("rng determinism and split independence") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  Rng c = Rng(42).split(1), d = Rng(42).split(2);
  CHECK(c.next_u64() != d.next_u64());
}
