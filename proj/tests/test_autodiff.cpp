#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "mvtn/autodiff.hpp"
#include "mvtn/error.hpp"
#include "mvtn/rng.hpp"

using namespace mvtn;
using ad::Tape;
using ad::Var;

TEST_CASE("tanh derivative at zero is one") {
  Tape tape;
  Var x = tape.leaf(0.0);
  Var y = ad::tanh(x);
  tape.backward(y);
  CHECK(x.grad() == 1.0);
}

TEST_CASE("softmax cross-entropy on uniform logits") {
  Tape tape;
  ad::TensorView logits;
  logits.shape = {2};
  logits.elems = {tape.leaf(0.0), tape.leaf(0.0)};
  Var loss = ad::softmax_cross_entropy(logits, 0);
  CHECK(loss.value() == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  tape.backward(loss);
  CHECK(logits.elems[0].grad() == doctest::Approx(-0.5).epsilon(1e-15));
  CHECK(logits.elems[1].grad() == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("softmax cross-entropy gradient sums to zero") {
  Tape tape;
  ad::TensorView logits;
  logits.shape = {5};
  for (double v : {1.3, -0.2, 0.8, 2.2, -1.0}) logits.elems.push_back(tape.leaf(v));
  Var loss = ad::softmax_cross_entropy(logits, 3);
  tape.backward(loss);
  double sum = 0;
  for (const Var& l : logits.elems) sum += l.grad();
  CHECK(std::abs(sum) < 1e-15);
}

TEST_CASE("max2 routes the gradient to the winner") {
  Tape tape;
  Var a = tape.leaf(3.0);
  Var b = tape.leaf(5.0);
  Var m = ad::max2(a, b);
  tape.backward(m);
  CHECK(a.grad() == 0.0);
  CHECK(b.grad() == 1.0);
}

TEST_CASE("product rule") {
  Tape tape;
  Var x = tape.leaf(2.0);
  Var y = tape.leaf(3.0);
  Var loss = ad::mul(x, y);
  tape.backward(loss);
  CHECK(x.grad() == 3.0);
  CHECK(y.grad() == 2.0);
}

TEST_CASE("chain rule through tanh") {
  Tape tape;
  Var a = tape.leaf(0.5);
  Var b = tape.leaf(2.0);
  Var c = tape.leaf(0.0);
  Var loss = ad::tanh(ad::add(ad::mul(a, b), c));
  tape.backward(loss);
  const double expected = 1.0 - std::tanh(1.0) * std::tanh(1.0);
  CHECK(c.grad() == doctest::Approx(expected).epsilon(1e-15));
}

TEST_CASE("backward twice is an error") {
  Tape tape;
  Var x = tape.leaf(1.0);
  Var y = ad::mul(x, x);
  tape.backward(y);
  try {
    tape.backward(y);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::BackwardAlreadyRun);
  }
}

TEST_CASE("tensor backward requires a scalar") {
  Tape tape;
  ad::TensorView t;
  t.shape = {2};
  t.elems = {tape.leaf(1.0), tape.leaf(2.0)};
  try {
    ad::backward(tape, t);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::NotScalar);
  }
}

TEST_CASE("backward touches each node exactly once") {
  Tape tape;
  Var x = tape.leaf(0.7);
  Var y = ad::exp(ad::mul(x, x));
  Var z = ad::add(y, ad::sin(x));
  tape.backward(z);
  CHECK(tape.last_backward_visits() == static_cast<std::size_t>(z.id) + 1);
}

TEST_CASE("domain guards") {
  Tape tape;
  Var neg = tape.leaf(-1.0);
  Var zero = tape.leaf(0.0);
  CHECK_THROWS_AS(ad::log(neg), Error);
  CHECK_THROWS_AS(ad::log(zero), Error);
  CHECK_THROWS_AS(ad::sqrt(neg), Error);
  CHECK_THROWS_AS(ad::div(tape.leaf(1.0), zero), Error);
  CHECK_THROWS_AS(ad::asin(tape.leaf(1.5)), Error);
  CHECK_THROWS_AS(ad::atan2(zero, tape.constant(0.0)), Error);
}

TEST_CASE("relu subgradient at the kink is zero") {
  Tape tape;
  Var x = tape.leaf(0.0);
  Var y = ad::relu(x);
  tape.backward(y);
  CHECK(x.grad() == 0.0);
  CHECK(y.value() == 0.0);
}

TEST_CASE("graph evaluation is deterministic") {
  const auto build = [](std::vector<double>& grads) {
    Tape tape;
    Var a = tape.leaf(0.37);
    Var b = tape.leaf(-1.2);
    Var out = ad::mul(ad::sigmoid(ad::mul(a, b)), ad::cos(ad::add(a, b)));
    tape.backward(out);
    grads = {a.grad(), b.grad()};
    return out.value();
  };
  std::vector<double> g1, g2;
  const double v1 = build(g1);
  const double v2 = build(g2);
  CHECK(v1 == v2);
  CHECK(g1 == g2);
}

TEST_CASE("composite expressions match finite differences") {
  Rng rng(31);
  const auto fn = [](Tape& tape, std::span<const Var> p) {
    (void)tape;
    Var a = ad::sigmoid(ad::mul(p[0], p[1]));
    Var b = ad::exp(ad::mul_const(ad::sin(p[2]), 0.5));
    Var c = ad::pow_const(ad::add_const(ad::mul(p[3], p[3]), 1.0), 1.5);
    Var d = ad::atan2(p[1], ad::add_const(p[3], 4.0));
    return ad::add(ad::div(a, c), ad::mul(b, d));
  };
  for (int trial = 0; trial < 25; ++trial) {
    std::vector<double> p(4);
    for (double& v : p) v = rng.uniform(-1.5, 1.5);
    const auto report = ad::finite_diff_check(fn, p, 1e-6);
    CHECK(report.max_rel_error < 1e-6);
  }
}

TEST_CASE("finite_diff_check on a quadratic is exact to roundoff") {
  const auto quadratic = [](Tape& tape, std::span<const Var> p) {
    (void)tape;
    Var acc = ad::mul(p[0], p[0]);
    for (std::size_t i = 1; i < p.size(); ++i) acc = ad::add(acc, ad::mul(p[i], p[i]));
    return acc;
  };
  const std::vector<double> p = {1.0, -2.0, 0.5, 3.0};
  CHECK(ad::finite_diff_check(quadratic, p, 1e-5).max_rel_error < 1e-8);
}

TEST_CASE("matmul values and gradients") {
  Tape tape;
  ad::TensorView a, b;
  a.shape = {2, 2};
  b.shape = {2, 2};
  for (double v : {1.0, 2.0, 3.0, 4.0}) a.elems.push_back(tape.leaf(v));
  for (double v : {5.0, 6.0, 7.0, 8.0}) b.elems.push_back(tape.leaf(v));
  ad::TensorView c = ad::matmul(a, b);
  CHECK(c.elems[0].value() == 19.0);
  CHECK(c.elems[1].value() == 22.0);
  CHECK(c.elems[2].value() == 43.0);
  CHECK(c.elems[3].value() == 50.0);
  Var loss = ad::sum(c.elems);
  tape.backward(loss);
  // d(sum)/d(a00) = b00 + b01
  CHECK(a.elems[0].grad() == 11.0);
  CHECK(b.elems[0].grad() == 4.0);  // a00 + a10
}

TEST_CASE("conv2d, pooling and gap match finite differences") {
  Rng rng(41);
  std::vector<double> image(6 * 6), kernel(3 * 3 * 1 * 2), bias(2);
  for (double& v : image) v = rng.uniform(-1.0, 1.0);
  for (double& v : kernel) v = rng.uniform(-1.0, 1.0);
  for (double& v : bias) v = rng.uniform(-0.5, 0.5);

  // Concatenated parameter vector: image, kernel, bias.
  std::vector<double> params;
  params.insert(params.end(), image.begin(), image.end());
  params.insert(params.end(), kernel.begin(), kernel.end());
  params.insert(params.end(), bias.begin(), bias.end());

  const auto fn = [](Tape& tape, std::span<const Var> p) {
    ad::TensorView img;
    img.shape = {6, 6, 1};
    img.elems.assign(p.begin(), p.begin() + 36);
    ad::TensorView ker;
    ker.shape = {3, 3, 1, 2};
    ker.elems.assign(p.begin() + 36, p.begin() + 54);
    ad::TensorView b;
    b.shape = {2};
    b.elems.assign(p.begin() + 54, p.begin() + 56);
    ad::TensorView conv = ad::conv2d_valid(img, ker, b);  // 4x4x2
    ad::TensorView pooled = ad::max_pool(ad::relu(conv), 2);
    ad::TensorView avg = ad::avg_pool(conv, 2);
    ad::TensorView gap = ad::global_avg_pool(pooled);
    Var total = ad::add(ad::sum(gap.elems), ad::sum(avg.elems));
    (void)tape;
    return total;
  };
  // Finite differences sit away from max-pool ties with random inputs.
  CHECK(ad::finite_diff_check(fn, params, 1e-6).max_rel_error < 1e-6);
}

TEST_CASE("elementwise_max takes the first argmax on ties") {
  Tape tape;
  ad::TensorView a, b;
  a.shape = {2};
  b.shape = {2};
  a.elems = {tape.leaf(1.0), tape.leaf(5.0)};
  b.elems = {tape.leaf(1.0), tape.leaf(9.0)};
  const ad::TensorView tensors[2] = {a, b};
  ad::TensorView m = ad::elementwise_max(tensors);
  Var loss = ad::sum(m.elems);
  tape.backward(loss);
  CHECK(a.elems[0].grad() == 1.0);  // tie resolves to the first tensor
  CHECK(b.elems[0].grad() == 0.0);
  CHECK(b.elems[1].grad() == 1.0);
}

TEST_CASE("shape mismatches are rejected") {
  Tape tape;
  ad::TensorView a, b;
  a.shape = {2, 3};
  b.shape = {2, 2};
  for (int i = 0; i < 6; ++i) a.elems.push_back(tape.leaf(1.0));
  for (int i = 0; i < 4; ++i) b.elems.push_back(tape.leaf(1.0));
  try {
    ad::matmul(a, b);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::ShapeMismatch);
  }
}
