#include <doctest.h>

#include <cmath>
#include <functional>

#include "dipa/autodiff/ops.hpp"
#include "dipa/error.hpp"
#include "dipa/rng.hpp"
#include "reference.hpp"

using namespace dipa;
using namespace dipa::ad;

namespace {

Tensor random_tensor(Shape s, Rng& rng, double lo = -1, double hi = 1) {
  Tensor t(std::move(s));
  for (auto& v : t.values()) v = static_cast<float>(rng.uniform(lo, hi));
  return t;
}

// Checks the gradient of a scalar function of several inputs against central
// differences computed on the library's own forward pass.
double grad_error(const std::function<Value(std::vector<Value>&)>& f, std::vector<Tensor> inputs, float h = 1e-2f) {
  std::vector<Value> params;
  for (auto& t : inputs) params.push_back(Value::parameter(t));
  backward(f(params));
  double worst = 0;
  for (std::size_t p = 0; p < params.size(); ++p) {
    const Tensor analytic = params[p].grad();
    for (std::int64_t i = 0; i < inputs[p].size(); ++i) {
      auto eval = [&](float delta) {
        std::vector<Value> shifted;
        for (std::size_t q = 0; q < inputs.size(); ++q) {
          Tensor t = inputs[q];
          if (q == p) t[i] += delta;
          shifted.push_back(Value::constant(t));
        }
        return static_cast<double>(f(shifted).item());
      };
      const double numeric = (eval(h) - eval(-h)) / (2.0 * h);
      const double den = std::max({std::abs(numeric), std::abs(static_cast<double>(analytic[i])), 1e-2});
      worst = std::max(worst, std::abs(numeric - analytic[i]) / den);
    }
  }
  return worst;
}

}  // namespace

TEST_SUITE("autodiff") {

TEST_CASE("add is elementwise") {
  const auto out = add(Value::constant(Tensor({2}, {1, 2})), Value::constant(Tensor({2}, {3, 4})));
  CHECK(out.data() == Tensor({2}, {4, 6}));
}

TEST_CASE("d/dx sum(x^2) at 3 is 6") {
  auto x = Value::parameter(Tensor({1}, {3}));
  backward(sum(square(x)));
  CHECK(x.grad()[0] == doctest::Approx(6.0f));
}

TEST_CASE("similarity gradient at d=1 matches central differences") {
  const double eps = 1e-4;
  auto d = Value::parameter(Tensor({1}, {1}));
  backward(sum(log(div(add(d, 1.0f), add(d, static_cast<float>(eps))))));
  const double h = 1e-3;
  const double numeric = (ref::sim(1 + h, eps) - ref::sim(1 - h, eps)) / (2 * h);
  CHECK(numeric == doctest::Approx(-0.49995).epsilon(1e-4));
  CHECK(d.grad()[0] == doctest::Approx(numeric).epsilon(1e-5));
}

TEST_CASE("backward on a constant graph leaves zero gradients") {
  auto x = Value::parameter(Tensor({2}, {1, 2}));
  auto c = Value::constant(Tensor({2}, {5, 6}));
  backward(sum(mul(c, c)));
  CHECK(x.grad() == Tensor({2}, 0.0f));
}

TEST_CASE("gradients accumulate across backward calls") {
  auto x = Value::parameter(Tensor({1}, {3}));
  backward(sum(square(x)));
  backward(sum(square(x)));
  CHECK(x.grad()[0] == doctest::Approx(12.0f));
  x.zero_grad();
  CHECK(x.grad()[0] == 0.0f);
}

TEST_CASE("max routes gradient only to the lowest-index argmax") {
  auto x = Value::parameter(Tensor({1, 4}, {0.5f, 2.0f, 2.0f, 1.0f}));
  auto r = max_along(x, 1);
  CHECK(r.arg[0] == 1);
  backward(sum(r.value));
  CHECK(x.grad() == Tensor({1, 4}, {0, 1, 0, 0}));
  auto y = Value::parameter(Tensor({3, 1}, {4, -1, -1}));
  auto mn = min_along(y, 0);
  CHECK(mn.arg[0] == 1);
  backward(sum(mn.value));
  CHECK(y.grad() == Tensor({3, 1}, {0, 1, 0}));
}

TEST_CASE("backward from a non-scalar root throws") {
  auto x = Value::parameter(Tensor({2}, {1, 2}));
  CHECK_THROWS_AS(backward(square(x)), ShapeError);
}

TEST_CASE("sgd_step") {
  auto theta = Value::parameter(Tensor({1}, {1}));
  backward(sum(mul(theta, 2.0f)));
  std::vector<Value> ps{theta};
  SUBCASE("lr 0.1") {
    sgd_step(ps, 0.1f);
    CHECK(theta.data()[0] == doctest::Approx(0.8f));
    CHECK(theta.grad()[0] == 2.0f);  // untouched
  }
  SUBCASE("lr 0 is a no-op") {
    sgd_step(ps, 0.0f);
    CHECK(theta.data()[0] == 1.0f);
  }
  SUBCASE("two half steps equal one full step for a constant gradient") {
    sgd_step(ps, 0.05f);
    sgd_step(ps, 0.05f);
    CHECK(theta.data()[0] == doctest::Approx(0.8f));
  }
}

TEST_CASE("no-grad guard records no graph") {
  auto x = Value::parameter(Tensor({1}, {2}));
  Value y;
  {
    NoGradGuard g;
    CHECK(NoGradGuard::active());
    y = square(x);
  }
  CHECK_FALSE(NoGradGuard::active());
  CHECK_FALSE(y.requires_grad());
  CHECK(y.data()[0] == 4.0f);
}

TEST_CASE("shape mismatches throw") {
  auto a = Value::constant(Tensor({2, 3}));
  auto b = Value::constant(Tensor({4}));
  CHECK_THROWS_AS(add(a, b), ShapeError);
  CHECK_THROWS_AS(matmul(a, a), ShapeError);
  CHECK_THROWS_AS(pairwise_sq_dist(a, Value::constant(Tensor({2, 2}))), ShapeError);
  CHECK_THROWS_AS(conv2d(Value::constant(Tensor({1, 3, 4, 4})), Value::constant(Tensor({2, 2, 3, 3})),
                         Value::constant(Tensor({2})), {}),
                  ShapeError);
}

TEST_CASE("pairwise_sq_dist gives exactly zero for identical rows") {
  Rng rng(4);
  const Tensor t = random_tensor({3, 5}, rng);
  const auto d = pairwise_sq_dist(Value::constant(t), Value::constant(t));
  for (int i = 0; i < 3; ++i) CHECK(d.data()[i * 3 + i] == 0.0f);
}

TEST_CASE("adaptive pooling 8 to 7 uses overlapping windows") {
  Tensor x({1, 1, 8, 8});
  for (int i = 0; i < 64; ++i) x[i] = static_cast<float>(i);
  const auto y = adaptive_avg_pool2d(Value::constant(x), 7, 7);
  REQUIRE(y.shape() == Shape{1, 1, 7, 7});
  // window rows [0,2) x cols [0,2)
  CHECK(y.data()[0] == doctest::Approx((0 + 1 + 8 + 9) / 4.0));
  // last window rows [6,8) x cols [6,8)
  CHECK(y.data()[48] == doctest::Approx((54 + 55 + 62 + 63) / 4.0));
}

TEST_CASE("op gradients match finite differences") {
  Rng rng(12);
  SUBCASE("conv2d stride 1 and 2") {
    for (int stride : {1, 2})
      for (int pad : {0, 1}) {
        CAPTURE(stride);
        CAPTURE(pad);
        CHECK(grad_error([&](std::vector<Value>& v) { return sum(square(conv2d(v[0], v[1], v[2], {stride, pad}))); },
                         {random_tensor({2, 2, 5, 5}, rng), random_tensor({3, 2, 3, 3}, rng), random_tensor({3}, rng)}) <
              1e-2);
      }
  }
  SUBCASE("matmul") {
    CHECK(grad_error([](std::vector<Value>& v) { return sum(square(matmul(v[0], v[1]))); },
                     {random_tensor({3, 4}, rng), random_tensor({4, 2}, rng)}) < 1e-2);
  }
  SUBCASE("pooling, sigmoid, layout") {
    CHECK(grad_error([](std::vector<Value>& v) {
            return sum(square(nchw_to_rows(sigmoid(adaptive_avg_pool2d(v[0], 3, 3)))));
          },
                     {random_tensor({2, 3, 4, 4}, rng)}) < 1e-2);
  }
  SUBCASE("elementwise and broadcasting") {
    CHECK(grad_error([](std::vector<Value>& v) {
            return mean(add(mul(exp(v[0]), v[1]), div(v[1], add(abs(v[0]), 1.5f))));
          },
                     {random_tensor({2, 3}, rng), random_tensor({3}, rng)}) < 1e-2);
    CHECK(grad_error([](std::vector<Value>& v) { return sum(log(add(square(v[0]), 0.5f))); },
                     {random_tensor({4}, rng)}) < 1e-2);
  }
  SUBCASE("relu away from the kink") {
    Tensor x({6}, {-0.9f, -0.4f, -0.2f, 0.3f, 0.6f, 0.8f});
    CHECK(grad_error([](std::vector<Value>& v) { return sum(square(relu(v[0]))); }, {x}) < 1e-2);
  }
  SUBCASE("cross-entropy") {
    const std::vector<int> labels{0, 2, 1};
    CHECK(grad_error([&](std::vector<Value>& v) { return softmax_cross_entropy(v[0], labels); },
                     {random_tensor({3, 3}, rng)}) < 1e-2);
  }
  SUBCASE("pairwise distances and row selection") {
    const std::vector<std::int64_t> rows{2, 0};
    CHECK(grad_error([&](std::vector<Value>& v) { return sum(pairwise_sq_dist(v[0], select_rows(v[1], rows))); },
                     {random_tensor({4, 3}, rng), random_tensor({3, 3}, rng)}) < 1e-2);
  }
}

TEST_CASE("softmax cross-entropy of confident correct logits is near zero") {
  const auto ce = softmax_cross_entropy(Value::constant(Tensor({2, 2}, {40, 0, 0, 40})), std::vector<int>{0, 1});
  CHECK(ce.item() == doctest::Approx(0.0f).epsilon(1e-6));
}

}  // TEST_SUITE
